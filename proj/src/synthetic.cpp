#include "vmus/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "vmus/container.hpp"
#include "vmus/error.hpp"

namespace vmus {

namespace {

using nlohmann::json;

bool is_whole(double x) { return std::abs(x - std::round(x)) < 1e-9; }

std::size_t whole(double x) { return static_cast<std::size_t>(std::llround(x)); }

void normalize(std::span<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
}

std::vector<double> random_unit(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    normalize(v);
    return v;
}

}  // namespace

void ScenarioSpec::validate() const {
    auto fail = [](const std::string& m) { throw InvalidArgument("invalid scenario: " + m); };
    if (n_classes == 0) fail("n_classes must be >= 1");
    if (!(clip_seconds > 0.0)) fail("clip_seconds must be > 0");
    if (patches == 0 || d_vis < 2) fail("patches >= 1 and d_vis >= 2 required");
    if (!(rho > 0.0 && rho <= 1.0)) fail("rho must lie in (0, 1]");
    if (!(sigma >= 0.0)) fail("sigma must be >= 0");
    if (!(noise_smoothness >= 0.0 && noise_smoothness < 1.0)) fail("noise_smoothness must lie in [0, 1)");
    if (!(local_fps > 0.0) || !(global_fps > 0.0) || !(token_rate > 0.0)) fail("rates must be > 0");
    if (std::abs(token_rate - 2.0 * local_fps) > 1e-9) fail("token_rate must be twice local_fps");
    if (!is_whole(clip_seconds * local_fps)) fail("clip_seconds must be a whole number of local frames");
    if (!(beat_period > 0.0) || !is_whole(beat_period * token_rate)) fail("beat_period must be a whole number of tokens");
    const double grid = cut_grid();
    if (!(shot_min > 0.0) || shot_max < shot_min) fail("need 0 < shot_min <= shot_max");
    if (!is_whole(shot_min / grid) || !is_whole(shot_max / grid)) {
        fail("shot lengths must be multiples of the cut grid (" + std::to_string(grid) + " s)");
    }
    if (n_beat_tokens < 2 || n_beat_tokens >= vocab_size) fail("need 2 <= n_beat_tokens < vocab_size");
    if (band_width == 0 || n_classes * band_width > content_tokens()) fail("class bands do not fit in content tokens");
    if (!(band_mass > 0.0 && band_mass <= 1.0)) fail("band_mass must lie in (0, 1]");
    if (band_mass < 1.0 && content_tokens() == band_width) fail("no off-band tokens for the residual mass");
}

std::size_t ScenarioSpec::local_frames() const { return whole(clip_seconds * local_fps); }
std::size_t ScenarioSpec::global_frames() const {
    return static_cast<std::size_t>(std::ceil(clip_seconds * global_fps - 1e-9));
}
std::size_t ScenarioSpec::token_count() const { return whole(clip_seconds * token_rate); }

std::vector<int> ScenarioSpec::beat_tokens() const {
    std::vector<int> out;
    for (std::size_t i = content_tokens(); i < vocab_size; ++i) out.push_back(static_cast<int>(i));
    return out;
}

double ScenarioSpec::cut_grid() const {
    // lcm of the beat period and the frame period, in token units.
    const std::size_t beat = whole(beat_period * token_rate);
    const std::size_t frame = whole(token_rate / local_fps);
    return static_cast<double>(std::lcm(beat, frame)) / token_rate;
}

Tensor ScenarioSpec::class_distributions() const {
    Tensor p = Tensor::matrix(n_classes, vocab_size);
    const std::size_t content = content_tokens();
    const double off = content > band_width ? (1.0 - band_mass) / static_cast<double>(content - band_width) : 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t t = 0; t < content; ++t) {
            const bool in_band = t >= c * band_width && t < (c + 1) * band_width;
            p(c, t) = in_band ? band_mass / static_cast<double>(band_width) : off;
        }
    }
    return p;
}

Tensor ScenarioSpec::class_centroids() const {
    Rng rng(seed, "centroids");
    Tensor c = Tensor::matrix(n_classes, d_vis);
    for (std::size_t k = 0; k < n_classes; ++k) {
        const auto v = random_unit(d_vis, rng);
        std::copy(v.begin(), v.end(), c.row(k).begin());
    }
    return c;
}

ClipRecord generate_clip(const ScenarioSpec& spec, const std::string& clip_id, int label, Rng& rng) {
    spec.validate();
    if (label < 0 || static_cast<std::size_t>(label) >= spec.n_classes) {
        throw InvalidArgument("label " + std::to_string(label) + " outside [0, " + std::to_string(spec.n_classes) + ")");
    }
    const std::size_t n_tokens = spec.token_count();
    const std::size_t n_frames = spec.local_frames();
    const std::size_t n_global = spec.global_frames();
    const std::size_t K = spec.patches;
    const std::size_t D = spec.d_vis;
    const std::size_t tokens_per_frame = whole(spec.token_rate / spec.local_fps);
    const std::size_t beat_tokens = whole(spec.beat_period * spec.token_rate);
    const std::size_t grid_tokens = whole(spec.cut_grid() * spec.token_rate);

    ClipRecord clip;
    clip.clip_id = clip_id;
    clip.label = label;
    clip.seconds = spec.clip_seconds;

    // Beat grid with a random phase that keeps grid-aligned beats on frames.
    const std::size_t phase = tokens_per_frame * rng.index(beat_tokens / tokens_per_frame + (beat_tokens % tokens_per_frame ? 1 : 0));
    std::vector<std::size_t> beat_index;
    for (std::size_t t = phase; t < n_tokens; t += beat_tokens) beat_index.push_back(t);

    // Cuts: successive shot lengths drawn in whole cut-grid units.
    const std::size_t min_units = whole(spec.shot_min / spec.cut_grid());
    const std::size_t max_units = whole(spec.shot_max / spec.cut_grid());
    std::set<std::size_t> cut_tokens;
    for (std::size_t t = phase;;) {
        t += grid_tokens * (min_units + rng.index(max_units - min_units + 1));
        if (t >= n_tokens) break;
        cut_tokens.insert(t);
    }
    std::set<std::size_t> cut_frames;
    for (std::size_t t : cut_tokens) cut_frames.insert(t / tokens_per_frame);

    // Local features: persistent per-patch bases plus smooth AR(1) noise.
    Tensor local(Shape{n_frames, K, D});
    std::vector<std::vector<double>> base(K), noise(K, std::vector<double>(D));
    for (auto& b : base) b = random_unit(D, rng);
    for (auto& n : noise)
        for (double& x : n) x = rng.normal();
    const double a = spec.noise_smoothness;
    const double innov = std::sqrt(1.0 - a * a);
    const std::size_t resampled = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.rho * static_cast<double>(K))));
    for (std::size_t f = 0; f < n_frames; ++f) {
        if (f > 0) {
            for (auto& n : noise)
                for (double& x : n) x = a * x + innov * rng.normal();
        }
        if (cut_frames.contains(f)) {
            std::vector<std::size_t> order(K);
            for (std::size_t k = 0; k < K; ++k) order[k] = k;
            rng.shuffle(order);
            for (std::size_t i = 0; i < resampled; ++i) base[order[i]] = random_unit(D, rng);
        }
        for (std::size_t k = 0; k < K; ++k) {
            std::span<double> r(local.data() + (f * K + k) * D, D);
            for (std::size_t i = 0; i < D; ++i) r[i] = base[k][i] + spec.sigma * noise[k][i];
            normalize(r);
        }
    }
    clip.local = LocalFeatureSeq{std::move(local), spec.local_fps, clip_id};

    // Global features: class centroid plus isotropic noise.
    const Tensor centroids = spec.class_centroids();
    Tensor global = Tensor::matrix(n_global, D);
    for (std::size_t s = 0; s < n_global; ++s) {
        auto row = global.row(s);
        for (std::size_t i = 0; i < D; ++i) row[i] = centroids(static_cast<std::size_t>(label), i) + spec.sigma * rng.normal();
        normalize(row);
    }
    clip.global = GlobalFeatureSeq{std::move(global), spec.global_fps, clip_id};

    // Tokens.
    const Tensor dist = spec.class_distributions();
    const auto probs = dist.row(static_cast<std::size_t>(label));
    const std::vector<int> beats = spec.beat_tokens();
    std::set<std::size_t> beat_set(beat_index.begin(), beat_index.end());
    clip.tokens.resize(n_tokens);
    for (std::size_t t = 0; t < n_tokens; ++t) {
        if (beat_set.contains(t)) {
            clip.tokens[t] = cut_tokens.contains(t) ? spec.accent_token() : beats[1 + rng.index(beats.size() - 1)];
            continue;
        }
        const double u = rng.uniform();
        double acc = 0.0;
        int pick = static_cast<int>(spec.content_tokens()) - 1;
        for (std::size_t v = 0; v < spec.content_tokens(); ++v) {
            acc += probs[v];
            if (u < acc) {
                pick = static_cast<int>(v);
                break;
            }
        }
        clip.tokens[t] = pick;
    }
    for (std::size_t f : cut_frames) clip.cut_times.push_back(static_cast<double>(f) / spec.local_fps);
    for (std::size_t t : beat_index) clip.beat_times.push_back(static_cast<double>(t) / spec.token_rate);
    return clip;
}

namespace {

json clip_metadata(const ClipRecord& clip) {
    return json{{"clip_id", clip.clip_id},
                {"class", clip.label},
                {"seconds", clip.seconds},
                {"local_fps", clip.local.fps},
                {"global_fps", clip.global.fps},
                {"cuts", clip.cut_times},
                {"beats", clip.beat_times}};
}

Tensor tokens_tensor(const std::vector<int>& tokens) {
    Tensor t(Shape{tokens.size()});
    for (std::size_t i = 0; i < tokens.size(); ++i) t[i] = tokens[i];
    return t;
}

}  // namespace

void write_tokens(const std::filesystem::path& path, const std::vector<int>& tokens, const std::string& clip_id) {
    Container c;
    c.config_json = json{{"clip_id", clip_id}, {"length", tokens.size()}}.dump();
    c.arrays.push_back({"tokens", tokens_tensor(tokens), false});
    write_container(path, c);
}

std::vector<int> read_tokens(const std::filesystem::path& path) {
    const Container c = read_container(path);
    const Tensor& t = c.get("tokens").value;
    std::vector<int> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = t[i];
        if (v != std::floor(v) || v < 0) throw ContainerError(ContainerError::Kind::corrupt, "non-integer token in '" + path.string() + "'", "tokens");
        out[i] = static_cast<int>(v);
    }
    return out;
}

void write_clip(const ClipRecord& clip, const std::filesystem::path& feature_file,
                const std::filesystem::path& token_file) {
    Container c;
    c.config_json = clip_metadata(clip).dump();
    c.arrays.push_back({"global", clip.global.features, false});
    c.arrays.push_back({"local", clip.local.features, false});
    write_container(feature_file, c);
    write_tokens(token_file, clip.tokens, clip.clip_id);
}

ClipRecord read_clip(const std::filesystem::path& feature_file, const std::filesystem::path& token_file) {
    const Container c = read_container(feature_file);
    json meta;
    try {
        meta = json::parse(c.config_json);
    } catch (const json::exception& e) {
        throw ContainerError(ContainerError::Kind::corrupt, "bad clip metadata in '" + feature_file.string() + "': " + e.what());
    }
    ClipRecord clip;
    clip.clip_id = meta.at("clip_id").get<std::string>();
    clip.label = meta.at("class").get<int>();
    clip.seconds = meta.at("seconds").get<double>();
    clip.cut_times = meta.at("cuts").get<std::vector<double>>();
    clip.beat_times = meta.at("beats").get<std::vector<double>>();
    clip.global = GlobalFeatureSeq{c.get("global").value, meta.value("global_fps", 1.0), clip.clip_id};
    clip.local = LocalFeatureSeq{c.get("local").value, meta.value("local_fps", 25.0), clip.clip_id};
    if (clip.local.features.rank() != 3 || clip.global.features.rank() != 2) {
        throw ContainerError(ContainerError::Kind::shape_mismatch, "clip feature arrays have the wrong rank", "local");
    }
    if (!token_file.empty()) clip.tokens = read_tokens(token_file);
    return clip;
}

DatasetPaths generate_dataset(const ScenarioSpec& spec, std::size_t n_train, std::size_t n_test,
                              const std::filesystem::path& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir / "clips", ec);
    if (ec) throw IoError("cannot create '" + (out_dir / "clips").string() + "': " + ec.message());
    DatasetPaths paths{out_dir / "train.jsonl", out_dir / "test.jsonl"};
    auto write_split = [&](const std::string& split, std::size_t count, const fs::path& manifest) {
        std::ofstream m(manifest, std::ios::binary | std::ios::trunc);
        if (!m) throw IoError("cannot write manifest '" + manifest.string() + "'");
        for (std::size_t i = 0; i < count; ++i) {
            char id[64];
            std::snprintf(id, sizeof id, "%s-%04zu", split.c_str(), i);
            Rng rng(spec.seed, std::string("clip/") + id);
            const ClipRecord clip = generate_clip(spec, id, static_cast<int>(i % spec.n_classes), rng);
            const std::string feature_rel = std::string("clips/") + id + ".features.vmus";
            const std::string token_rel = std::string("clips/") + id + ".tokens.vmus";
            write_clip(clip, out_dir / feature_rel, out_dir / token_rel);
            json line{{"clip_id", clip.clip_id}, {"class", clip.label},        {"seconds", clip.seconds},
                      {"feature_file", feature_rel}, {"token_file", token_rel}, {"cuts", clip.cut_times},
                      {"beats", clip.beat_times}};
            m << line.dump() << '\n';
        }
        if (!m) throw IoError("write failed for manifest '" + manifest.string() + "'");
    };
    write_split("train", n_train, paths.train_manifest);
    write_split("test", n_test, paths.test_manifest);
    return paths;
}

std::vector<ClipRecord> load_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open manifest '" + manifest.string() + "'");
    const auto dir = manifest.parent_path();
    std::vector<ClipRecord> clips;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InvalidArgument("manifest '" + manifest.string() + "' line " + std::to_string(line_no) + ": " + e.what());
        }
        ClipRecord clip = read_clip(dir / j.at("feature_file").get<std::string>(), dir / j.at("token_file").get<std::string>());
        clip.label = j.at("class").get<int>();
        clip.cut_times = j.at("cuts").get<std::vector<double>>();
        clip.beat_times = j.at("beats").get<std::vector<double>>();
        clips.push_back(std::move(clip));
    }
    return clips;
}

}  // namespace vmus
