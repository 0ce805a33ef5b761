#include "vmus/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "vmus/error.hpp"

namespace vmus {

using nlohmann::json;

std::vector<double> detect_cuts(const LocalFeatureSeq& local, double threshold) {
    if (!(threshold > 0.0 && threshold < 2.0)) throw InvalidArgument("cut threshold must lie in (0, 2)");
    const std::vector<double> sim = mean_patch_similarity(local);
    std::vector<double> cuts;
    for (std::size_t i = 0; i < sim.size(); ++i) {
        const double d = 1.0 - sim[i];
        if (d <= threshold) continue;
        const bool left = i == 0 || d >= 1.0 - sim[i - 1];
        const bool right = i + 1 == sim.size() || d > 1.0 - sim[i + 1];
        if (left && right) cuts.push_back(static_cast<double>(i + 1) / local.fps);
    }
    return cuts;
}

std::vector<double> extract_beats(std::span<const int> tokens, double token_rate, std::span<const int> beat_subset) {
    if (!(token_rate > 0.0)) throw InvalidArgument("token_rate must be > 0");
    if (beat_subset.empty()) throw InvalidArgument("beat token subset is empty");
    std::vector<double> beats;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (std::find(beat_subset.begin(), beat_subset.end(), tokens[i]) != beat_subset.end()) {
            beats.push_back(static_cast<double>(i) / token_rate);
        }
    }
    return beats;
}

double rhythm_recall(std::span<const double> cuts, std::span<const double> beats, double tol) {
    if (cuts.empty()) throw InvalidArgument("no cuts: clip is excluded from rhythm recall");
    if (!(tol > 0.0)) throw InvalidArgument("tolerance must be > 0");
    std::vector<double> sorted(beats.begin(), beats.end());
    std::sort(sorted.begin(), sorted.end());
    std::size_t hit = 0;
    for (double c : cuts) {
        auto it = std::lower_bound(sorted.begin(), sorted.end(), c - tol);
        if (it != sorted.end() && *it - c <= tol) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(cuts.size());
}

SemanticProxy::SemanticProxy(Tensor class_distributions, std::vector<int> beat_subset)
    : log_p_(std::move(class_distributions)) {
    if (log_p_.rank() != 2 || log_p_.rows() == 0) throw InvalidArgument("class distributions must be a non-empty matrix");
    is_beat_.assign(log_p_.cols(), false);
    for (int b : beat_subset) {
        if (b < 0 || static_cast<std::size_t>(b) >= log_p_.cols()) throw InvalidArgument("beat token outside vocabulary");
        is_beat_[static_cast<std::size_t>(b)] = true;
    }
    for (double& v : log_p_.values()) v = v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
}

std::vector<double> SemanticProxy::scores(std::span<const int> tokens) const {
    std::vector<double> s(classes(), 0.0);
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= log_p_.cols()) {
            throw InvalidArgument("token " + std::to_string(t) + " outside vocabulary");
        }
        if (is_beat_[static_cast<std::size_t>(t)]) continue;
        for (std::size_t c = 0; c < classes(); ++c) s[c] += log_p_(c, static_cast<std::size_t>(t));
    }
    return s;
}

int SemanticProxy::predict(std::span<const int> tokens) const {
    const auto s = scores(tokens);
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.size(); ++c)
        if (s[c] > s[best]) best = c;
    return static_cast<int>(best);
}

std::string SimilarityTrace::csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "frame,global_sim,local_sim\n";
    for (std::size_t f = 0; f < local_sim.size(); ++f) out << f << ',' << global_sim[f] << ',' << local_sim[f] << '\n';
    return out.str();
}

SimilarityTrace similarity_traces(const ClipRecord& clip) {
    const LocalFeatureSeq& local = clip.local;
    const std::vector<double> sim = mean_patch_similarity(local);
    const std::vector<double> gsim = global_similarity(clip.global.features);
    const double per_global = local.fps / clip.global.fps;
    auto global_index = [&](std::size_t f) {
        return std::min(clip.global.features.rows() - 1,
                        static_cast<std::size_t>(std::floor(static_cast<double>(f) / per_global + 1e-9)));
    };
    SimilarityTrace tr;
    tr.local_sim.push_back(1.0);
    tr.global_sim.push_back(1.0);
    for (std::size_t f = 1; f < local.frames(); ++f) {
        tr.local_sim.push_back(sim[f - 1]);
        const std::size_t a = global_index(f - 1), b = global_index(f);
        tr.global_sim.push_back(a == b ? 1.0 : gsim[a]);
    }
    tr.relation_holds = true;
    for (double t : clip.cut_times) {
        const auto f = static_cast<std::size_t>(std::llround(t * local.fps));
        if (f == 0 || f >= local.frames()) continue;
        tr.cut_frames.push_back(f);
        if (!(tr.local_sim[f] < tr.global_sim[f])) tr.relation_holds = false;
    }
    return tr;
}

json EvalReport::to_json() const {
    json per = json::array();
    for (const ClipEval& c : clips) {
        per.push_back(json{{"clip_id", c.clip_id},
                           {"class", c.label},
                           {"predicted_class", c.predicted},
                           {"semantic_correct", c.semantic_correct},
                           {"n_cuts", c.n_cuts},
                           {"n_beats", c.n_beats},
                           {"rhythm_recall", c.rhythm_recall ? json(*c.rhythm_recall) : json(nullptr)}});
    }
    return json{{"source", source},
                {"aggregate",
                 {{"mean_rhythm_recall", mean_recall},
                  {"semantic_proxy_accuracy", proxy_accuracy},
                  {"n_clips", n_clips},
                  {"n_recall_clips", n_recall_clips}}},
                {"note", "semantic_proxy_accuracy is a token-statistics proxy, not an audio-text alignment score"},
                {"clips", per}};
}

EvalReport summarize(std::vector<ClipEval> clips, std::string source) {
    EvalReport r;
    r.source = std::move(source);
    r.n_clips = clips.size();
    double recall = 0.0;
    std::size_t correct = 0;
    for (const ClipEval& c : clips) {
        if (c.semantic_correct) ++correct;
        if (c.rhythm_recall) {
            recall += *c.rhythm_recall;
            ++r.n_recall_clips;
        }
    }
    r.mean_recall = r.n_recall_clips ? recall / static_cast<double>(r.n_recall_clips) : 0.0;
    r.proxy_accuracy = r.n_clips ? static_cast<double>(correct) / static_cast<double>(r.n_clips) : 0.0;
    r.clips = std::move(clips);
    return r;
}

ClipEval score_clip(const ClipRecord& clip, std::vector<int> tokens, const ScenarioSpec& spec,
                    const EvalSettings& settings) {
    ClipEval e;
    e.clip_id = clip.clip_id;
    e.label = clip.label;
    const SemanticProxy proxy(spec);
    e.predicted = proxy.predict(tokens);
    e.semantic_correct = e.predicted == clip.label;
    const std::vector<int> subset = spec.beat_tokens();
    const std::vector<double> cuts = detect_cuts(clip.local, settings.cut_threshold);
    const std::vector<double> beats = extract_beats(tokens, spec.token_rate, subset);
    e.n_cuts = cuts.size();
    e.n_beats = beats.size();
    if (!cuts.empty()) e.rhythm_recall = rhythm_recall(cuts, beats, settings.tol);
    e.tokens = std::move(tokens);
    return e;
}

EvalReport evaluate_ground_truth(const std::vector<ClipRecord>& clips, const ScenarioSpec& spec,
                                 const EvalSettings& settings) {
    std::vector<ClipEval> out;
    for (const ClipRecord& c : clips) out.push_back(score_clip(c, c.tokens, spec, settings));
    return summarize(std::move(out), "ground-truth");
}

std::vector<int> generate_for_clip(const VideoMusicModel& model, const ClipRecord& clip, const EvalSettings& settings) {
    ModelInput in;
    if (settings.use_semantic && model.config().embedding_manager) {
        in.semantic = SemanticSource::video;
        in.global = &clip.global;
    }
    DistanceSequence d;
    if (settings.use_rhythm && model.config().rhythm) {
        d = rhythm_distance(clip, settings.rhythm_source, model.config().backbone.token_rate);
        in.distance = &d;
    }
    const auto length = static_cast<std::size_t>(std::llround(clip.seconds * model.config().backbone.token_rate));
    Rng rng(settings.seed, "generate/" + clip.clip_id);
    return model.generate(in, length, settings.sampling, rng);
}

EvalReport evaluate_model(const VideoMusicModel& model, const std::vector<ClipRecord>& clips, const ScenarioSpec& spec,
                          const EvalSettings& settings) {
    std::vector<ClipEval> out(clips.size());
    std::vector<std::exception_ptr> errors(clips.size());
    auto work = [&](std::size_t worker, std::size_t workers) {
        for (std::size_t i = worker; i < clips.size(); i += workers) {
            try {
                out[i] = score_clip(clips[i], generate_for_clip(model, clips[i], settings), spec, settings);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(settings.jobs, clips.size()));
    if (jobs == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(work, w, jobs);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::string source = "model";
    if (!settings.use_semantic || !model.config().embedding_manager) source += " (no semantic condition)";
    return summarize(std::move(out), source);
}

}  // namespace vmus
