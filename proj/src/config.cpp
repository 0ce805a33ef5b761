#include "vmus/config.hpp"

#include <fstream>
#include <set>

#include "vmus/error.hpp"

namespace vmus {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
    if (!j.is_object()) throw InvalidArgument("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) {
            throw InvalidArgument("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& target, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        target = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidArgument("config key '" + section + "." + key + "': " + e.what());
    }
}

json schedule_json(const StageSchedule& s) {
    return json{{"peak_lr", s.peak_lr}, {"warmup_steps", s.warmup_steps}, {"epochs", s.epochs}};
}

void read_schedule(const json& j, StageSchedule& s, const std::string& section) {
    check_keys(j, {"peak_lr", "warmup_steps", "epochs"}, section);
    read(j, "peak_lr", s.peak_lr, section);
    read(j, "warmup_steps", s.warmup_steps, section);
    read(j, "epochs", s.epochs, section);
}

}  // namespace

void RunConfig::validate() const {
    scenario.validate();
    model_config().validate();
    if (scenario.seed != seed) throw InvalidArgument("scenario seed must equal the run seed");
    if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
    if (!(tol > 0.0)) throw InvalidArgument("--tol must be > 0");
    if (!(cut_threshold > 0.0 && cut_threshold < 2.0)) throw InvalidArgument("cut_threshold must lie in (0, 2)");
    if (sampling != "greedy" && sampling != "top-k") throw InvalidArgument("sampling must be greedy or top-k");
    if (sampling == "top-k" && (top_k == 0 || !(temperature > 0.0))) {
        throw InvalidArgument("top-k sampling needs k >= 1 and temperature > 0");
    }
    if (jobs == 0) throw InvalidArgument("--jobs must be >= 1");
    if (stage != 1 && stage != 2) throw InvalidArgument("--stage must be 1 or 2");
    for (const StageSchedule* s : {&stage0, &stage1, &stage2}) {
        if (!(s->peak_lr > 0.0) || s->warmup_steps < 1) throw InvalidArgument("stage schedules need peak_lr > 0 and warmup_steps >= 1");
    }
}

json RunConfig::to_json() const {
    const ScenarioSpec& s = scenario;
    return json{
        {"command", command},
        {"seed", seed},
        {"out", out},
        {"scenario",
         {{"n_classes", s.n_classes},
          {"clip_seconds", s.clip_seconds},
          {"patches", s.patches},
          {"d_vis", s.d_vis},
          {"shot_min", s.shot_min},
          {"shot_max", s.shot_max},
          {"rho", s.rho},
          {"sigma", s.sigma},
          {"noise_smoothness", s.noise_smoothness},
          {"beat_period", s.beat_period},
          {"vocab_size", s.vocab_size},
          {"n_beat_tokens", s.n_beat_tokens},
          {"band_width", s.band_width},
          {"band_mass", s.band_mass},
          {"local_fps", s.local_fps},
          {"global_fps", s.global_fps},
          {"token_rate", s.token_rate},
          {"n_train", n_train},
          {"n_test", n_test}}},
        {"model",
         {{"d_model", model.backbone.d_model},
          {"n_blocks", model.backbone.n_blocks},
          {"layers_per_block", model.backbone.layers_per_block},
          {"n_heads", model.backbone.n_heads},
          {"d_ff", model.backbone.d_ff},
          {"encoder_layers", model.encoder.n_layers},
          {"encoder_heads", model.encoder.n_heads},
          {"encoder_d_ff", model.encoder.d_ff},
          {"embed_hidden", model.embed_hidden},
          {"lora_rank", model.lora_rank},
          {"lora_alpha", model.lora_alpha}}},
        {"train",
         {{"batch_size", batch_size},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"weight_decay", optimizer.weight_decay},
          {"eps", optimizer.eps},
          {"cond_dropout", cond_dropout},
          {"stage", stage},
          {"stage0", schedule_json(stage0)},
          {"stage1", schedule_json(stage1)},
          {"stage2", schedule_json(stage2)}}},
        {"ablation",
         {{"encoder_from_scratch", encoder_from_scratch},
          {"no_init_technique", no_init_technique},
          {"single_stage", single_stage},
          {"rhythm_source", to_string(rhythm_source)},
          {"rhythm_mode", to_string(rhythm_mode)},
          {"grid", grid}}},
        {"eval",
         {{"tol", tol},
          {"cut_threshold", cut_threshold},
          {"sampling", sampling},
          {"top_k", top_k},
          {"temperature", temperature},
          {"jobs", jobs},
          {"no_semantic", no_semantic},
          {"ground_truth", ground_truth}}},
        {"inputs", {{"ckpt", ckpt}, {"manifest", manifest}, {"test_manifest", test_manifest}, {"clip", clip}}},
    };
}

void RunConfig::merge_json(const json& j) {
    check_keys(j, {"command", "seed", "out", "scenario", "model", "train", "ablation", "eval", "inputs"}, "");
    read(j, "command", command, "");
    read(j, "seed", seed, "");
    read(j, "out", out, "");
    scenario.seed = seed;
    if (j.contains("scenario")) {
        const json& s = j.at("scenario");
        check_keys(s, {"n_classes", "clip_seconds", "patches", "d_vis", "shot_min", "shot_max", "rho", "sigma",
                       "noise_smoothness", "beat_period", "vocab_size", "n_beat_tokens", "band_width", "band_mass",
                       "local_fps", "global_fps", "token_rate", "n_train", "n_test"},
                   "scenario");
        read(s, "n_classes", scenario.n_classes, "scenario");
        read(s, "clip_seconds", scenario.clip_seconds, "scenario");
        read(s, "patches", scenario.patches, "scenario");
        read(s, "d_vis", scenario.d_vis, "scenario");
        read(s, "shot_min", scenario.shot_min, "scenario");
        read(s, "shot_max", scenario.shot_max, "scenario");
        read(s, "rho", scenario.rho, "scenario");
        read(s, "sigma", scenario.sigma, "scenario");
        read(s, "noise_smoothness", scenario.noise_smoothness, "scenario");
        read(s, "beat_period", scenario.beat_period, "scenario");
        read(s, "vocab_size", scenario.vocab_size, "scenario");
        read(s, "n_beat_tokens", scenario.n_beat_tokens, "scenario");
        read(s, "band_width", scenario.band_width, "scenario");
        read(s, "band_mass", scenario.band_mass, "scenario");
        read(s, "local_fps", scenario.local_fps, "scenario");
        read(s, "global_fps", scenario.global_fps, "scenario");
        read(s, "token_rate", scenario.token_rate, "scenario");
        read(s, "n_train", n_train, "scenario");
        read(s, "n_test", n_test, "scenario");
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"d_model", "n_blocks", "layers_per_block", "n_heads", "d_ff", "encoder_layers", "encoder_heads",
                       "encoder_d_ff", "embed_hidden", "lora_rank", "lora_alpha"},
                   "model");
        read(m, "d_model", model.backbone.d_model, "model");
        read(m, "n_blocks", model.backbone.n_blocks, "model");
        read(m, "layers_per_block", model.backbone.layers_per_block, "model");
        read(m, "n_heads", model.backbone.n_heads, "model");
        read(m, "d_ff", model.backbone.d_ff, "model");
        read(m, "encoder_layers", model.encoder.n_layers, "model");
        read(m, "encoder_heads", model.encoder.n_heads, "model");
        read(m, "encoder_d_ff", model.encoder.d_ff, "model");
        read(m, "embed_hidden", model.embed_hidden, "model");
        read(m, "lora_rank", model.lora_rank, "model");
        read(m, "lora_alpha", model.lora_alpha, "model");
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, {"batch_size", "beta1", "beta2", "weight_decay", "eps", "cond_dropout", "stage", "stage0", "stage1",
                       "stage2"},
                   "train");
        read(t, "batch_size", batch_size, "train");
        read(t, "beta1", optimizer.beta1, "train");
        read(t, "beta2", optimizer.beta2, "train");
        read(t, "weight_decay", optimizer.weight_decay, "train");
        read(t, "eps", optimizer.eps, "train");
        read(t, "cond_dropout", cond_dropout, "train");
        read(t, "stage", stage, "train");
        if (t.contains("stage0")) read_schedule(t.at("stage0"), stage0, "train.stage0");
        if (t.contains("stage1")) read_schedule(t.at("stage1"), stage1, "train.stage1");
        if (t.contains("stage2")) read_schedule(t.at("stage2"), stage2, "train.stage2");
    }
    if (j.contains("ablation")) {
        const json& a = j.at("ablation");
        check_keys(a, {"encoder_from_scratch", "no_init_technique", "single_stage", "rhythm_source", "rhythm_mode", "grid"},
                   "ablation");
        read(a, "encoder_from_scratch", encoder_from_scratch, "ablation");
        read(a, "no_init_technique", no_init_technique, "ablation");
        read(a, "single_stage", single_stage, "ablation");
        read(a, "grid", grid, "ablation");
        std::string text;
        if (a.contains("rhythm_source")) {
            read(a, "rhythm_source", text, "ablation");
            rhythm_source = parse_rhythm_source(text);
        }
        if (a.contains("rhythm_mode")) {
            read(a, "rhythm_mode", text, "ablation");
            rhythm_mode = parse_rhythm_mode(text);
        }
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, {"tol", "cut_threshold", "sampling", "top_k", "temperature", "jobs", "no_semantic", "ground_truth"},
                   "eval");
        read(e, "tol", tol, "eval");
        read(e, "cut_threshold", cut_threshold, "eval");
        read(e, "sampling", sampling, "eval");
        read(e, "top_k", top_k, "eval");
        read(e, "temperature", temperature, "eval");
        read(e, "jobs", jobs, "eval");
        read(e, "no_semantic", no_semantic, "eval");
        read(e, "ground_truth", ground_truth, "eval");
    }
    if (j.contains("inputs")) {
        const json& in = j.at("inputs");
        check_keys(in, {"ckpt", "manifest", "test_manifest", "clip"}, "inputs");
        read(in, "ckpt", ckpt, "inputs");
        read(in, "manifest", manifest, "inputs");
        read(in, "test_manifest", test_manifest, "inputs");
        read(in, "clip", clip, "inputs");
    }
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidArgument("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    RunConfig c;
    c.merge_json(j);
    return c;
}

TrainConfig RunConfig::train_config(int s) const {
    TrainConfig t;
    t.stage = s;
    t.schedule = s == 0 ? stage0 : s == 1 ? stage1 : stage2;
    t.optimizer = optimizer;
    t.batch_size = batch_size;
    t.seed = seed;
    t.cond_dropout = cond_dropout;
    t.encoder_from_scratch = encoder_from_scratch;
    t.no_init_technique = no_init_technique;
    t.single_stage = single_stage;
    t.rhythm_source = rhythm_source;
    t.rhythm_mode = rhythm_mode;
    return t;
}

Sampling RunConfig::sampling_mode() const {
    return sampling == "greedy" ? Sampling::greedy() : Sampling::top_k(top_k, temperature);
}

EvalSettings RunConfig::eval_settings() const {
    EvalSettings e;
    e.tol = tol;
    e.cut_threshold = cut_threshold;
    e.sampling = sampling_mode();
    e.jobs = jobs;
    e.use_semantic = !no_semantic;
    e.rhythm_source = rhythm_source;
    e.seed = seed;
    return e;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m = model;
    m.backbone.vocab_size = scenario.vocab_size;
    m.backbone.token_rate = scenario.token_rate;
    m.backbone.max_seconds = scenario.clip_seconds;
    m.encoder.d_model = m.backbone.d_model;
    m.encoder.n_prompts = scenario.n_classes;
    m.d_vis = scenario.d_vis;
    m.prompt_length = scenario.global_frames();
    m.embedding_manager = m.lora = m.rhythm = false;
    return m;
}

}  // namespace vmus
