#include "vmus/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <optional>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "vmus/ablation.hpp"
#include "vmus/config.hpp"
#include "vmus/error.hpp"

namespace vmus {

namespace fs = std::filesystem;
using nlohmann::json;

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

namespace {

// Bad invocation: unknown or missing inputs, conflicting settings.
class UsageError : public Error {
public:
    using Error::Error;
};

// Removes everything it created unless commit() is called.
class OutputGuard {
public:
    explicit OutputGuard(fs::path dir) : dir_(std::move(dir)) {
        if (!fs::exists(dir_)) {
            std::error_code ec;
            fs::create_directories(dir_, ec);
            if (ec) throw IoError("cannot create output directory '" + dir_.string() + "': " + ec.message());
            created_dir_ = true;
        }
    }
    OutputGuard(const OutputGuard&) = delete;
    OutputGuard& operator=(const OutputGuard&) = delete;
    ~OutputGuard() {
        if (committed_) return;
        std::error_code ec;
        if (created_dir_) {
            fs::remove_all(dir_, ec);
            return;
        }
        for (const fs::path& p : created_) fs::remove_all(p, ec);
    }

    // Registers an output path; returns it for convenience.
    fs::path add(const fs::path& relative) {
        const fs::path p = dir_ / relative;
        if (!fs::exists(p)) created_.push_back(p);
        return p;
    }
    const fs::path& dir() const { return dir_; }
    void commit() { committed_ = true; }

private:
    fs::path dir_;
    bool created_dir_ = false;
    bool committed_ = false;
    std::vector<fs::path> created_;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

// Flag storage shared by every subcommand; options record whether they were given.
struct Flags {
    std::string config, out, ckpt, manifest, test_manifest, clip, rhythm_source, rhythm_mode, sampling;
    std::uint64_t seed = 0;
    std::size_t jobs = 1, top_k = 8, n_train = 0, n_test = 0;
    int stage = 1;
    double tol = 0.1, cut_threshold = 0.4, temperature = 1.0;
    bool encoder_from_scratch = false, no_init_technique = false, single_stage = false, no_semantic = false,
         ground_truth = false, grid = false;
};

struct Options {
    CLI::Option* config = nullptr;
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> setters;
};

class Cli {
public:
    Cli() : app_("Hierarchical video-to-music conditioning at desk scale", "vmus") {
        app_.require_subcommand(1);
        app_.set_help_all_flag("--help-all", "Show help for every subcommand");
        add("synth", "Generate a synthetic dataset", {"n-train", "n-test"});
        add("pretrain", "Stage 0: pre-train backbone and encoder on class prompts", {"manifest"});
        add("train", "Stage 1 or 2 training from a checkpoint",
            {"stage", "ckpt", "manifest", "encoder-from-scratch", "no-init-technique", "single-stage",
             "rhythm-source", "rhythm-mode"});
        add("generate", "Generate a token sequence for one clip",
            {"ckpt", "clip", "no-semantic", "sampling", "top-k", "temperature", "rhythm-source"});
        add("eval", "Evaluate rhythm recall and the semantic proxy on a manifest",
            {"ckpt", "manifest", "ground-truth", "no-semantic", "tol", "cut-threshold", "sampling", "top-k",
             "temperature", "rhythm-source"});
        add("analyze-sim", "Write global/local similarity traces of a clip", {"clip"});
        add("ablate", "Run the ablation grid", {"grid", "ckpt", "manifest", "test-manifest", "tol"});
    }

    int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        try {
            app_.parse(reversed);
        } catch (const CLI::CallForHelp&) {
            out << app_.help();
            return kExitOk;
        } catch (const CLI::CallForAllHelp&) {
            out << app_.help("", CLI::AppFormatMode::All);
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            err << "vmus: " << e.what() << "\n";
            return kExitUsage;
        }
        CLI::App* sub = app_.get_subcommands().front();
        const std::string name = sub->get_name();
        RunConfig cfg;
        try {
            cfg = resolve(name);
        } catch (const Error& e) {
            err << "vmus " << name << ": " << e.what() << "\n";
            return kExitUsage;
        }
        try {
            return dispatch(name, cfg, out, err);
        } catch (const UsageError& e) {
            err << "vmus " << name << ": " << e.what() << "\n";
            return kExitUsage;
        } catch (const std::exception& e) {
            err << "vmus " << name << ": " << e.what() << "\n";
            return kExitFailure;
        }
    }

private:
    void add(const std::string& name, const std::string& help, const std::vector<std::string>& extra) {
        CLI::App* sub = app_.add_subcommand(name, help);
        Options& o = options_[name];
        o.config = sub->add_option("--config", f_.config, "JSON config file (flags override it)");
        auto opt = [&](CLI::Option* option, std::function<void(RunConfig&)> set) { o.setters.emplace_back(option, set); };
        opt(sub->add_option("--seed", f_.seed, "Random seed"), [this](RunConfig& c) { c.seed = f_.seed; });
        opt(sub->add_option("--out", f_.out, "Output directory"), [this](RunConfig& c) { c.out = f_.out; });
        opt(sub->add_option("--jobs", f_.jobs, "Worker threads for evaluation"), [this](RunConfig& c) { c.jobs = f_.jobs; });
        for (const std::string& e : extra) {
            if (e == "n-train") {
                opt(sub->add_option("--n-train", f_.n_train, "Training clips"), [this](RunConfig& c) { c.n_train = f_.n_train; });
            } else if (e == "n-test") {
                opt(sub->add_option("--n-test", f_.n_test, "Held-out clips"), [this](RunConfig& c) { c.n_test = f_.n_test; });
            } else if (e == "manifest") {
                opt(sub->add_option("--manifest", f_.manifest, "Clip manifest (JSONL)"),
                    [this](RunConfig& c) { c.manifest = f_.manifest; });
            } else if (e == "test-manifest") {
                opt(sub->add_option("--test-manifest", f_.test_manifest, "Held-out clip manifest (JSONL)"),
                    [this](RunConfig& c) { c.test_manifest = f_.test_manifest; });
            } else if (e == "ckpt") {
                opt(sub->add_option("--ckpt", f_.ckpt, "Input checkpoint"), [this](RunConfig& c) { c.ckpt = f_.ckpt; });
            } else if (e == "clip") {
                opt(sub->add_option("--clip", f_.clip, "Clip feature file"), [this](RunConfig& c) { c.clip = f_.clip; });
            } else if (e == "stage") {
                opt(sub->add_option("--stage", f_.stage, "Training stage")->check(CLI::IsMember({1, 2})),
                    [this](RunConfig& c) { c.stage = f_.stage; });
            } else if (e == "encoder-from-scratch") {
                opt(sub->add_flag("--encoder-from-scratch", f_.encoder_from_scratch,
                                  "Stage 1: random, fully trainable encoder instead of LoRA on the pre-trained one"),
                    [this](RunConfig& c) { c.encoder_from_scratch = true; });
            } else if (e == "no-init-technique") {
                opt(sub->add_flag("--no-init-technique", f_.no_init_technique,
                                  "Gaussian instead of zero/identity init of the rhythm path"),
                    [this](RunConfig& c) { c.no_init_technique = true; });
            } else if (e == "single-stage") {
                opt(sub->add_flag("--single-stage", f_.single_stage,
                                  "Train both conditioning paths at once from the stage-0 checkpoint"),
                    [this](RunConfig& c) { c.single_stage = true; });
            } else if (e == "rhythm-source") {
                opt(sub->add_option("--rhythm-source", f_.rhythm_source, "local or global")
                        ->check(CLI::IsMember({"local", "global"})),
                    [this](RunConfig& c) { c.rhythm_source = parse_rhythm_source(f_.rhythm_source); });
            } else if (e == "rhythm-mode") {
                opt(sub->add_option("--rhythm-mode", f_.rhythm_mode, "frozen-inattention or train-first-attn")
                        ->check(CLI::IsMember({"frozen-inattention", "train-first-attn"})),
                    [this](RunConfig& c) { c.rhythm_mode = parse_rhythm_mode(f_.rhythm_mode); });
            } else if (e == "no-semantic") {
                opt(sub->add_flag("--no-semantic", f_.no_semantic, "Generate without the semantic condition"),
                    [this](RunConfig& c) { c.no_semantic = true; });
            } else if (e == "ground-truth") {
                opt(sub->add_flag("--ground-truth", f_.ground_truth, "Score the manifest's own token files"),
                    [this](RunConfig& c) { c.ground_truth = true; });
            } else if (e == "grid") {
                opt(sub->add_flag("--grid", f_.grid, "Run every ablation row"), [this](RunConfig& c) { c.grid = true; });
            } else if (e == "tol") {
                opt(sub->add_option("--tol", f_.tol, "Rhythm recall tolerance in seconds"),
                    [this](RunConfig& c) { c.tol = f_.tol; });
            } else if (e == "cut-threshold") {
                opt(sub->add_option("--cut-threshold", f_.cut_threshold, "Cut detection distance threshold"),
                    [this](RunConfig& c) { c.cut_threshold = f_.cut_threshold; });
            } else if (e == "sampling") {
                opt(sub->add_option("--sampling", f_.sampling, "greedy or top-k")->check(CLI::IsMember({"greedy", "top-k"})),
                    [this](RunConfig& c) { c.sampling = f_.sampling; });
            } else if (e == "top-k") {
                opt(sub->add_option("--top-k", f_.top_k, "k for top-k sampling"), [this](RunConfig& c) { c.top_k = f_.top_k; });
            } else if (e == "temperature") {
                opt(sub->add_option("--temperature", f_.temperature, "Sampling temperature"),
                    [this](RunConfig& c) { c.temperature = f_.temperature; });
            }
        }
    }

    RunConfig resolve(const std::string& name) {
        Options& o = options_.at(name);
        RunConfig cfg;
        if (o.config->count()) cfg = RunConfig::load(f_.config);
        for (auto& [option, set] : o.setters) {
            if (option->count()) set(cfg);
        }
        if (name == "train" && !o.config->count()) {
            bool stage_given = false;
            for (auto& [option, set] : o.setters)
                if (option->get_name() == "--stage" && option->count()) stage_given = true;
            if (!stage_given) throw UsageError("--stage is required");
        }
        cfg.command = name;
        cfg.scenario.seed = cfg.seed;
        cfg.ckpt = absolute(cfg.ckpt);
        cfg.manifest = absolute(cfg.manifest);
        cfg.test_manifest = absolute(cfg.test_manifest);
        cfg.clip = absolute(cfg.clip);
        cfg.out = absolute(cfg.out);
        cfg.validate();
        return cfg;
    }

    static void require(bool ok, const std::string& message) {
        if (!ok) throw UsageError(message);
    }

    static void write_config(OutputGuard& guard, const RunConfig& cfg) {
        write_text(guard.add("config.json"), cfg.to_json().dump(2) + "\n");
    }

    static void write_log(const fs::path& path, const TrainResult& r) {
        std::string text;
        for (const auto& e : r.log) text += e.to_json().dump() + "\n";
        write_text(path, text);
    }

    static json param_report(const VideoMusicModel& m) {
        const ParamCounts c = m.params().count();
        json modules = json::object();
        for (const auto& [name, tf] : c.per_module) modules[name] = {{"trainable", tf.first}, {"frozen", tf.second}};
        return json{{"trainable", c.trainable}, {"frozen", c.frozen}, {"modules", modules}};
    }

    int dispatch(const std::string& name, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
        if (name == "synth") return synth(cfg, out);
        if (name == "pretrain") return pretrain(cfg, out, err);
        if (name == "train") return train(cfg, out, err);
        if (name == "generate") return generate(cfg, out);
        if (name == "eval") return eval(cfg, out);
        if (name == "analyze-sim") return analyze(cfg, out);
        if (name == "ablate") return ablate(cfg, out, err);
        throw UsageError("unknown subcommand " + name);
    }

    int synth(const RunConfig& cfg, std::ostream& out) {
        OutputGuard guard(cfg.out);
        write_config(guard, cfg);
        guard.add("clips");
        guard.add("train.jsonl");
        guard.add("test.jsonl");
        const DatasetPaths paths = generate_dataset(cfg.scenario, cfg.n_train, cfg.n_test, cfg.out);
        guard.commit();
        out << "train manifest: " << paths.train_manifest.string() << "\n"
            << "test manifest: " << paths.test_manifest.string() << "\n";
        return kExitOk;
    }

    static LogSink progress(std::ostream& err) {
        return [&err](const TrainLogEntry& e) {
            if (e.step % 20 == 0) err << "stage " << e.stage << " step " << e.step << " loss " << e.loss << "\n";
        };
    }

    int pretrain(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
        require(!cfg.manifest.empty(), "--manifest is required");
        OutputGuard guard(cfg.out);
        write_config(guard, cfg);
        const auto clips = load_manifest(cfg.manifest);
        const auto data = make_examples(clips, cfg.rhythm_source, cfg.scenario.token_rate);
        VideoMusicModel model(cfg.model_config(), cfg.seed);
        const TrainResult r = pretrain_backbone(model, data, cfg.train_config(0), progress(err));
        write_log(guard.add("train_log.jsonl"), r);
        save_checkpoint(guard.add("stage0.vmus"), model, 0);
        write_text(guard.add("params.json"), param_report(model).dump(2) + "\n");
        guard.commit();
        out << "stage 0 loss " << r.first_loss() << " -> " << r.last_loss() << "\n";
        return kExitOk;
    }

    int train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
        require(!cfg.manifest.empty(), "--manifest is required");
        if (cfg.stage == 2 && !cfg.single_stage) {
            require(!cfg.ckpt.empty(), "stage 2 needs a stage-1 checkpoint (--ckpt) unless --single-stage is given");
        }
        require(!cfg.ckpt.empty(), "--ckpt is required");
        require(!(cfg.single_stage && cfg.stage != 2), "--single-stage trains stage 2 directly; use --stage 2");
        Checkpoint ck = load_checkpoint(cfg.ckpt);
        const int expected = cfg.stage == 1 || cfg.single_stage ? 0 : 1;
        require(ck.stage == expected, "--ckpt holds a stage-" + std::to_string(ck.stage) + " model, expected stage " +
                                          std::to_string(expected));
        OutputGuard guard(cfg.out);
        write_config(guard, cfg);
        const auto clips = load_manifest(cfg.manifest);
        const auto data = make_examples(clips, cfg.rhythm_source, cfg.scenario.token_rate);
        VideoMusicModel& model = *ck.model;
        TrainResult r;
        json extra = json::object();
        if (cfg.stage == 1) {
            r = train_stage1(model, data, cfg.train_config(1), progress(err));
        } else if (cfg.single_stage) {
            TrainConfig tc = cfg.train_config(1);
            tc.stage = 2;
            tc.schedule.epochs = cfg.stage1.epochs + cfg.stage2.epochs;
            r = train_single_stage(model, data, tc, progress(err));
            extra["single_stage"] = true;
        } else {
            const Checkpoint before = load_checkpoint(cfg.ckpt);
            const TrainConfig tc = cfg.train_config(2);
            prepare_stage2(model, tc);
            const double gap = max_logit_gap(*before.model, 1, model, 2, data, std::min<std::size_t>(data.size(), 4));
            out << "step-0 max logit change: " << gap << "\n";
            extra["step0_gap"] = gap;
            r = run_training(model, data, tc, 2, progress(err));
        }
        const std::string file = "stage" + std::to_string(cfg.stage) + ".vmus";
        write_log(guard.add("train_log.jsonl"), r);
        save_checkpoint(guard.add(file), model, cfg.stage, extra);
        write_text(guard.add("params.json"), param_report(model).dump(2) + "\n");
        guard.commit();
        out << "stage " << cfg.stage << " loss " << r.first_loss() << " -> " << r.last_loss() << "\n";
        return kExitOk;
    }

    int generate(const RunConfig& cfg, std::ostream& out) {
        require(!cfg.ckpt.empty(), "--ckpt is required");
        require(!cfg.clip.empty(), "--clip is required");
        const Checkpoint ck = load_checkpoint(cfg.ckpt);
        const ClipRecord clip = read_clip(cfg.clip);
        OutputGuard guard(cfg.out);
        write_config(guard, cfg);
        const std::vector<int> tokens = generate_for_clip(*ck.model, clip, cfg.eval_settings());
        const fs::path file = guard.add(clip.clip_id + ".tokens.vmus");
        write_tokens(file, tokens, clip.clip_id);
        guard.commit();
        out << "wrote " << tokens.size() << " tokens to " << file.string() << "\n";
        return kExitOk;
    }

    int eval(const RunConfig& cfg, std::ostream& out) {
        require(!cfg.manifest.empty(), "--manifest is required");
        require(cfg.ground_truth || !cfg.ckpt.empty(), "--ckpt is required unless --ground-truth is given");
        require(!(cfg.ground_truth && !cfg.ckpt.empty()), "--ground-truth and --ckpt are mutually exclusive");
        const auto clips = load_manifest(cfg.manifest);
        std::optional<Checkpoint> ck;
        if (!cfg.ground_truth) ck = load_checkpoint(cfg.ckpt);
        OutputGuard guard(cfg.out);
        write_config(guard, cfg);
        const EvalSettings es = cfg.eval_settings();
        const EvalReport report = cfg.ground_truth ? evaluate_ground_truth(clips, cfg.scenario, es)
                                                   : evaluate_model(*ck->model, clips, cfg.scenario, es);
        write_text(guard.add("report.json"), report.to_json().dump(2) + "\n");
        guard.commit();
        out << "mean rhythm recall " << report.mean_recall << " over " << report.n_recall_clips
            << " clips; semantic proxy accuracy " << report.proxy_accuracy << " over " << report.n_clips << " clips\n";
        return kExitOk;
    }

    int analyze(const RunConfig& cfg, std::ostream& out) {
        require(!cfg.clip.empty(), "--clip is required");
        const ClipRecord clip = read_clip(cfg.clip);
        OutputGuard guard(cfg.out);
        write_config(guard, cfg);
        const SimilarityTrace tr = similarity_traces(clip);
        const fs::path file = guard.add(clip.clip_id + ".sim.csv");
        write_text(file, tr.csv());
        guard.commit();
        out << "local < global at all " << tr.cut_frames.size() << " cuts: " << (tr.relation_holds ? "yes" : "no") << "\n";
        return tr.relation_holds ? kExitOk : kExitFailure;
    }

    int ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
        require(cfg.grid, "only --grid is supported");
        require(!cfg.manifest.empty() && !cfg.test_manifest.empty(), "--manifest and --test-manifest are required");
        const auto train = load_manifest(cfg.manifest);
        const auto test = load_manifest(cfg.test_manifest);
        std::optional<Checkpoint> ck;
        if (!cfg.ckpt.empty()) {
            ck = load_checkpoint(cfg.ckpt);
            require(ck->stage == 0, "ablate --ckpt must be a stage-0 checkpoint");
        }
        OutputGuard guard(cfg.out);
        write_config(guard, cfg);
        Container stage0;
        if (ck) {
            stage0 = checkpoint_container(*ck->model, 0);
        } else {
            err << "pre-training stage 0\n";
            VideoMusicModel model(cfg.model_config(), cfg.seed);
            const auto data = make_examples(train, RhythmSource::local, cfg.scenario.token_rate);
            const TrainResult r = pretrain_backbone(model, data, cfg.train_config(0));
            write_log(guard.add("stage0_train_log.jsonl"), r);
            stage0 = checkpoint_container(model, 0);
            write_container(guard.add("stage0.vmus"), stage0);
        }
        for (const AblationRow& row : ablation_grid()) guard.add(row.key);
        const AblationReport report =
            run_ablation_grid(cfg, stage0, train, test, cfg.out, [&err](const std::string& m) { err << m << "\n"; });
        write_text(guard.add("ablation.json"), report.to_json().dump(2) + "\n");
        write_text(guard.add("ablation.md"), report.table());
        guard.commit();
        out << report.table();
        out << "no init technique breaks step-0 equivalence: " << (report.no_it_breaks_step0 ? "yes" : "no") << "\n";
        out << "fresh init preserves step-0 equivalence: " << (report.fresh_it_preserves_step0 ? "yes" : "no") << "\n";
        return report.no_it_breaks_step0 && report.fresh_it_preserves_step0 ? kExitOk : kExitFailure;
    }

    CLI::App app_;
    Flags f_;
    std::map<std::string, Options> options_;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Cli cli;
    return cli.run(args, out, err);
}

}  // namespace vmus
