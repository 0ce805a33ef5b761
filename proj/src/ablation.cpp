#include "vmus/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vmus/error.hpp"

namespace vmus {

using nlohmann::json;

std::vector<AblationRow> ablation_grid() {
    return {
        {"scratch-encoder", false, false, false, false, false, false},
        {"semantic-only", true, false, false, false, false, false},
        {"no-init-technique", true, true, false, true, true, true},
        {"single-stage", true, true, true, false, true, true},
        {"global-rhythm", true, true, true, true, false, true},
        {"first-attn-no-init", true, true, false, true, true, false},
        {"first-attn", true, true, true, true, true, false},
        {"full", true, true, true, true, true, true},
    };
}

double max_logit_gap(const VideoMusicModel& a, int stage_a, const VideoMusicModel& b, int stage_b,
                     const std::vector<TrainingExample>& data, std::size_t count) {
    double gap = 0.0;
    for (std::size_t i = 0; i < std::min(count, data.size()); ++i) {
        const Tensor la = a.logits(data[i].tokens, stage_input(a, data[i], stage_a));
        const Tensor lb = b.logits(data[i].tokens, stage_input(b, data[i], stage_b));
        gap = std::max(gap, max_abs_diff(la, lb));
    }
    return gap;
}

namespace {

std::string mark(bool b) { return b ? "yes" : "no"; }

void write_log(const std::filesystem::path& path, const TrainResult& r) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    for (const auto& e : r.log) out << e.to_json().dump() << '\n';
}

}  // namespace

std::string AblationReport::table() const {
    std::ostringstream out;
    out << "| row | From T5 | RCM | IT | TS | AT | RM | proxy acc | rhythm recall | step-0 gap | trainable |\n";
    out << "|---|---|---|---|---|---|---|---|---|---|---|\n";
    char buf[64];
    for (const AblationOutcome& o : rows) {
        const AblationRow& r = o.row;
        out << "| " << r.key << " | " << mark(r.from_t5) << " | " << mark(r.rcm) << " | " << mark(r.it) << " | "
            << mark(r.ts) << " | " << mark(r.at) << " | " << mark(r.rm) << " | ";
        std::snprintf(buf, sizeof buf, "%.4f | %.4f | ", o.proxy_accuracy, o.mean_recall);
        out << buf;
        if (o.step0_gap) {
            std::snprintf(buf, sizeof buf, "%.3g", *o.step0_gap);
            out << buf;
        } else {
            out << "-";
        }
        out << " | " << o.trainable_params << " |\n";
    }
    return out.str();
}

json AblationReport::to_json() const {
    json rows_json = json::array();
    for (const AblationOutcome& o : rows) {
        const AblationRow& r = o.row;
        rows_json.push_back(json{{"row", r.key},
                                 {"from_t5", r.from_t5},
                                 {"rcm", r.rcm},
                                 {"it", r.it},
                                 {"ts", r.ts},
                                 {"at", r.at},
                                 {"rm", r.rm},
                                 {"semantic_proxy_accuracy", o.proxy_accuracy},
                                 {"mean_rhythm_recall", o.mean_recall},
                                 {"step0_gap", o.step0_gap ? json(*o.step0_gap) : json(nullptr)},
                                 {"trainable_params", o.trainable_params},
                                 {"final_loss", o.final_loss}});
    }
    return json{{"rows", rows_json},
                {"no_init_technique_breaks_step0", no_it_breaks_step0},
                {"fresh_init_preserves_step0", fresh_it_preserves_step0}};
}

AblationReport run_ablation_grid(const RunConfig& config, const Container& stage0, const std::vector<ClipRecord>& train,
                                 const std::vector<ClipRecord>& test, const std::filesystem::path& out_dir,
                                 const ProgressSink& progress) {
    const double rate = config.scenario.token_rate;
    const auto local_train = make_examples(train, RhythmSource::local, rate);
    const auto global_train = make_examples(train, RhythmSource::global, rate);
    const auto local_test = make_examples(test, RhythmSource::local, rate);
    const auto global_test = make_examples(test, RhythmSource::global, rate);
    auto say = [&](const std::string& m) {
        if (progress) progress(m);
    };

    // Stage-1 models shared by several rows.
    say("stage 1 (pre-trained encoder)");
    Checkpoint s1 = checkpoint_from_container(stage0);
    TrainResult s1_log = train_stage1(*s1.model, local_train, config.train_config(1));
    const Container s1_container = checkpoint_container(*s1.model, 1);

    AblationReport report;
    for (const AblationRow& row : ablation_grid()) {
        say("row " + row.key);
        const std::filesystem::path dir = out_dir / row.key;
        std::filesystem::create_directories(dir);
        RunConfig rc = config;
        rc.encoder_from_scratch = !row.from_t5;
        rc.no_init_technique = !row.it;
        rc.single_stage = !row.ts;
        rc.rhythm_source = row.at ? RhythmSource::local : RhythmSource::global;
        rc.rhythm_mode = row.rm ? RhythmMode::frozen_inattention : RhythmMode::train_first_attn;
        const auto& train_ex = row.at ? local_train : global_train;
        const auto& test_ex = row.at ? local_test : global_test;

        AblationOutcome outcome;
        outcome.row = row;
        std::unique_ptr<VideoMusicModel> model;
        TrainResult log;
        int stage = 1;
        if (!row.rcm) {
            if (row.from_t5) {
                model = checkpoint_from_container(s1_container).model;
                log = s1_log;
            } else {
                model = checkpoint_from_container(stage0).model;
                log = train_stage1(*model, train_ex, rc.train_config(1));
            }
        } else if (!row.ts) {
            model = checkpoint_from_container(stage0).model;
            TrainConfig tc = rc.train_config(1);
            tc.stage = 2;
            tc.schedule.epochs = config.stage1.epochs + config.stage2.epochs;
            prepare_stage1(*model, tc);
            prepare_stage2(*model, tc);
            log = run_training(*model, train_ex, tc, 2);
            stage = 2;
        } else {
            model = checkpoint_from_container(s1_container).model;
            const TrainConfig tc = rc.train_config(2);
            prepare_stage2(*model, tc);
            outcome.step0_gap = max_logit_gap(*s1.model, 1, *model, 2, test_ex, test_ex.size());
            log = run_training(*model, train_ex, tc, 2);
            stage = 2;
        }
        outcome.final_loss = log.last_loss();
        outcome.trainable_params = model->params().count().trainable;
        save_checkpoint(dir / "model.vmus", *model, stage, json{{"ablation_row", row.key}});
        write_log(dir / "train_log.jsonl", log);

        EvalSettings es = rc.eval_settings();
        const EvalReport ev = evaluate_model(*model, test, rc.scenario, es);
        {
            std::ofstream out(dir / "report.json", std::ios::binary | std::ios::trunc);
            out << ev.to_json().dump(2) << '\n';
            if (!out) throw IoError("cannot write '" + (dir / "report.json").string() + "'");
        }
        outcome.proxy_accuracy = ev.proxy_accuracy;
        outcome.mean_recall = ev.mean_recall;
        report.rows.push_back(outcome);
    }
    for (const AblationOutcome& o : report.rows) {
        if (o.row.key == "no-init-technique") report.no_it_breaks_step0 = o.step0_gap && *o.step0_gap > 0.0;
        if (o.row.key == "full") report.fresh_it_preserves_step0 = o.step0_gap && *o.step0_gap == 0.0;
    }
    return report;
}

}  // namespace vmus
