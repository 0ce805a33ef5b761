#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "json.hpp"
#include "vmus/config.hpp"
#include "vmus/container.hpp"

namespace vmus {

// One configuration of the ablation table. Flag names follow the table's
// columns: pre-trained encoder, rhythm module, init technique, two-stage
// training, local-token rhythm source, frozen in-attention rhythm mode.
struct AblationRow {
    std::string key;
    bool from_t5 = true;
    bool rcm = true;
    bool it = true;
    bool ts = true;
    bool at = true;
    bool rm = true;
};

std::vector<AblationRow> ablation_grid();

struct AblationOutcome {
    AblationRow row;
    double proxy_accuracy = 0.0;
    double mean_recall = 0.0;
    std::optional<double> step0_gap;  // max |logit change| when the rhythm path is attached
    std::size_t trainable_params = 0;
    double final_loss = 0.0;
};

struct AblationReport {
    std::vector<AblationOutcome> rows;
    bool no_it_breaks_step0 = false;
    bool fresh_it_preserves_step0 = false;

    std::string table() const;
    nlohmann::json to_json() const;
};

// Largest absolute logit difference between two models over the first
// `count` examples, each scored with its own stage input.
double max_logit_gap(const VideoMusicModel& a, int stage_a, const VideoMusicModel& b, int stage_b,
                     const std::vector<TrainingExample>& data, std::size_t count);

using ProgressSink = std::function<void(const std::string&)>;

// Runs every row from a stage-0 checkpoint. Per-row checkpoints and
// training logs go to out_dir/<row key>/.
AblationReport run_ablation_grid(const RunConfig& config, const Container& stage0, const std::vector<ClipRecord>& train,
                                 const std::vector<ClipRecord>& test, const std::filesystem::path& out_dir,
                                 const ProgressSink& progress = {});

}  // namespace vmus
