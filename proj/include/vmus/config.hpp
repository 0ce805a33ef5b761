#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "vmus/evaluation.hpp"
#include "vmus/model.hpp"
#include "vmus/synthetic.hpp"
#include "vmus/training.hpp"

namespace vmus {

// Everything a subcommand needs. Defaults are the desk-scale settings;
// a JSON file overrides defaults and command-line flags override the file.
struct RunConfig {
    std::string command;
    std::uint64_t seed = 7;
    std::string out = "run";

    ScenarioSpec scenario;
    std::size_t n_train = 64;
    std::size_t n_test = 16;

    ModelConfig model;

    std::size_t batch_size = 16;
    AdamWConfig optimizer;
    double cond_dropout = 0.1;
    StageSchedule stage0{2e-3, 24, 30};
    StageSchedule stage1{1e-3, 24, 30};
    StageSchedule stage2{1e-3, 24, 30};

    bool encoder_from_scratch = false;
    bool no_init_technique = false;
    bool single_stage = false;
    RhythmSource rhythm_source = RhythmSource::local;
    RhythmMode rhythm_mode = RhythmMode::frozen_inattention;

    double tol = 0.1;
    double cut_threshold = 0.4;
    std::string sampling = "greedy";  // greedy | top-k
    std::size_t top_k = 8;
    double temperature = 1.0;
    std::size_t jobs = 1;
    bool no_semantic = false;
    bool ground_truth = false;

    int stage = 1;
    std::string ckpt;
    std::string manifest;
    std::string test_manifest;
    std::string clip;
    bool grid = false;

    void validate() const;

    nlohmann::json to_json() const;
    // Keys absent from j keep their current value; unknown keys are errors.
    void merge_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);

    TrainConfig train_config(int stage) const;
    EvalSettings eval_settings() const;
    Sampling sampling_mode() const;
    // Model dimensions consistent with the scenario (vocab, clip length, widths).
    ModelConfig model_config() const;
};

}  // namespace vmus
