#pragma once

#include <filesystem>
#include <functional>
#include <memory>

#include "json.hpp"
#include "vmus/container.hpp"
#include "vmus/model.hpp"
#include "vmus/optim.hpp"
#include "vmus/synthetic.hpp"

namespace vmus {

struct StageSchedule {
    double peak_lr = 1e-4;
    long warmup_steps = 200;
    std::size_t epochs = 30;
};

struct TrainConfig {
    int stage = 1;  // 0, 1 or 2
    StageSchedule schedule;
    AdamWConfig optimizer;
    std::size_t batch_size = 16;
    std::uint64_t seed = 7;
    double cond_dropout = 0.1;  // stage 0: probability of training on the null condition

    bool encoder_from_scratch = false;
    bool no_init_technique = false;
    bool single_stage = false;
    RhythmSource rhythm_source = RhythmSource::local;
    RhythmMode rhythm_mode = RhythmMode::frozen_inattention;

    void validate() const;
};

struct TrainLogEntry {
    long step = 0;
    int stage = 0;
    double lr = 0.0;
    double loss = 0.0;

    nlohmann::json to_json() const;
};

using LogSink = std::function<void(const TrainLogEntry&)>;

struct TrainResult {
    std::vector<TrainLogEntry> log;
    double first_loss() const { return log.empty() ? 0.0 : log.front().loss; }
    double last_loss() const { return log.empty() ? 0.0 : log.back().loss; }
};

struct TrainingExample {
    std::string clip_id;
    int label = 0;
    std::vector<int> tokens;
    GlobalFeatureSeq global;
    DistanceSequence distance;
};

// Distance sequence from local patch features (Algorithm-1 path) or from
// global-feature similarity held across each global frame's token slots.
DistanceSequence rhythm_distance(const ClipRecord& clip, RhythmSource source, double token_rate);

std::vector<TrainingExample> make_examples(const std::vector<ClipRecord>& clips, RhythmSource source,
                                           double token_rate);

// Model input used while training or evaluating at the given stage.
ModelInput stage_input(const VideoMusicModel& model, const TrainingExample& ex, int stage);

// Freeze the backbone and base encoder, attach E and LoRA (or reset the
// encoder and leave it trainable when training from scratch).
void prepare_stage1(VideoMusicModel& model, const TrainConfig& config);
// Attach a fresh rhythm path and set the trainable set for stage 2.
void prepare_stage2(VideoMusicModel& model, const TrainConfig& config);

// Plain optimization loop over the current trainable set.
TrainResult run_training(VideoMusicModel& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                         int input_stage, const LogSink& sink = {});

TrainResult pretrain_backbone(VideoMusicModel& model, const std::vector<TrainingExample>& data,
                              const TrainConfig& config, const LogSink& sink = {});
TrainResult train_stage1(VideoMusicModel& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                         const LogSink& sink = {});
TrainResult train_stage2(VideoMusicModel& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                         const LogSink& sink = {});
// Both conditioning paths trained together from the stage-0 model.
TrainResult train_single_stage(VideoMusicModel& model, const std::vector<TrainingExample>& data,
                               const TrainConfig& config, const LogSink& sink = {});

struct Checkpoint {
    std::unique_ptr<VideoMusicModel> model;
    int stage = 0;
    nlohmann::json extra;
};

void save_checkpoint(const std::filesystem::path& path, const VideoMusicModel& model, int stage,
                     const nlohmann::json& extra = nlohmann::json::object());
Checkpoint checkpoint_from_container(const Container& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Container checkpoint_container(const VideoMusicModel& model, int stage,
                               const nlohmann::json& extra = nlohmann::json::object());

}  // namespace vmus
