#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vmus/model.hpp"
#include "vmus/synthetic.hpp"
#include "vmus/training.hpp"

namespace vmus {

// Frame i+1 is a cut when 1 - sim_i exceeds threshold and is a local
// maximum of the distance trace. Returns times in seconds.
std::vector<double> detect_cuts(const LocalFeatureSeq& local, double threshold);

// Times (s) of tokens belonging to beat_subset.
std::vector<double> extract_beats(std::span<const int> tokens, double token_rate, std::span<const int> beat_subset);

// Fraction of cuts with at least one beat in the closed window [c - tol, c + tol].
double rhythm_recall(std::span<const double> cuts, std::span<const double> beats, double tol);

// Maximum-likelihood class guess from token statistics, using the
// generator's class distributions. Stands in for audio-text alignment scores.
class SemanticProxy {
public:
    SemanticProxy(Tensor class_distributions, std::vector<int> beat_subset);
    explicit SemanticProxy(const ScenarioSpec& spec)
        : SemanticProxy(spec.class_distributions(), spec.beat_tokens()) {}

    std::size_t classes() const noexcept { return log_p_.rows(); }
    std::vector<double> scores(std::span<const int> tokens) const;
    // Ties go to the lowest class id.
    int predict(std::span<const int> tokens) const;

private:
    Tensor log_p_;
    std::vector<bool> is_beat_;
};

struct SimilarityTrace {
    std::vector<double> global_sim;  // per local frame, global features step-held
    std::vector<double> local_sim;
    std::vector<std::size_t> cut_frames;
    bool relation_holds = false;     // local < global at every cut frame

    std::string csv() const;
};

// Row f compares frame f with frame f - 1; row 0 is 1 in both traces.
SimilarityTrace similarity_traces(const ClipRecord& clip);

struct EvalSettings {
    double tol = 0.1;
    double cut_threshold = 0.4;
    Sampling sampling;
    std::size_t jobs = 1;
    bool use_semantic = true;
    bool use_rhythm = true;
    RhythmSource rhythm_source = RhythmSource::local;
    std::uint64_t seed = 7;
};

struct ClipEval {
    std::string clip_id;
    int label = 0;
    int predicted = 0;
    bool semantic_correct = false;
    std::size_t n_cuts = 0;
    std::size_t n_beats = 0;
    std::optional<double> rhythm_recall;  // absent when the clip has no cuts
    std::vector<int> tokens;
};

struct EvalReport {
    std::vector<ClipEval> clips;
    double mean_recall = 0.0;
    double proxy_accuracy = 0.0;
    std::size_t n_clips = 0;
    std::size_t n_recall_clips = 0;
    std::string source;  // what produced the tokens

    nlohmann::json to_json() const;
};

EvalReport summarize(std::vector<ClipEval> clips, std::string source);

// Scores token sequences against their clips (ground truth when tokens are the clip's own).
ClipEval score_clip(const ClipRecord& clip, std::vector<int> tokens, const ScenarioSpec& spec,
                    const EvalSettings& settings);
EvalReport evaluate_ground_truth(const std::vector<ClipRecord>& clips, const ScenarioSpec& spec,
                                 const EvalSettings& settings);
// Generates for every clip and scores the result. Clips are spread over
// settings.jobs worker threads; results do not depend on the job count.
EvalReport evaluate_model(const VideoMusicModel& model, const std::vector<ClipRecord>& clips, const ScenarioSpec& spec,
                          const EvalSettings& settings);

std::vector<int> generate_for_clip(const VideoMusicModel& model, const ClipRecord& clip, const EvalSettings& settings);

}  // namespace vmus
