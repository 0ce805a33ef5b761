#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vmus/rhythm.hpp"
#include "vmus/rng.hpp"
#include "vmus/semantic.hpp"
#include "vmus/tensor.hpp"

namespace vmus {

// Generator settings for the synthetic video/music world.
struct ScenarioSpec {
    std::size_t n_classes = 4;
    double clip_seconds = 4.0;
    std::size_t patches = 16;      // K
    std::size_t d_vis = 32;
    double shot_min = 1.0;         // seconds
    double shot_max = 2.0;
    double rho = 0.5;              // fraction of patches resampled at a cut
    double sigma = 0.02;           // feature noise
    double noise_smoothness = 0.9; // AR(1) coefficient of within-shot noise
    double beat_period = 0.5;      // seconds
    std::size_t vocab_size = 64;
    std::size_t n_beat_tokens = 4; // the last n ids; the first of them is the accent
    std::size_t band_width = 8;
    double band_mass = 0.8;
    double local_fps = 25.0;
    double global_fps = 1.0;
    double token_rate = 50.0;
    std::uint64_t seed = 7;

    void validate() const;

    std::size_t local_frames() const;
    std::size_t global_frames() const;
    std::size_t token_count() const;
    std::size_t content_tokens() const { return vocab_size - n_beat_tokens; }
    std::vector<int> beat_tokens() const;
    int accent_token() const { return static_cast<int>(content_tokens()); }
    // Smallest interval that is both a whole number of beats and of frames.
    double cut_grid() const;
    // n_classes x vocab_size token probabilities; beat ids have mass 0.
    Tensor class_distributions() const;
    // n_classes x d_vis unit rows.
    Tensor class_centroids() const;
};

struct ClipRecord {
    std::string clip_id;
    int label = 0;
    double seconds = 0.0;
    GlobalFeatureSeq global;
    LocalFeatureSeq local;
    std::vector<int> tokens;
    std::vector<double> cut_times;
    std::vector<double> beat_times;
};

ClipRecord generate_clip(const ScenarioSpec& spec, const std::string& clip_id, int label, Rng& rng);

struct DatasetPaths {
    std::filesystem::path train_manifest;
    std::filesystem::path test_manifest;
};

// Writes clips/<id>.features.vmus, clips/<id>.tokens.vmus and the
// train.jsonl / test.jsonl manifests under out_dir. Labels are assigned
// round-robin so both splits are class-balanced.
DatasetPaths generate_dataset(const ScenarioSpec& spec, std::size_t n_train, std::size_t n_test,
                              const std::filesystem::path& out_dir);

void write_clip(const ClipRecord& clip, const std::filesystem::path& feature_file,
                const std::filesystem::path& token_file);
// Reads a feature file (and its metadata); tokens are loaded when token_file is non-empty.
ClipRecord read_clip(const std::filesystem::path& feature_file, const std::filesystem::path& token_file = {});

std::vector<ClipRecord> load_manifest(const std::filesystem::path& manifest);

void write_tokens(const std::filesystem::path& path, const std::vector<int>& tokens, const std::string& clip_id);
std::vector<int> read_tokens(const std::filesystem::path& path);

}  // namespace vmus
