#pragma once

#include <span>
#include <vector>

#include "vmus/graph.hpp"
#include "vmus/layers.hpp"
#include "vmus/param.hpp"
#include "vmus/rng.hpp"

namespace vmus {

struct LocalFeatureSeq {
    Tensor features;  // Nf x K x D_vis, each patch vector unit-norm
    double fps = 25.0;
    std::string clip_id;

    std::size_t frames() const { return features.dim(0); }
    std::size_t patches() const { return features.dim(1); }
    std::size_t width() const { return features.dim(2); }
};

// Per-token rhythm scalar at the token rate: 1 - similarity at even slots,
// zeros interleaved.
struct DistanceSequence {
    std::vector<double> d;
    double token_rate = 50.0;
};

// sim_i = mean over patches of cos(r_i^j, r_{i+1}^j); length Nf - 1.
std::vector<double> mean_patch_similarity(const LocalFeatureSeq& local);
// Cosine of consecutive rows.
std::vector<double> global_similarity(const Tensor& rows);

// d = flatten([[1 - s, 0] for s in [1] + sim]).
DistanceSequence compute_distance_sequence(std::span<const double> sim);

// Global-feature variant: distance per global frame, each held for
// tokens_per_frame slots.
DistanceSequence step_held_distance_sequence(std::span<const double> sim, std::size_t tokens_per_frame,
                                             double token_rate);

// Zero-padded (or truncated) copy of d with exactly `length` entries.
std::vector<double> fit_distance(const DistanceSequence& d, std::size_t length);

enum class RhythmInit { zero_identity, gaussian };

// O: 1 -> d_model (zero weights and bias), L_1..L_m: d_model -> d_model
// (identity weights, zero bias). F_Rj = L_j(...L_1(O(d))...).
class RhythmChain {
public:
    static constexpr const char* kPrefix = "rhythm.";

    RhythmChain(ParamStore& store, std::size_t d_model, std::size_t links, RhythmInit init, Rng& rng);

    std::size_t links() const noexcept { return links_.size(); }
    std::size_t width() const noexcept { return projector_.out_features(); }
    const Linear& projector() const noexcept { return projector_; }
    const Linear& link(std::size_t j) const { return links_.at(j); }

    // d as a (T x 1) column; returns m tensors of T x d_model.
    std::vector<Var> build(Graph& g, Var d_column) const;

private:
    Linear projector_;
    std::vector<Linear> links_;
};

std::vector<Tensor> build_rhythm_conditions(const DistanceSequence& d, const RhythmChain& chain,
                                            std::size_t expected_blocks);

// Alternative rhythm path: one zero-linear 1 -> d_model per block feeding
// that block's first layer, used with the block's first self-attention
// layer unfrozen.
class FirstLayerInjector {
public:
    static constexpr const char* kPrefix = "rhythm.";

    FirstLayerInjector(ParamStore& store, std::size_t d_model, std::size_t blocks, RhythmInit init, Rng& rng);

    std::size_t blocks() const noexcept { return maps_.size(); }
    std::vector<Var> build(Graph& g, Var d_column) const;

private:
    std::vector<Linear> maps_;
};

}  // namespace vmus
