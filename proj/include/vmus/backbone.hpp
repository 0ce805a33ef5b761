#pragma once

#include <optional>
#include <span>
#include <vector>

#include "vmus/graph.hpp"
#include "vmus/layers.hpp"
#include "vmus/param.hpp"
#include "vmus/rng.hpp"

namespace vmus {

struct BackboneConfig {
    std::size_t vocab_size = 64;
    std::size_t d_model = 64;
    std::size_t n_blocks = 4;
    std::size_t layers_per_block = 4;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    double token_rate = 50.0;   // tokens per second
    double max_seconds = 4.0;   // longest clip the model is built for
    double ln_eps = 1e-5;

    // Blocks receiving in-attention: floor(3N/4).
    std::size_t rhythm_block_count() const noexcept { return 3 * n_blocks / 4; }
    std::size_t max_tokens() const;
    int bos_token() const noexcept { return static_cast<int>(vocab_size); }
    void validate() const;
};

// F_S and the per-block rhythm conditions F_R1..F_Rm. Empty rhythm means
// the rhythm path is absent.
struct ConditionBundle {
    std::optional<Tensor> semantic;
    std::vector<Tensor> rhythm;
};

struct Sampling {
    enum class Mode { greedy, top_k };
    Mode mode = Mode::greedy;
    std::size_t k = 8;
    double temperature = 1.0;

    static Sampling greedy() { return {}; }
    static Sampling top_k(std::size_t k, double temperature) { return {Mode::top_k, k, temperature}; }
};

// Records what a forward pass actually executed, in order.
struct ForwardEvent {
    enum class Kind { in_attention, self_attention, cross_attention, feed_forward };
    Kind kind;
    std::size_t block;
    std::size_t layer;
};
using ForwardTrace = std::vector<ForwardEvent>;

// Index of the largest logit; ties go to the lower id.
int argmax_token(std::span<const double> logits);
int sample_token(std::span<const double> logits, const Sampling& sampling, Rng& rng);

// Decoder-only transformer: n_blocks blocks of layers_per_block pre-norm
// layers, each with causal self-attention, cross-attention over the
// semantic condition, and a GELU feed-forward. Position t consumes token
// t-1 (BOS at t = 0) and predicts token t.
class Backbone {
public:
    static constexpr const char* kPrefix = "backbone.";

    Backbone(const BackboneConfig& config, ParamStore& store, Rng& rng);

    const BackboneConfig& config() const noexcept { return config_; }

    Var embed(Graph& g, std::span<const int> tokens) const;
    // Cross-attention memory: the semantic condition, or the learned
    // null-condition row when absent.
    Var memory(Graph& g, std::optional<Var> semantic) const;
    Var run_layer(Graph& g, std::size_t block, std::size_t layer, Var h, Var memory,
                  ForwardTrace* trace = nullptr) const;
    Var run_block(Graph& g, std::size_t block, Var h, Var memory, ForwardTrace* trace = nullptr) const;
    Var head(Graph& g, Var h) const;

    // additions[j] is added to the hidden state entering block j's first layer.
    Var forward_with(Graph& g, std::span<const int> tokens, std::optional<Var> semantic,
                     std::span<const Var> additions, ForwardTrace* trace = nullptr) const;
    // rhythm must be empty or hold exactly rhythm_block_count() entries.
    Var forward(Graph& g, std::span<const int> tokens, std::optional<Var> semantic, std::span<const Var> rhythm,
                ForwardTrace* trace = nullptr) const;
    Tensor forward(std::span<const int> tokens, const ConditionBundle& cond) const;

    // Autoregressive decoding with cached keys/values.
    std::vector<int> generate(const ConditionBundle& cond, std::size_t length, const Sampling& sampling,
                              Rng& rng) const;
    std::vector<int> generate_with(const Tensor* semantic, std::span<const Tensor> additions, std::size_t length,
                                   const Sampling& sampling, Rng& rng) const;
    // Runs the cached decoder over a fixed token sequence and returns its
    // logits; equals forward() up to rounding.
    Tensor decode_logits(std::span<const int> tokens, const Tensor* semantic,
                         std::span<const Tensor> additions) const;

    // Names of the self-attention projections of each block's first layer.
    std::vector<std::string> first_layer_self_attention_prefixes() const;

private:
    struct Layer {
        LayerNorm ln_self;
        Attention self_attn;
        LayerNorm ln_cross;
        Attention cross_attn;
        LayerNorm ln_ff;
        FeedForward ff;
    };
    class Session;

    void check_tokens(std::span<const int> tokens) const;
    void check_additions(std::span<const Tensor> additions, std::size_t length) const;

    BackboneConfig config_;
    Param* token_embedding_ = nullptr;  // (vocab + 1) x d, last row is BOS
    Param* null_condition_ = nullptr;   // 1 x d
    std::vector<std::vector<Layer>> blocks_;
    LayerNorm ln_final_;
    Linear head_;
};

}  // namespace vmus
