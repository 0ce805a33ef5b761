#pragma once

#include <optional>

#include "vmus/graph.hpp"
#include "vmus/layers.hpp"
#include "vmus/param.hpp"
#include "vmus/rng.hpp"

namespace vmus {

struct GlobalFeatureSeq {
    Tensor features;  // S x D_vis, rows unit-norm
    double fps = 1.0;
    std::string clip_id;
};

struct EncoderConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t n_prompts = 4;  // rows of the prompt embedding table
    double ln_eps = 1e-5;

    void validate() const;
};

// Bidirectional transformer encoder standing in for the pre-trained text
// encoder. Its prompt table is the "text embedding space" the embedding
// manager learns to map visual features into.
class TextEncoder {
public:
    static constexpr const char* kPrefix = "encoder.";

    TextEncoder(const EncoderConfig& config, ParamStore& store, Rng& rng);

    const EncoderConfig& config() const noexcept { return config_; }

    Var encode(Graph& g, Var inputs) const;
    Tensor encode(const Tensor& inputs) const;
    // Prompt sequence for a class: `length` copies of its embedding row.
    Var prompt(Graph& g, int prompt_id, std::size_t length) const;

    // Attaches adapters to every query and value projection. The base
    // encoder parameters must already be frozen.
    void inject_lora(ParamStore& store, std::size_t rank, double alpha, Rng& rng);
    bool has_lora() const noexcept { return has_lora_; }
    // Sum over adapted matrices of rank * (d_in + d_out).
    std::size_t lora_parameter_count() const;

    // Redraws every base parameter from a fresh initialization.
    void reinitialize(Rng& rng);

private:
    struct Layer {
        LayerNorm ln_attn;
        Attention attn;
        LayerNorm ln_ff;
        FeedForward ff;
    };

    EncoderConfig config_;
    ParamStore* store_;
    Param* prompt_table_ = nullptr;
    std::vector<Layer> layers_;
    LayerNorm ln_final_;
    bool has_lora_ = false;
};

// Embedding manager E: D_vis -> hidden -> encoder width, GELU in between.
struct EmbeddingManager {
    static constexpr const char* kPrefix = "semantic.embed.";
    Linear fc1, fc2;

    Var operator()(Graph& g, Var x) const;
};

EmbeddingManager make_embedding_manager(ParamStore& store, std::size_t d_vis, std::size_t hidden,
                                        std::size_t out, Rng& rng);

// Projector P: encoder width -> backbone width.
struct Projector {
    static constexpr const char* kPrefix = "semantic.proj.";
    Linear map;

    Var operator()(Graph& g, Var x) const { return map(g, x); }
};

Projector make_projector(ParamStore& store, std::size_t in, std::size_t out, Rng& rng);

// F_S = P(T(E(V_S))).
Var compose_semantic_condition(Graph& g, const EmbeddingManager& embed, const TextEncoder& encoder,
                               const Projector& projector, const GlobalFeatureSeq& features);
// Stage-0 text path: P(T(prompt)).
Var prompt_semantic_condition(Graph& g, const TextEncoder& encoder, const Projector& projector, int prompt_id,
                              std::size_t length);

}  // namespace vmus
