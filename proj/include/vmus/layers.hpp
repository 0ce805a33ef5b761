#pragma once

#include <string>

#include "vmus/graph.hpp"
#include "vmus/param.hpp"
#include "vmus/rng.hpp"

namespace vmus {

// y = x W + b, with an optional low-rank adapter:
// y += (alpha / r) * (x A^T) B^T, A (r x in), B (out x r).
struct Linear {
    Param* weight = nullptr;  // in x out
    Param* bias = nullptr;    // 1 x out, optional
    Param* lora_a = nullptr;
    Param* lora_b = nullptr;
    double lora_scale = 0.0;

    std::size_t in_features() const { return weight->value.rows(); }
    std::size_t out_features() const { return weight->value.cols(); }
    bool has_lora() const noexcept { return lora_a != nullptr; }

    Var operator()(Graph& g, Var x) const;
    Tensor apply(const Tensor& x) const;
};

Tensor gaussian(Shape shape, double stddev, Rng& rng);

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, double stddev,
                   Rng& rng, bool with_bias = true);

// Adds a zero-effect adapter (B = 0, A Gaussian) to an existing linear map.
void attach_lora(Linear& linear, ParamStore& store, const std::string& name, std::size_t rank, double alpha,
                 Rng& rng);

struct LayerNorm {
    Param* gain = nullptr;
    Param* bias = nullptr;
    double eps = 1e-5;

    Var operator()(Graph& g, Var x) const;
    Tensor apply(const Tensor& x) const;
};

LayerNorm make_layer_norm(ParamStore& store, const std::string& name, std::size_t width, double eps);

struct Attention {
    Linear query, key, value, out;
    std::size_t heads = 1;

    // Multi-head attention of `queries` over `memory`. With causal set the
    // two inputs must be the same sequence.
    Var operator()(Graph& g, Var queries, Var memory, bool causal) const;
};

Attention make_attention(ParamStore& store, const std::string& name, std::size_t width, std::size_t heads,
                         double out_stddev, Rng& rng);

struct FeedForward {
    Linear up, down;

    Var operator()(Graph& g, Var x) const;
    Tensor apply(const Tensor& x) const;
};

FeedForward make_feed_forward(ParamStore& store, const std::string& name, std::size_t width, std::size_t hidden,
                              double out_stddev, Rng& rng);

// Fixed sin/cos position table, rows offset..offset+count-1.
Tensor sinusoidal_positions(std::size_t count, std::size_t width, std::size_t offset = 0);

}  // namespace vmus
