#include "vmus/layers.hpp"

#include <cmath>

#include "vmus/error.hpp"
#include "vmus/kernels.hpp"
#include "vmus/ops.hpp"

namespace vmus {

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = stddev * rng.normal();
    return t;
}

Var Linear::operator()(Graph& g, Var x) const {
    Var y = ops::matmul(x, g.param(*weight));
    if (bias) y = ops::add_bias(y, g.param(*bias));
    if (lora_a) {
        Var low = ops::matmul_nt(x, g.param(*lora_a));
        Var delta = ops::matmul_nt(low, g.param(*lora_b));
        y = ops::add(y, ops::scale(delta, lora_scale));
    }
    return y;
}

Tensor Linear::apply(const Tensor& x) const {
    Tensor y = kernels::matmul(x, weight->value);
    if (bias) y = kernels::add_bias(y, bias->value);
    if (lora_a) {
        Tensor low = kernels::matmul_nt(x, lora_a->value);
        kernels::gemm_acc(y, low, false, lora_b->value, true, lora_scale);
    }
    return y;
}

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, double stddev,
                   Rng& rng, bool with_bias) {
    Linear l;
    l.weight = &store.add(name + ".weight", gaussian({in, out}, stddev, rng));
    if (with_bias) l.bias = &store.add(name + ".bias", Tensor::matrix(1, out));
    return l;
}

void attach_lora(Linear& linear, ParamStore& store, const std::string& name, std::size_t rank, double alpha,
                 Rng& rng) {
    const std::size_t in = linear.in_features();
    const std::size_t out = linear.out_features();
    if (rank == 0 || rank >= std::min(in, out)) {
        throw InvalidArgument("LoRA rank " + std::to_string(rank) + " must be in [1, min(" + std::to_string(in) +
                              ", " + std::to_string(out) + "))");
    }
    if (linear.lora_a) throw InvalidArgument("LoRA already attached to '" + name + "'");
    linear.lora_a = &store.add(name + ".lora_a", gaussian({rank, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    linear.lora_b = &store.add(name + ".lora_b", Tensor::matrix(out, rank));
    linear.lora_scale = alpha / static_cast<double>(rank);
}

Var LayerNorm::operator()(Graph& g, Var x) const {
    return ops::layer_norm(x, g.param(*gain), g.param(*bias), eps);
}

Tensor LayerNorm::apply(const Tensor& x) const { return kernels::layer_norm(x, gain->value, bias->value, eps); }

LayerNorm make_layer_norm(ParamStore& store, const std::string& name, std::size_t width, double eps) {
    LayerNorm ln;
    ln.gain = &store.add(name + ".gain", Tensor::matrix(1, width, 1.0));
    ln.bias = &store.add(name + ".bias", Tensor::matrix(1, width));
    ln.eps = eps;
    return ln;
}

Var Attention::operator()(Graph& g, Var queries, Var memory, bool causal) const {
    Var merged = ops::attention(query(g, queries), key(g, memory), value(g, memory), heads, causal);
    return out(g, merged);
}

Attention make_attention(ParamStore& store, const std::string& name, std::size_t width, std::size_t heads,
                         double out_stddev, Rng& rng) {
    if (heads == 0 || width % heads != 0) {
        throw InvalidArgument("attention width " + std::to_string(width) + " not divisible by " +
                              std::to_string(heads) + " heads");
    }
    const double in_std = 1.0 / std::sqrt(static_cast<double>(width));
    Attention a;
    a.heads = heads;
    a.query = make_linear(store, name + ".wq", width, width, in_std, rng);
    a.key = make_linear(store, name + ".wk", width, width, in_std, rng);
    a.value = make_linear(store, name + ".wv", width, width, in_std, rng);
    a.out = make_linear(store, name + ".wo", width, width, out_stddev, rng);
    return a;
}

Var FeedForward::operator()(Graph& g, Var x) const { return down(g, ops::gelu(up(g, x))); }

Tensor FeedForward::apply(const Tensor& x) const { return down.apply(kernels::gelu(up.apply(x))); }

FeedForward make_feed_forward(ParamStore& store, const std::string& name, std::size_t width, std::size_t hidden,
                              double out_stddev, Rng& rng) {
    FeedForward f;
    f.up = make_linear(store, name + ".up", width, hidden, 1.0 / std::sqrt(static_cast<double>(width)), rng);
    f.down = make_linear(store, name + ".down", hidden, width, out_stddev, rng);
    return f;
}

Tensor sinusoidal_positions(std::size_t count, std::size_t width, std::size_t offset) {
    Tensor pe = Tensor::matrix(count, width);
    for (std::size_t t = 0; t < count; ++t) {
        const double pos = static_cast<double>(t + offset);
        for (std::size_t i = 0; i < width; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
            pe(t, i) = std::sin(pos * freq);
            if (i + 1 < width) pe(t, i + 1) = std::cos(pos * freq);
        }
    }
    return pe;
}

}  // namespace vmus
