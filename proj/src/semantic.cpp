#include "vmus/semantic.hpp"

#include <cmath>

#include "vmus/error.hpp"
#include "vmus/ops.hpp"

namespace vmus {

void EncoderConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
        throw InvalidArgument("encoder d_model must be divisible by n_heads");
    }
    if (n_layers == 0 || d_ff == 0 || n_prompts == 0) throw InvalidArgument("encoder dimensions must be >= 1");
}

TextEncoder::TextEncoder(const EncoderConfig& config, ParamStore& store, Rng& rng) : config_(config), store_(&store) {
    config_.validate();
    const std::size_t d = config_.d_model;
    const double out_std = 1.0 / std::sqrt(static_cast<double>(d)) / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
    prompt_table_ = &store.add("encoder.prompt_embedding", gaussian({config_.n_prompts, d}, 1.0, rng));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string p = "encoder.layer" + std::to_string(l) + ".";
        Layer layer;
        layer.ln_attn = make_layer_norm(store, p + "ln_attn", d, config_.ln_eps);
        layer.attn = make_attention(store, p + "attn", d, config_.n_heads, out_std, rng);
        layer.ln_ff = make_layer_norm(store, p + "ln_ff", d, config_.ln_eps);
        layer.ff = make_feed_forward(store, p + "ff", d, config_.d_ff, out_std, rng);
        layers_.push_back(layer);
    }
    ln_final_ = make_layer_norm(store, "encoder.ln_final", d, config_.ln_eps);
}

Var TextEncoder::encode(Graph& g, Var inputs) const {
    const Tensor& x = inputs.value();
    if (x.rank() != 2 || x.cols() != config_.d_model || x.rows() == 0) {
        throw InvalidArgument("encoder input must be S x " + std::to_string(config_.d_model) + ", got " +
                              shape_str(x.shape()));
    }
    Var h = ops::add(inputs, g.constant(sinusoidal_positions(x.rows(), config_.d_model)));
    for (const Layer& L : layers_) {
        Var a = L.ln_attn(g, h);
        h = ops::add(h, L.attn(g, a, a, /*causal=*/false));
        h = ops::add(h, L.ff(g, L.ln_ff(g, h)));
    }
    return ln_final_(g, h);
}

Tensor TextEncoder::encode(const Tensor& inputs) const {
    Graph g(false);
    return encode(g, g.constant(inputs)).value();
}

Var TextEncoder::prompt(Graph& g, int prompt_id, std::size_t length) const {
    std::vector<int> ids(length, prompt_id);
    return ops::embedding(g.param(*prompt_table_), ids);
}

void TextEncoder::inject_lora(ParamStore& store, std::size_t rank, double alpha, Rng& rng) {
    if (has_lora_) throw InvalidArgument("LoRA already injected");
    for (const Param* p : store.with_prefix(kPrefix)) {
        if (p->trainable) throw InvalidArgument("inject_lora: encoder parameter '" + p->name + "' is not frozen");
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string p = "encoder.layer" + std::to_string(l) + ".attn.";
        attach_lora(layers_[l].attn.query, store, p + "wq", rank, alpha, rng);
        attach_lora(layers_[l].attn.value, store, p + "wv", rank, alpha, rng);
    }
    has_lora_ = true;
}

std::size_t TextEncoder::lora_parameter_count() const {
    std::size_t n = 0;
    for (const Layer& L : layers_) {
        for (const Linear* lin : {&L.attn.query, &L.attn.value}) {
            if (lin->lora_a) n += lin->lora_a->value.size() + lin->lora_b->value.size();
        }
    }
    return n;
}

void TextEncoder::reinitialize(Rng& rng) {
    // Same shapes and init scales as construction, fresh draws.
    ParamStore scratch;
    TextEncoder fresh(config_, scratch, rng);
    for (Param* p : scratch.all()) store_->get(p->name).value = p->value;
}

Var EmbeddingManager::operator()(Graph& g, Var x) const { return fc2(g, ops::gelu(fc1(g, x))); }

EmbeddingManager make_embedding_manager(ParamStore& store, std::size_t d_vis, std::size_t hidden, std::size_t out,
                                        Rng& rng) {
    EmbeddingManager e;
    e.fc1 = make_linear(store, "semantic.embed.fc1", d_vis, hidden, 1.0 / std::sqrt(static_cast<double>(d_vis)), rng);
    e.fc2 = make_linear(store, "semantic.embed.fc2", hidden, out, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    return e;
}

Projector make_projector(ParamStore& store, std::size_t in, std::size_t out, Rng& rng) {
    Projector p;
    p.map = make_linear(store, "semantic.proj.map", in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    return p;
}

Var compose_semantic_condition(Graph& g, const EmbeddingManager& embed, const TextEncoder& encoder,
                               const Projector& projector, const GlobalFeatureSeq& features) {
    const Tensor& v = features.features;
    const std::size_t d_vis = embed.fc1.in_features();
    if (v.rank() != 2 || v.cols() != d_vis || v.rows() == 0) {
        throw InvalidArgument("global features " + shape_str(v.shape()) + " do not match embedding manager width " +
                              std::to_string(d_vis));
    }
    return projector(g, encoder.encode(g, embed(g, g.constant(v))));
}

Var prompt_semantic_condition(Graph& g, const TextEncoder& encoder, const Projector& projector, int prompt_id,
                              std::size_t length) {
    return projector(g, encoder.encode(g, encoder.prompt(g, prompt_id, length)));
}

}  // namespace vmus
