#include "vmus/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "vmus/error.hpp"
#include "vmus/kernels.hpp"
#include "vmus/ops.hpp"

namespace vmus {

std::size_t BackboneConfig::max_tokens() const {
    return static_cast<std::size_t>(std::llround(token_rate * max_seconds));
}

void BackboneConfig::validate() const {
    if (vocab_size < 2) throw InvalidArgument("vocab_size must be >= 2");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
        throw InvalidArgument("d_model " + std::to_string(d_model) + " must be divisible by n_heads " +
                              std::to_string(n_heads));
    }
    if (n_blocks == 0 || layers_per_block == 0) throw InvalidArgument("n_blocks and layers_per_block must be >= 1");
    if (d_ff == 0) throw InvalidArgument("d_ff must be >= 1");
    if (!(token_rate > 0.0) || !(max_seconds > 0.0)) throw InvalidArgument("token_rate and max_seconds must be > 0");
}

int argmax_token(std::span<const double> logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<int>(best);
}

int sample_token(std::span<const double> logits, const Sampling& sampling, Rng& rng) {
    if (sampling.mode == Sampling::Mode::greedy) return argmax_token(logits);
    if (sampling.k == 0) throw InvalidArgument("top_k sampling needs k >= 1");
    if (!(sampling.temperature > 0.0)) throw InvalidArgument("top_k sampling needs temperature > 0");
    std::vector<std::size_t> order(logits.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t k = std::min(sampling.k, logits.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
    std::vector<double> probs(k);
    for (std::size_t i = 0; i < k; ++i) probs[i] = logits[order[i]] / sampling.temperature;
    kernels::softmax_inplace(probs);
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(order[i]);
    }
    return static_cast<int>(order[0]);
}

Backbone::Backbone(const BackboneConfig& config, ParamStore& store, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.d_model;
    const std::size_t total_layers = config_.n_blocks * config_.layers_per_block;
    const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double out_std = in_std / std::sqrt(2.0 * static_cast<double>(total_layers));
    token_embedding_ = &store.add("backbone.token_embedding", gaussian({config_.vocab_size + 1, d}, 0.5, rng));
    null_condition_ = &store.add("backbone.null_condition", gaussian({1, d}, 1.0, rng));
    blocks_.resize(config_.n_blocks);
    for (std::size_t b = 0; b < config_.n_blocks; ++b) {
        for (std::size_t l = 0; l < config_.layers_per_block; ++l) {
            const std::string p = "backbone.block" + std::to_string(b) + ".layer" + std::to_string(l) + ".";
            Layer layer;
            layer.ln_self = make_layer_norm(store, p + "ln_self", d, config_.ln_eps);
            layer.self_attn = make_attention(store, p + "self_attn", d, config_.n_heads, out_std, rng);
            layer.ln_cross = make_layer_norm(store, p + "ln_cross", d, config_.ln_eps);
            layer.cross_attn = make_attention(store, p + "cross_attn", d, config_.n_heads, out_std, rng);
            layer.ln_ff = make_layer_norm(store, p + "ln_ff", d, config_.ln_eps);
            layer.ff = make_feed_forward(store, p + "ff", d, config_.d_ff, out_std, rng);
            blocks_[b].push_back(layer);
        }
    }
    ln_final_ = make_layer_norm(store, "backbone.ln_final", d, config_.ln_eps);
    head_ = make_linear(store, "backbone.head", d, config_.vocab_size, in_std, rng, /*with_bias=*/false);
}

void Backbone::check_tokens(std::span<const int> tokens) const {
    if (tokens.size() > config_.max_tokens()) {
        throw InvalidArgument("sequence length " + std::to_string(tokens.size()) + " exceeds max_tokens " +
                              std::to_string(config_.max_tokens()));
    }
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
            throw InvalidArgument("token id " + std::to_string(t) + " outside vocabulary of " +
                                  std::to_string(config_.vocab_size));
        }
    }
}

Var Backbone::embed(Graph& g, std::span<const int> tokens) const {
    check_tokens(tokens);
    std::vector<int> inputs(tokens.size());
    if (!inputs.empty()) {
        inputs[0] = config_.bos_token();
        std::copy(tokens.begin(), tokens.end() - 1, inputs.begin() + 1);
    }
    Var e = ops::embedding(g.param(*token_embedding_), inputs);
    return ops::add(e, g.constant(sinusoidal_positions(tokens.size(), config_.d_model)));
}

Var Backbone::memory(Graph& g, std::optional<Var> semantic) const {
    if (!semantic) return g.param(*null_condition_);
    const Tensor& s = semantic->value();
    if (s.rank() != 2 || s.cols() != config_.d_model || s.rows() == 0) {
        throw InvalidArgument("semantic condition must be S x " + std::to_string(config_.d_model) + ", got " +
                              shape_str(s.shape()));
    }
    return *semantic;
}

Var Backbone::run_layer(Graph& g, std::size_t block, std::size_t layer, Var h, Var memory,
                        ForwardTrace* trace) const {
    const Layer& L = blocks_.at(block).at(layer);
    auto note = [&](ForwardEvent::Kind k) {
        if (trace) trace->push_back({k, block, layer});
    };
    Var a = L.ln_self(g, h);
    h = ops::add(h, L.self_attn(g, a, a, /*causal=*/true));
    note(ForwardEvent::Kind::self_attention);
    h = ops::add(h, L.cross_attn(g, L.ln_cross(g, h), memory, /*causal=*/false));
    note(ForwardEvent::Kind::cross_attention);
    h = ops::add(h, L.ff(g, L.ln_ff(g, h)));
    note(ForwardEvent::Kind::feed_forward);
    return h;
}

Var Backbone::run_block(Graph& g, std::size_t block, Var h, Var memory, ForwardTrace* trace) const {
    for (std::size_t l = 0; l < config_.layers_per_block; ++l) h = run_layer(g, block, l, h, memory, trace);
    return h;
}

Var Backbone::head(Graph& g, Var h) const { return head_(g, ln_final_(g, h)); }

Var Backbone::forward_with(Graph& g, std::span<const int> tokens, std::optional<Var> semantic,
                           std::span<const Var> additions, ForwardTrace* trace) const {
    if (tokens.empty()) throw InvalidArgument("forward: empty token sequence");
    if (additions.size() > config_.n_blocks) throw InvalidArgument("more block additions than blocks");
    for (const Var& a : additions) {
        const Tensor& v = a.value();
        if (v.rank() != 2 || v.rows() != tokens.size() || v.cols() != config_.d_model) {
            throw InvalidArgument("rhythm condition shape " + shape_str(v.shape()) + " does not match sequence of " +
                                  std::to_string(tokens.size()) + " x " + std::to_string(config_.d_model));
        }
    }
    Var mem = memory(g, semantic);
    Var h = embed(g, tokens);
    for (std::size_t b = 0; b < config_.n_blocks; ++b) {
        if (b < additions.size()) {
            h = ops::add(h, additions[b]);
            if (trace) trace->push_back({ForwardEvent::Kind::in_attention, b, 0});
        }
        h = run_block(g, b, h, mem, trace);
    }
    return head(g, h);
}

Var Backbone::forward(Graph& g, std::span<const int> tokens, std::optional<Var> semantic,
                      std::span<const Var> rhythm, ForwardTrace* trace) const {
    if (!rhythm.empty() && rhythm.size() != config_.rhythm_block_count()) {
        throw InvalidArgument("expected " + std::to_string(config_.rhythm_block_count()) +
                              " rhythm conditions, got " + std::to_string(rhythm.size()));
    }
    return forward_with(g, tokens, semantic, rhythm, trace);
}

Tensor Backbone::forward(std::span<const int> tokens, const ConditionBundle& cond) const {
    Graph g(false);
    std::optional<Var> sem;
    if (cond.semantic) sem = g.constant(*cond.semantic);
    std::vector<Var> rhythm;
    for (const Tensor& r : cond.rhythm) rhythm.push_back(g.constant(r));
    return forward(g, tokens, sem, rhythm).value();
}

std::vector<std::string> Backbone::first_layer_self_attention_prefixes() const {
    std::vector<std::string> out;
    for (std::size_t b = 0; b < config_.n_blocks; ++b) {
        out.push_back("backbone.block" + std::to_string(b) + ".layer0.self_attn.");
    }
    return out;
}

void Backbone::check_additions(std::span<const Tensor> additions, std::size_t length) const {
    if (additions.size() > config_.n_blocks) throw InvalidArgument("more block additions than blocks");
    for (const Tensor& a : additions) {
        if (a.rank() != 2 || a.cols() != config_.d_model || a.rows() < length) {
            throw InvalidArgument("rhythm condition " + shape_str(a.shape()) + " does not cover " +
                                  std::to_string(length) + " steps");
        }
    }
}

// Incremental decoder: one position per step, keys/values cached per layer.
class Backbone::Session {
public:
    Session(const Backbone& model, const Tensor* semantic, std::span<const Tensor> additions)
        : model_(model), additions_(additions) {
        const auto& cfg = model.config_;
        const Tensor& mem = semantic ? *semantic : model.null_condition_->value;
        if (mem.rank() != 2 || mem.cols() != cfg.d_model) throw InvalidArgument("semantic condition width mismatch");
        const std::size_t n_layers = cfg.n_blocks * cfg.layers_per_block;
        keys_.assign(n_layers, Tensor::matrix(cfg.max_tokens(), cfg.d_model));
        values_ = keys_;
        for (const auto& block : model.blocks_) {
            for (const Layer& L : block) {
                mem_keys_.push_back(L.cross_attn.key.apply(mem));
                mem_values_.push_back(L.cross_attn.value.apply(mem));
            }
        }
    }

    // Logits (1 x vocab) for position pos_ given the token consumed there.
    Tensor step(int input_token) {
        const auto& cfg = model_.config_;
        if (pos_ >= cfg.max_tokens()) throw InvalidArgument("decoder exceeded max_tokens");
        const std::size_t d = cfg.d_model;
        Tensor h = Tensor::matrix(1, d);
        const auto emb = model_.token_embedding_->value.row(static_cast<std::size_t>(input_token));
        const Tensor pe = sinusoidal_positions(1, d, pos_);
        for (std::size_t c = 0; c < d; ++c) h[c] = emb[c] + pe[c];
        std::size_t flat = 0;
        for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
            if (b < additions_.size()) {
                const auto add = additions_[b].row(pos_);
                for (std::size_t c = 0; c < d; ++c) h[c] += add[c];
            }
            for (const Layer& L : model_.blocks_[b]) {
                Tensor a = L.ln_self.apply(h);
                Tensor q = L.self_attn.query.apply(a);
                Tensor k = L.self_attn.key.apply(a);
                Tensor v = L.self_attn.value.apply(a);
                std::copy(k.values().begin(), k.values().end(), keys_[flat].row(pos_).begin());
                std::copy(v.values().begin(), v.values().end(), values_[flat].row(pos_).begin());
                kernels::add_inplace(h, L.self_attn.out.apply(attend(q, keys_[flat], values_[flat], pos_ + 1,
                                                                     L.self_attn.heads)));
                Tensor c = L.ln_cross.apply(h);
                Tensor qc = L.cross_attn.query.apply(c);
                kernels::add_inplace(h, L.cross_attn.out.apply(attend(qc, mem_keys_[flat], mem_values_[flat],
                                                                      mem_keys_[flat].rows(), L.cross_attn.heads)));
                kernels::add_inplace(h, L.ff.apply(L.ln_ff.apply(h)));
                ++flat;
            }
        }
        ++pos_;
        return model_.head_.apply(model_.ln_final_.apply(h));
    }

private:
    static Tensor attend(const Tensor& q, const Tensor& keys, const Tensor& values, std::size_t count,
                         std::size_t heads) {
        const std::size_t width = q.cols();
        const std::size_t hd = width / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        Tensor out = Tensor::matrix(1, width);
        std::vector<double> w(count);
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < count; ++i) {
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) s += q[h * hd + c] * keys(i, h * hd + c);
                w[i] = s * scale;
            }
            kernels::softmax_inplace(w);
            for (std::size_t i = 0; i < count; ++i) {
                for (std::size_t c = 0; c < hd; ++c) out[h * hd + c] += w[i] * values(i, h * hd + c);
            }
        }
        return out;
    }

    const Backbone& model_;
    std::span<const Tensor> additions_;
    std::vector<Tensor> keys_, values_;
    std::vector<Tensor> mem_keys_, mem_values_;
    std::size_t pos_ = 0;
};

std::vector<int> Backbone::generate_with(const Tensor* semantic, std::span<const Tensor> additions,
                                         std::size_t length, const Sampling& sampling, Rng& rng) const {
    if (length == 0) throw InvalidArgument("generate: length must be >= 1");
    if (length > config_.max_tokens()) {
        throw InvalidArgument("generate: length " + std::to_string(length) + " exceeds max_tokens " +
                              std::to_string(config_.max_tokens()));
    }
    check_additions(additions, length);
    Session session(*this, semantic, additions);
    std::vector<int> out;
    out.reserve(length);
    int prev = config_.bos_token();
    for (std::size_t t = 0; t < length; ++t) {
        const Tensor logits = session.step(prev);
        prev = sample_token(logits.values(), sampling, rng);
        out.push_back(prev);
    }
    return out;
}

std::vector<int> Backbone::generate(const ConditionBundle& cond, std::size_t length, const Sampling& sampling,
                                    Rng& rng) const {
    if (!cond.rhythm.empty() && cond.rhythm.size() != config_.rhythm_block_count()) {
        throw InvalidArgument("expected " + std::to_string(config_.rhythm_block_count()) + " rhythm conditions");
    }
    return generate_with(cond.semantic ? &*cond.semantic : nullptr, cond.rhythm, length, sampling, rng);
}

Tensor Backbone::decode_logits(std::span<const int> tokens, const Tensor* semantic,
                               std::span<const Tensor> additions) const {
    check_tokens(tokens);
    check_additions(additions, tokens.size());
    Session session(*this, semantic, additions);
    Tensor out = Tensor::matrix(tokens.size(), config_.vocab_size);
    int prev = config_.bos_token();
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const Tensor row = session.step(prev);
        std::copy(row.values().begin(), row.values().end(), out.row(t).begin());
        prev = tokens[t];
    }
    return out;
}

}  // namespace vmus
