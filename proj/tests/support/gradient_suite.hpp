#pragma once

#include <functional>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "vmus/gradcheck.hpp"
#include "vmus/ops.hpp"

namespace vmus::test {

struct KernelResult {
    std::string name;
    int trials = 0;
    int passed = 0;
    double worst = 0.0;
    std::string worst_where;
};

// Finite-difference check of every kernel on `trials` random inputs. A
// random weighting turns tensor-valued ops into a scalar loss.
inline std::vector<KernelResult> kernel_gradient_suite(int trials, double eps, double rel_tol) {
    struct Case {
        const char* name;
        std::function<Var(std::vector<Var>&)> build;
        std::vector<Shape> shapes;
    };
    static const std::vector<int> ids{2, 0, 3, 3, 1};
    const std::vector<Case> cases = {
        {"matmul", [](std::vector<Var>& v) { return ops::matmul(v[0], v[1]); }, {{3, 4}, {4, 2}}},
        {"matmul_nt", [](std::vector<Var>& v) { return ops::matmul_nt(v[0], v[1]); }, {{3, 4}, {5, 4}}},
        {"add", [](std::vector<Var>& v) { return ops::add(v[0], v[1]); }, {{3, 4}, {3, 4}}},
        {"add_bias", [](std::vector<Var>& v) { return ops::add_bias(v[0], v[1]); }, {{3, 4}, {1, 4}}},
        {"mul", [](std::vector<Var>& v) { return ops::mul(v[0], v[1]); }, {{3, 4}, {3, 4}}},
        {"scale", [](std::vector<Var>& v) { return ops::scale(v[0], -1.7); }, {{3, 4}}},
        {"softmax_rows", [](std::vector<Var>& v) { return ops::softmax_rows(v[0]); }, {{3, 5}}},
        {"causal_mask+softmax", [](std::vector<Var>& v) { return ops::softmax_rows(ops::causal_mask(v[0])); },
         {{4, 4}}},
        {"layer_norm", [](std::vector<Var>& v) { return ops::layer_norm(v[0], v[1], v[2]); },
         {{3, 6}, {1, 6}, {1, 6}}},
        {"gelu", [](std::vector<Var>& v) { return ops::gelu(v[0]); }, {{3, 5}}},
        {"embedding", [](std::vector<Var>& v) { return ops::embedding(v[0], ids); }, {{4, 3}}},
        {"cross_entropy", [](std::vector<Var>& v) { return ops::cross_entropy(v[0], ids); }, {{5, 4}}},
        {"concat_cols", [](std::vector<Var>& v) { return ops::concat_cols({v[0], v[1]}); }, {{3, 2}, {3, 4}}},
        {"slice_cols", [](std::vector<Var>& v) { return ops::slice_cols(v[0], 1, 3); }, {{3, 5}}},
        {"sum", [](std::vector<Var>& v) { return ops::sum(v[0]); }, {{3, 5}}},
        {"mean", [](std::vector<Var>& v) { return ops::mean(v[0]); }, {{3, 5}}},
        {"variance", [](std::vector<Var>& v) { return ops::variance(v[0]); }, {{3, 5}}},
        {"cosine_rows", [](std::vector<Var>& v) { return ops::cosine_rows(v[0], v[1]); }, {{3, 5}, {3, 5}}},
        {"attention_causal", [](std::vector<Var>& v) { return ops::attention(v[0], v[1], v[2], 2, true); },
         {{4, 6}, {4, 6}, {4, 6}}},
        {"attention_cross", [](std::vector<Var>& v) { return ops::attention(v[0], v[1], v[2], 3, false); },
         {{4, 6}, {3, 6}, {3, 6}}},
    };
    std::vector<KernelResult> results;
    for (const Case& kc : cases) {
        KernelResult res{kc.name, trials, 0, 0.0, {}};
        Rng rng(2024, std::string("fd/") + kc.name);
        for (int trial = 0; trial < trials; ++trial) {
            ParamStore store;
            std::vector<Param*> params;
            for (std::size_t i = 0; i < kc.shapes.size(); ++i) {
                params.push_back(&store.add("in" + std::to_string(i), random_tensor(kc.shapes[i], rng)));
            }
            Tensor weights;
            auto f = [&](Graph& g) {
                std::vector<Var> vars;
                for (Param* p : params) vars.push_back(g.param(*p));
                Var y = kc.build(vars);
                if (weights.empty()) weights = random_tensor(y.value().shape(), rng);
                return ops::sum(ops::mul(y, g.constant(weights)));
            };
            const GradCheckReport r = finite_diff_check(f, params, eps, rel_tol);
            res.passed += r.passed;
            if (r.max_rel_error >= res.worst) {
                res.worst = r.max_rel_error;
                res.worst_where = r.worst_param + "[" + std::to_string(r.worst_index) + "] trial " + std::to_string(trial);
            }
        }
        results.push_back(res);
    }
    return results;
}

// Full next-token loss of a tiny model at stage 1 (E, LoRA, P trainable) or
// stage 2 (plus the rhythm path), checked over every trainable element.
inline GradCheckReport composed_stage_check(int stage, RhythmMode mode, double eps, double rel_tol) {
    TinyWorld w;
    w.config.stage0 = {1e-2, 2, 1};
    VideoMusicModel model(w.config.model_config(), w.config.seed);
    pretrain_backbone(model, w.examples, w.config.train_config(0));
    prepare_stage1(model, w.config.train_config(1));
    if (stage == 2) {
        TrainConfig tc = w.config.train_config(2);
        tc.rhythm_mode = mode;
        prepare_stage2(model, tc);
    }
    // Move off the zero-initialized adapters and projections so every path
    // carries gradient.
    Rng rng(5, "perturb");
    for (Param* p : model.params().all()) {
        if (!p->trainable) continue;
        for (double& v : p->value.values()) v += rng.normal(0.0, 0.05);
    }
    const TrainingExample& ex = w.examples[0];
    const std::vector<int> tokens(ex.tokens.begin(), ex.tokens.begin() + 24);
    std::vector<Param*> params;
    for (Param* p : model.params().all())
        if (p->trainable) params.push_back(p);
    auto f = [&](Graph& g) { return model.loss(g, tokens, stage_input(model, ex, stage)); };
    return finite_diff_check(f, params, eps, rel_tol);
}

}  // namespace vmus::test
