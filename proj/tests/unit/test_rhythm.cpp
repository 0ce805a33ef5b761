#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "vmus/error.hpp"
#include "vmus/rhythm.hpp"
#include "vmus/training.hpp"

using namespace vmus;

TEST_CASE("mean patch similarity examples") {
    SUBCASE("hand example with two patches") {
        LocalFeatureSeq seq{Tensor({2, 2, 2}, std::vector<double>{1, 0, 0, 1, 1, 0, 1, 0}), 25.0, "x"};
        const auto sim = mean_patch_similarity(seq);
        REQUIRE(sim.size() == 1);
        CHECK(sim[0] == 0.5);
    }
    SUBCASE("identical frames") {
        Rng rng(1, "x");
        Tensor frame = test::random_tensor({1, 3, 5}, rng);
        Tensor f({2, 3, 5});
        std::copy(frame.values().begin(), frame.values().end(), f.data());
        std::copy(frame.values().begin(), frame.values().end(), f.data() + 15);
        const auto sim = mean_patch_similarity({f, 25.0, "y"});
        REQUIRE(sim.size() == 1);
        CHECK(sim[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("single frame") {
        CHECK(mean_patch_similarity({Tensor({1, 2, 2}, 1.0), 25.0, "z"}).empty());
    }
    SUBCASE("zero-norm patch is reported by frame and patch") {
        Tensor f({3, 2, 2}, 1.0);
        f[(2 * 2 + 1) * 2] = 0.0;
        f[(2 * 2 + 1) * 2 + 1] = 0.0;
        try {
            mean_patch_similarity({f, 25.0, "w"});
            FAIL("expected InvalidArgument");
        } catch (const InvalidArgument& e) {
            const std::string msg = e.what();
            CHECK(msg.find("frame 1/2") != std::string::npos);
            CHECK(msg.find("patch 1") != std::string::npos);
        }
    }
}

TEST_CASE("global similarity examples") {
    CHECK(global_similarity(Tensor::matrix(2, 3, std::vector<double>{1, 2, 3, 1, 2, 3}))[0] ==
          doctest::Approx(1.0).epsilon(1e-15));
    CHECK(global_similarity(Tensor::matrix(2, 2, std::vector<double>{1, 0, 0, 1}))[0] == 0.0);
    CHECK(global_similarity(Tensor::matrix(1, 2, 1.0)).empty());
    CHECK_THROWS_AS(global_similarity(Tensor::matrix(2, 2, std::vector<double>{1, 0, 0, 0})), InvalidArgument);
}

TEST_CASE("distance sequence examples") {
    const std::vector<double> a{0.9, 0.8};
    const auto d = compute_distance_sequence(a).d;
    REQUIRE(d.size() == 6);
    // 1 - 0.9 and 1 - 0.8 are computed in double arithmetic, as by hand
    const std::vector<double> expected{0.0, 0.0, 1.0 - 0.9, 0.0, 1.0 - 0.8, 0.0};
    CHECK(d == expected);
    CHECK(std::abs(d[2] - 0.1) < 1e-15);
    CHECK(std::abs(d[4] - 0.2) < 1e-15);
    CHECK(compute_distance_sequence(std::vector<double>{}).d == std::vector<double>{0.0, 0.0});
    CHECK(compute_distance_sequence(std::vector<double>{1, 1, 1}).d == std::vector<double>(8, 0.0));
    CHECK_THROWS_AS(compute_distance_sequence(std::vector<double>{0.5, 1.5}), InvalidArgument);
    CHECK_THROWS_AS(compute_distance_sequence(std::vector<double>{-1.01}), InvalidArgument);
    CHECK(compute_distance_sequence(std::vector<double>{}).token_rate == 50.0);
}

TEST_CASE("distance sequence invariants on random similarities") {
    Rng rng(2, "sims");
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> sim(rng.index(60));
        for (double& s : sim) s = rng.uniform(-1.0, 1.0);
        if (trial % 7 == 0 && !sim.empty()) sim[0] = -1.0;
        const auto d = compute_distance_sequence(sim).d;
        REQUIRE(d.size() == 2 * (sim.size() + 1));
        CHECK(d[0] == 0.0);
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (i % 2 == 1) CHECK(d[i] == 0.0);
            CHECK(d[i] >= 0.0);
            CHECK(d[i] <= 2.0);
        }
        for (std::size_t i = 0; i < sim.size(); ++i) CHECK(d[2 * (i + 1)] == 1.0 - sim[i]);
    }
}

TEST_CASE("step-held and fitted distances") {
    const auto d = step_held_distance_sequence(std::vector<double>{0.5}, 3, 50.0).d;
    CHECK(d == std::vector<double>{0, 0, 0, 0.5, 0.5, 0.5});
    DistanceSequence s{{0.1, 0.0, 0.3}, 50.0};
    CHECK(fit_distance(s, 5) == std::vector<double>{0.1, 0.0, 0.3, 0.0, 0.0});
    CHECK(fit_distance(s, 2) == std::vector<double>{0.1, 0.0});
}

TEST_CASE("fresh chain yields zero conditions and links are exact identities") {
    ParamStore store;
    Rng rng(3, "chain");
    RhythmChain chain(store, 6, 3, RhythmInit::zero_identity, rng);
    Rng data(4, "data");
    DistanceSequence d;
    for (int i = 0; i < 40; ++i) d.d.push_back(data.uniform(0.0, 2.0));
    for (const Tensor& f : build_rhythm_conditions(d, chain, 3)) {
        CHECK(f.rows() == 40);
        CHECK(f.cols() == 6);
        for (double v : f.values()) CHECK(v == 0.0);
    }
    for (std::size_t j = 0; j < chain.links(); ++j) {
        for (int trial = 0; trial < 50; ++trial) {
            const Tensor x = test::random_tensor({7, 6}, data, std::pow(10.0, data.uniform(-6.0, 6.0)));
            const Tensor y = chain.link(j).apply(x);
            for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(y[i] == x[i]);
        }
    }
    CHECK_THROWS_AS(build_rhythm_conditions(d, chain, 2), InvalidArgument);
}

TEST_CASE("trained projector with identity links repeats O(d) in every block") {
    ParamStore store;
    Rng rng(5, "chain");
    RhythmChain chain(store, 4, 3, RhythmInit::zero_identity, rng);
    Rng data(6, "data");
    store.get("rhythm.proj.weight").value = test::random_tensor({1, 4}, data);
    store.get("rhythm.proj.bias").value = test::random_tensor({1, 4}, data);
    DistanceSequence d{{0.0, 0.0, 0.4, 0.0, 1.2, 0.0}, 50.0};
    const auto out = build_rhythm_conditions(d, chain, 3);
    const Tensor od = chain.projector().apply(Tensor::column(d.d));
    for (const Tensor& f : out) CHECK(f.identical(od));
}

TEST_CASE("random chain equals a direct nested evaluation") {
    ParamStore store;
    Rng rng(7, "chain");
    RhythmChain chain(store, 5, 3, RhythmInit::gaussian, rng);
    Rng data(8, "data");
    DistanceSequence d;
    for (int i = 0; i < 12; ++i) d.d.push_back(data.uniform(0.0, 2.0));
    const auto out = build_rhythm_conditions(d, chain, 3);
    const Tensor& ow = store.get("rhythm.proj.weight").value;
    const Tensor& ob = store.get("rhythm.proj.bias").value;
    for (std::size_t t = 0; t < d.d.size(); ++t) {
        std::vector<double> h(5);
        for (std::size_t c = 0; c < 5; ++c) h[c] = d.d[t] * ow(0, c) + ob(0, c);
        for (std::size_t j = 0; j < 3; ++j) {
            const Tensor& w = store.get("rhythm.link" + std::to_string(j) + ".weight").value;
            const Tensor& b = store.get("rhythm.link" + std::to_string(j) + ".bias").value;
            std::vector<double> next(5);
            for (std::size_t c = 0; c < 5; ++c) {
                double s = b(0, c);
                for (std::size_t k = 0; k < 5; ++k) s += h[k] * w(k, c);
                next[c] = s;
            }
            h = next;
            for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(out[j](t, c) - h[c]) <= 1e-12);
        }
    }
}

TEST_CASE("gaussian initialization is nonzero") {
    ParamStore store;
    Rng rng(9, "chain");
    RhythmChain chain(store, 4, 2, RhythmInit::gaussian, rng);
    DistanceSequence d{{0.5, 0.0}, 50.0};
    bool nonzero = false;
    for (const Tensor& f : build_rhythm_conditions(d, chain, 2)) {
        for (double v : f.values()) nonzero |= v != 0.0;
    }
    CHECK(nonzero);
}

TEST_CASE("attaching a fresh rhythm path leaves every logit unchanged") {
    Rng data(10, "data");
    for (RhythmMode mode : {RhythmMode::frozen_inattention, RhythmMode::train_first_attn}) {
        ModelConfig mc = test::tiny_model_config();
        mc.embedding_manager = true;
        VideoMusicModel model(mc, 11);
        // Perturb every parameter so the check is not at a special point.
        for (Param* p : model.params().all()) {
            for (double& v : p->value.values()) v += data.normal(0.0, 0.1);
        }
        std::vector<std::vector<int>> tokens;
        std::vector<GlobalFeatureSeq> feats;
        std::vector<DistanceSequence> dists;
        std::vector<Tensor> before;
        for (int i = 0; i < 20; ++i) {
            std::vector<int> t(1 + data.index(mc.backbone.max_tokens()));
            for (int& x : t) x = static_cast<int>(data.index(mc.backbone.vocab_size));
            tokens.push_back(t);
            feats.push_back({test::random_tensor({2, mc.d_vis}, data), 1.0, "f"});
            std::vector<double> sim(t.size() / 2);
            for (double& s : sim) s = data.uniform(-1.0, 1.0);
            dists.push_back(compute_distance_sequence(sim));
        }
        auto input = [&](int i) {
            ModelInput in;
            in.semantic = SemanticSource::video;
            in.global = &feats[i];
            in.distance = &dists[i];
            return in;
        };
        for (int i = 0; i < 20; ++i) before.push_back(model.logits(tokens[i], input(i)));
        model.attach_rhythm(mode, RhythmInit::zero_identity);
        for (int i = 0; i < 20; ++i) CHECK(model.logits(tokens[i], input(i)).identical(before[i]));
    }
}

TEST_CASE("rhythm distances of generated clips satisfy the structural invariants") {
    ScenarioSpec spec;
    for (int i = 0; i < 10; ++i) {
        Rng rng(7, "clip/r" + std::to_string(i));
        const ClipRecord clip = generate_clip(spec, "r" + std::to_string(i), i % spec.n_classes, rng);
        const auto d = rhythm_distance(clip, RhythmSource::local, 50.0).d;
        REQUIRE(d.size() == 2 * clip.local.frames());
        CHECK(d.size() == clip.tokens.size());
        for (std::size_t t = 0; t < d.size(); ++t) {
            if (t % 2 == 1) CHECK(d[t] == 0.0);
            CHECK(d[t] >= 0.0);
            CHECK(d[t] <= 2.0);
        }
        const auto g = rhythm_distance(clip, RhythmSource::global, 50.0).d;
        CHECK(g.size() == clip.tokens.size());
    }
}
