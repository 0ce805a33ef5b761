#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gradient_suite.hpp"
#include "helpers.hpp"
#include "vmus/container.hpp"
#include "vmus/error.hpp"
#include "vmus/gradcheck.hpp"
#include "vmus/optim.hpp"

using namespace vmus;
namespace fs = std::filesystem;

namespace {

std::uint64_t frozen_base_checksum(const VideoMusicModel& m) {
    // Backbone plus base encoder, adapters excluded.
    std::uint64_t h = 1469598103934665603ull;
    for (const Param* p : m.params().all()) {
        const bool base = p->name.rfind("backbone.", 0) == 0 ||
                          (p->name.rfind("encoder.", 0) == 0 && p->name.find(".lora_") == std::string::npos);
        if (!base) continue;
        h = (h ^ fnv1a64(p->name)) * 1099511628211ull;
        const auto bytes = std::string_view(reinterpret_cast<const char*>(p->value.data()), p->value.size() * 8);
        h = (h ^ fnv1a64(bytes)) * 1099511628211ull;
    }
    return h;
}

std::unique_ptr<VideoMusicModel> stage0_model(const test::TinyWorld& w) {
    auto m = std::make_unique<VideoMusicModel>(w.config.model_config(), w.config.seed);
    pretrain_backbone(*m, w.examples, w.config.train_config(0));
    return m;
}

std::unique_ptr<VideoMusicModel> clone(const VideoMusicModel& m, int stage) {
    return checkpoint_from_container(checkpoint_container(m, stage)).model;
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig t;
    t.stage = 3;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t = {};
    t.schedule.warmup_steps = 0;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t = {};
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
}

TEST_CASE("checkpoint round trip is bit-identical and keeps the partition") {
    test::TinyWorld w;
    auto m = stage0_model(w);
    prepare_stage1(*m, w.config.train_config(1));
    const Container c = checkpoint_container(*m, 1, {{"note", "x"}});
    const std::string bytes = encode_container(c);
    const Checkpoint back = checkpoint_from_container(decode_container(bytes));
    CHECK(back.stage == 1);
    CHECK(back.extra.at("note") == "x");
    CHECK(encode_container(checkpoint_container(*back.model, 1, {{"note", "x"}})) == bytes);
    const auto a = m->params().all();
    const auto b = back.model->params().all();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->name == b[i]->name);
        CHECK(a[i]->trainable == b[i]->trainable);
        CHECK(a[i]->value.identical(b[i]->value));
    }
    const fs::path file = fs::temp_directory_path() / ("vmus_ckpt_" + std::to_string(::getpid()) + ".vmus");
    save_checkpoint(file, *m, 1);
    CHECK(load_checkpoint(file).model->params().checksum(false, false) == m->params().checksum(false, false));
    fs::remove(file);
}

TEST_CASE("checkpoint corruption is reported by kind") {
    test::TinyWorld w;
    VideoMusicModel m(w.config.model_config(), 3);
    const Container good = checkpoint_container(m, 0);
    const std::string bytes = encode_container(good);
    auto kind_of = [](auto&& fn) {
        try {
            fn();
        } catch (const ContainerError& e) {
            return e.kind();
        }
        FAIL("expected ContainerError");
        return ContainerError::Kind::io;
    };
    using K = ContainerError::Kind;
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK(kind_of([&] { decode_container(magic); }) == K::bad_magic);
    std::string version = bytes;
    version[4] = 9;
    CHECK(kind_of([&] { decode_container(version); }) == K::bad_version);
    CHECK(kind_of([&] { decode_container(bytes.substr(0, bytes.size() - 3)); }) == K::truncated);
    CHECK(kind_of([&] { decode_container(bytes.substr(0, 10)); }) == K::truncated);

    Container missing = good;
    missing.arrays.erase(missing.arrays.begin() + 2);
    try {
        checkpoint_from_container(missing);
        FAIL("expected missing array");
    } catch (const ContainerError& e) {
        CHECK(e.kind() == K::missing_array);
        CHECK(e.array() == good.arrays[2].name);
    }

    Container reshaped = good;
    auto edited = nlohmann::json::parse(reshaped.config_json);
    edited["model"]["d_ff"] = edited["model"]["d_ff"].get<int>() + 1;
    reshaped.config_json = edited.dump();
    try {
        checkpoint_from_container(reshaped);
        FAIL("expected shape mismatch");
    } catch (const ContainerError& e) {
        CHECK(e.kind() == K::shape_mismatch);
        CHECK(e.array().find(".ff.") != std::string::npos);
        CHECK(std::string(e.what()).find(e.array()) != std::string::npos);
    }

    Container extra = good;
    extra.arrays.push_back({"stray.array", Tensor::matrix(1, 1), false});
    CHECK(kind_of([&] { checkpoint_from_container(extra); }) == K::corrupt);
    Container bad_json = good;
    bad_json.config_json = "{";
    CHECK(kind_of([&] { checkpoint_from_container(bad_json); }) == K::corrupt);
    CHECK(kind_of([&] { read_container("/nonexistent/vmus.vmus"); }) == K::io);
}

TEST_CASE("stage 0 starts near uniform, learns, and is reproducible") {
    test::TinyWorld w;
    w.config.stage0 = {1e-2, 2, 4};
    VideoMusicModel a(w.config.model_config(), w.config.seed), b(w.config.model_config(), w.config.seed);
    const auto ra = pretrain_backbone(a, w.examples, w.config.train_config(0));
    const auto rb = pretrain_backbone(b, w.examples, w.config.train_config(0));
    CHECK(std::abs(ra.first_loss() - std::log(static_cast<double>(w.config.scenario.vocab_size))) < 0.5);
    CHECK(ra.last_loss() < ra.first_loss());
    CHECK(encode_container(checkpoint_container(a, 0)) == encode_container(checkpoint_container(b, 0)));
    REQUIRE(ra.log.size() == rb.log.size());
    for (std::size_t i = 0; i < ra.log.size(); ++i) CHECK(ra.log[i].loss == rb.log[i].loss);
}

TEST_CASE("recorded learning rates follow the warmup schedule") {
    test::TinyWorld w;
    w.config.stage0 = {3e-3, 3, 3};
    VideoMusicModel m(w.config.model_config(), 1);
    const auto r = pretrain_backbone(m, w.examples, w.config.train_config(0));
    REQUIRE(r.log.size() == 6);
    for (const TrainLogEntry& e : r.log) {
        CHECK(e.lr == lr_schedule(e.step, 3e-3, 3));
        CHECK(e.stage == 0);
    }
    CHECK(r.log.front().step == 1);
    const auto j = r.log.back().to_json();
    for (const char* key : {"step", "stage", "lr", "loss"}) CHECK(j.contains(key));
}

TEST_CASE("stages freeze the backbone and base encoder") {
    test::TinyWorld w;
    auto m = stage0_model(w);
    const auto base = frozen_base_checksum(*m);
    train_stage1(*m, w.examples, w.config.train_config(1));
    for (const Param* p : m->params().all()) {
        const bool conditioning = p->name.rfind("semantic.", 0) == 0 || p->name.find(".lora_") != std::string::npos;
        CHECK_MESSAGE(p->trainable == conditioning, p->name);
    }
    CHECK(m->params().count().per_module.at("backbone").first == 0);
    CHECK(frozen_base_checksum(*m) == base);
    const auto after1 = m->params().checksum(false, true);
    train_stage2(*m, w.examples, w.config.train_config(2));
    CHECK(frozen_base_checksum(*m) == base);
    CHECK(m->params().checksum(false, true) == after1);
    for (const Param* p : m->params().all()) {
        if (p->name.rfind("rhythm.", 0) == 0) CHECK(p->trainable);
        if (p->name.rfind("backbone.", 0) == 0) CHECK(!p->trainable);
    }
}

TEST_CASE("stage 1 with a fresh adapter reproduces the pre-trained encoder") {
    test::TinyWorld w;
    auto m = stage0_model(w);
    Rng data(3, "enc");
    const Tensor x = test::random_tensor({3, m->config().encoder.d_model}, data);
    const Tensor before = m->encoder().encode(x);
    prepare_stage1(*m, w.config.train_config(1));
    CHECK(m->encoder().encode(x).identical(before));
}

TEST_CASE("encoder from scratch trains the whole encoder") {
    test::TinyWorld w;
    auto m = stage0_model(w);
    auto cfg = w.config.train_config(1);
    cfg.encoder_from_scratch = true;
    const auto enc_before = m->params().get("encoder.prompt_embedding").value;
    prepare_stage1(*m, cfg);
    CHECK(!m->encoder().has_lora());
    CHECK(m->params().get("encoder.layer0.attn.wq.weight").trainable);
    CHECK(!m->params().get("encoder.prompt_embedding").value.identical(enc_before));
}

TEST_CASE("stage 2 logits at step 0 equal stage 1 logits; without the init technique they differ") {
    test::TinyWorld w;
    auto m = stage0_model(w);
    train_stage1(*m, w.examples, w.config.train_config(1));
    for (RhythmMode mode : {RhythmMode::frozen_inattention, RhythmMode::train_first_attn}) {
        for (bool no_it : {false, true}) {
            auto s2 = clone(*m, 1);
            auto cfg = w.config.train_config(2);
            cfg.rhythm_mode = mode;
            cfg.no_init_technique = no_it;
            prepare_stage2(*s2, cfg);
            double gap = 0.0;
            for (const TrainingExample& ex : w.examples) {
                const Tensor a = m->logits(ex.tokens, stage_input(*m, ex, 1));
                const Tensor b = s2->logits(ex.tokens, stage_input(*s2, ex, 2));
                gap = std::max(gap, max_abs_diff(a, b));
            }
            if (no_it) {
                CHECK(gap > 0.0);
            } else {
                CHECK(gap == 0.0);
            }
        }
    }
}

TEST_CASE("composed stage losses pass the gradient check") {
    const GradCheckReport s1 = test::composed_stage_check(1, RhythmMode::frozen_inattention, 1e-4, 1e-3);
    CHECK_MESSAGE(s1.passed, s1.worst_param << " " << s1.max_rel_error);
    CHECK(s1.checked > 0);
    for (RhythmMode mode : {RhythmMode::frozen_inattention, RhythmMode::train_first_attn}) {
        const GradCheckReport s2 = test::composed_stage_check(2, mode, 1e-4, 1e-3);
        CHECK_MESSAGE(s2.passed, to_string(mode) << ": " << s2.worst_param << " " << s2.max_rel_error);
        CHECK(s2.checked > s1.checked);
    }
}

TEST_CASE("single-stage training runs both paths from the stage-0 model") {
    test::TinyWorld w;
    auto m = stage0_model(w);
    auto cfg = w.config.train_config(1);
    cfg.single_stage = true;
    const auto r = train_single_stage(*m, w.examples, cfg);
    CHECK(!r.log.empty());
    CHECK(m->config().embedding_manager);
    CHECK(m->config().rhythm);
    CHECK(m->config().lora);
}

TEST_CASE("stage order is enforced") {
    test::TinyWorld w;
    VideoMusicModel m(w.config.model_config(), 1);
    CHECK_THROWS_AS(prepare_stage2(m, w.config.train_config(2)), InvalidArgument);
    prepare_stage1(m, w.config.train_config(1));
    CHECK_THROWS_AS(prepare_stage1(m, w.config.train_config(1)), InvalidArgument);
    CHECK_THROWS_AS(pretrain_backbone(m, w.examples, w.config.train_config(0)), InvalidArgument);
    CHECK_THROWS_AS(run_training(m, {}, w.config.train_config(1), 1), InvalidArgument);
}

TEST_CASE("a non-finite loss aborts with the step index") {
    test::TinyWorld w;
    VideoMusicModel m(w.config.model_config(), 1);
    m.params().get("backbone.head.weight").value[0] = NAN;
    try {
        pretrain_backbone(m, w.examples, w.config.train_config(0));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
}
