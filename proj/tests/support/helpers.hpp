#pragma once

#include <string>

#include "vmus/config.hpp"
#include "vmus/layers.hpp"
#include "vmus/model.hpp"
#include "vmus/synthetic.hpp"
#include "vmus/training.hpp"

namespace vmus::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) { return gaussian(std::move(shape), scale, rng); }

// A model small enough for finite differences.
inline ModelConfig tiny_model_config() {
    ModelConfig c;
    c.backbone.vocab_size = 12;
    c.backbone.d_model = 8;
    c.backbone.n_blocks = 4;
    c.backbone.layers_per_block = 1;
    c.backbone.n_heads = 2;
    c.backbone.d_ff = 12;
    c.backbone.token_rate = 50.0;
    c.backbone.max_seconds = 0.4;
    c.encoder.d_model = 8;
    c.encoder.n_layers = 1;
    c.encoder.n_heads = 2;
    c.encoder.d_ff = 12;
    c.encoder.n_prompts = 2;
    c.d_vis = 4;
    c.embed_hidden = 6;
    c.prompt_length = 2;
    c.lora_rank = 2;
    c.lora_alpha = 4.0;
    return c;
}

// Scenario and run settings that train in seconds.
inline RunConfig tiny_run_config() {
    RunConfig c;
    c.scenario.n_classes = 2;
    c.scenario.clip_seconds = 2.0;
    c.scenario.patches = 4;
    c.scenario.d_vis = 8;
    c.scenario.vocab_size = 20;
    c.scenario.band_width = 4;
    c.n_train = 4;
    c.n_test = 2;
    c.model.backbone.d_model = 8;
    c.model.backbone.n_blocks = 2;
    c.model.backbone.layers_per_block = 1;
    c.model.backbone.n_heads = 2;
    c.model.backbone.d_ff = 8;
    c.model.encoder.n_layers = 1;
    c.model.encoder.n_heads = 2;
    c.model.encoder.d_ff = 8;
    c.model.embed_hidden = 8;
    c.model.lora_rank = 2;
    c.batch_size = 2;
    c.stage0 = {1e-2, 2, 1};
    c.stage1 = {1e-2, 2, 1};
    c.stage2 = {1e-2, 2, 1};
    return c;
}

}  // namespace vmus::test

namespace vmus::test {

struct TinyWorld {
    RunConfig config = tiny_run_config();
    std::vector<ClipRecord> train;
    std::vector<ClipRecord> test;
    std::vector<TrainingExample> examples;

    TinyWorld() {
        const ScenarioSpec& s = config.scenario;
        for (std::size_t i = 0; i < config.n_train + config.n_test; ++i) {
            const std::string id = "tiny-" + std::to_string(i);
            Rng rng(s.seed, "clip/" + id);
            ClipRecord c = generate_clip(s, id, static_cast<int>(i % s.n_classes), rng);
            (i < config.n_train ? train : test).push_back(std::move(c));
        }
        examples = make_examples(train, RhythmSource::local, s.token_rate);
    }
};

}  // namespace vmus::test
