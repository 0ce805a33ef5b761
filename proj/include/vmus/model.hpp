#pragma once

#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "vmus/backbone.hpp"
#include "vmus/rhythm.hpp"
#include "vmus/semantic.hpp"

namespace vmus {

enum class RhythmMode { frozen_inattention, train_first_attn };
enum class RhythmSource { local, global };

std::string to_string(RhythmMode m);
std::string to_string(RhythmSource s);
std::string to_string(RhythmInit i);
RhythmMode parse_rhythm_mode(const std::string& s);
RhythmSource parse_rhythm_source(const std::string& s);
RhythmInit parse_rhythm_init(const std::string& s);

// Dimensions plus the set of optional modules currently attached. Two
// models built from equal configs and seeds have identical parameters.
struct ModelConfig {
    BackboneConfig backbone;
    EncoderConfig encoder;
    std::size_t d_vis = 32;
    std::size_t embed_hidden = 64;
    std::size_t prompt_length = 4;
    std::size_t lora_rank = 4;
    double lora_alpha = 8.0;

    bool embedding_manager = false;
    bool lora = false;
    bool rhythm = false;
    RhythmMode rhythm_mode = RhythmMode::frozen_inattention;
    RhythmInit rhythm_init = RhythmInit::zero_identity;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

enum class SemanticSource { none, prompt, video };

struct ModelInput {
    SemanticSource semantic = SemanticSource::none;
    int prompt = 0;
    const GlobalFeatureSeq* global = nullptr;
    // Ignored when the model has no rhythm path; zero-padded or truncated
    // to the sequence length.
    const DistanceSequence* distance = nullptr;
};

class VideoMusicModel {
public:
    VideoMusicModel(const ModelConfig& config, std::uint64_t seed);
    VideoMusicModel(const VideoMusicModel&) = delete;
    VideoMusicModel& operator=(const VideoMusicModel&) = delete;

    const ModelConfig& config() const noexcept { return config_; }
    std::uint64_t seed() const noexcept { return seed_; }
    ParamStore& params() noexcept { return *store_; }
    const ParamStore& params() const noexcept { return *store_; }
    const Backbone& backbone() const noexcept { return *backbone_; }
    TextEncoder& encoder() noexcept { return *encoder_; }
    const TextEncoder& encoder() const noexcept { return *encoder_; }
    const RhythmChain* rhythm_chain() const noexcept { return chain_.get(); }

    void attach_embedding_manager();
    void attach_lora();
    void attach_rhythm(RhythmMode mode, RhythmInit init);
    void reinitialize_encoder();

    // Freezes every backbone parameter.
    void freeze_backbone();
    void freeze_all();

    std::optional<Var> semantic(Graph& g, const ModelInput& in) const;
    std::vector<Var> additions(Graph& g, const ModelInput& in, std::size_t length) const;

    Var logits(Graph& g, std::span<const int> tokens, const ModelInput& in) const;
    Var loss(Graph& g, std::span<const int> tokens, const ModelInput& in) const;
    Tensor logits(std::span<const int> tokens, const ModelInput& in) const;
    std::vector<int> generate(const ModelInput& in, std::size_t length, const Sampling& sampling, Rng& rng) const;

private:
    Rng init_rng(const std::string& part) const { return Rng(seed_, "init/" + part); }

    ModelConfig config_;
    std::uint64_t seed_;
    std::unique_ptr<ParamStore> store_;
    std::unique_ptr<Backbone> backbone_;
    std::unique_ptr<TextEncoder> encoder_;
    std::unique_ptr<Projector> projector_;
    std::unique_ptr<EmbeddingManager> embed_;
    std::unique_ptr<RhythmChain> chain_;
    std::unique_ptr<FirstLayerInjector> injector_;
};

}  // namespace vmus
