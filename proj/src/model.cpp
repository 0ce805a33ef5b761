#include "vmus/model.hpp"

#include "vmus/error.hpp"
#include "vmus/ops.hpp"

namespace vmus {

using nlohmann::json;

std::string to_string(RhythmMode m) {
    return m == RhythmMode::frozen_inattention ? "frozen-inattention" : "train-first-attn";
}
std::string to_string(RhythmSource s) { return s == RhythmSource::local ? "local" : "global"; }
std::string to_string(RhythmInit i) { return i == RhythmInit::zero_identity ? "zero-identity" : "gaussian"; }

RhythmMode parse_rhythm_mode(const std::string& s) {
    if (s == "frozen-inattention") return RhythmMode::frozen_inattention;
    if (s == "train-first-attn") return RhythmMode::train_first_attn;
    throw InvalidArgument("unknown rhythm mode '" + s + "' (expected frozen-inattention or train-first-attn)");
}
RhythmSource parse_rhythm_source(const std::string& s) {
    if (s == "local") return RhythmSource::local;
    if (s == "global") return RhythmSource::global;
    throw InvalidArgument("unknown rhythm source '" + s + "' (expected local or global)");
}
RhythmInit parse_rhythm_init(const std::string& s) {
    if (s == "zero-identity") return RhythmInit::zero_identity;
    if (s == "gaussian") return RhythmInit::gaussian;
    throw InvalidArgument("unknown rhythm init '" + s + "'");
}

void ModelConfig::validate() const {
    backbone.validate();
    encoder.validate();
    if (d_vis == 0 || embed_hidden == 0 || prompt_length == 0) {
        throw InvalidArgument("d_vis, embed_hidden and prompt_length must be >= 1");
    }
    if (lora && !embedding_manager) throw InvalidArgument("LoRA requires the embedding manager");
    if (!(lora_alpha > 0.0)) throw InvalidArgument("lora_alpha must be > 0");
}

json ModelConfig::to_json() const {
    return json{
        {"vocab_size", backbone.vocab_size},
        {"d_model", backbone.d_model},
        {"n_blocks", backbone.n_blocks},
        {"layers_per_block", backbone.layers_per_block},
        {"n_heads", backbone.n_heads},
        {"d_ff", backbone.d_ff},
        {"token_rate", backbone.token_rate},
        {"max_seconds", backbone.max_seconds},
        {"encoder_d_model", encoder.d_model},
        {"encoder_layers", encoder.n_layers},
        {"encoder_heads", encoder.n_heads},
        {"encoder_d_ff", encoder.d_ff},
        {"n_prompts", encoder.n_prompts},
        {"d_vis", d_vis},
        {"embed_hidden", embed_hidden},
        {"prompt_length", prompt_length},
        {"lora_rank", lora_rank},
        {"lora_alpha", lora_alpha},
        {"embedding_manager", embedding_manager},
        {"lora", lora},
        {"rhythm", rhythm},
        {"rhythm_mode", to_string(rhythm_mode)},
        {"rhythm_init", to_string(rhythm_init)},
    };
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    try {
        c.backbone.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.backbone.d_model = j.at("d_model").get<std::size_t>();
        c.backbone.n_blocks = j.at("n_blocks").get<std::size_t>();
        c.backbone.layers_per_block = j.at("layers_per_block").get<std::size_t>();
        c.backbone.n_heads = j.at("n_heads").get<std::size_t>();
        c.backbone.d_ff = j.at("d_ff").get<std::size_t>();
        c.backbone.token_rate = j.at("token_rate").get<double>();
        c.backbone.max_seconds = j.at("max_seconds").get<double>();
        c.encoder.d_model = j.at("encoder_d_model").get<std::size_t>();
        c.encoder.n_layers = j.at("encoder_layers").get<std::size_t>();
        c.encoder.n_heads = j.at("encoder_heads").get<std::size_t>();
        c.encoder.d_ff = j.at("encoder_d_ff").get<std::size_t>();
        c.encoder.n_prompts = j.at("n_prompts").get<std::size_t>();
        c.d_vis = j.at("d_vis").get<std::size_t>();
        c.embed_hidden = j.at("embed_hidden").get<std::size_t>();
        c.prompt_length = j.at("prompt_length").get<std::size_t>();
        c.lora_rank = j.at("lora_rank").get<std::size_t>();
        c.lora_alpha = j.at("lora_alpha").get<double>();
        c.embedding_manager = j.at("embedding_manager").get<bool>();
        c.lora = j.at("lora").get<bool>();
        c.rhythm = j.at("rhythm").get<bool>();
        c.rhythm_mode = parse_rhythm_mode(j.at("rhythm_mode").get<std::string>());
        c.rhythm_init = parse_rhythm_init(j.at("rhythm_init").get<std::string>());
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

VideoMusicModel::VideoMusicModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), store_(std::make_unique<ParamStore>()) {
    config.validate();
    config_.embedding_manager = config_.lora = config_.rhythm = false;
    Rng rb = init_rng("backbone");
    backbone_ = std::make_unique<Backbone>(config.backbone, *store_, rb);
    Rng re = init_rng("encoder");
    encoder_ = std::make_unique<TextEncoder>(config.encoder, *store_, re);
    Rng rp = init_rng("projector");
    projector_ = std::make_unique<Projector>(make_projector(*store_, config.encoder.d_model, config.backbone.d_model, rp));
    if (config.embedding_manager) attach_embedding_manager();
    if (config.lora) {
        store_->set_trainable(TextEncoder::kPrefix, false);
        attach_lora();
    }
    if (config.rhythm) attach_rhythm(config.rhythm_mode, config.rhythm_init);
}

void VideoMusicModel::attach_embedding_manager() {
    if (embed_) throw InvalidArgument("embedding manager already attached");
    Rng r = init_rng("embed");
    embed_ = std::make_unique<EmbeddingManager>(
        make_embedding_manager(*store_, config_.d_vis, config_.embed_hidden, config_.encoder.d_model, r));
    config_.embedding_manager = true;
}

void VideoMusicModel::attach_lora() {
    Rng r = init_rng("lora");
    encoder_->inject_lora(*store_, config_.lora_rank, config_.lora_alpha, r);
    config_.lora = true;
}

void VideoMusicModel::attach_rhythm(RhythmMode mode, RhythmInit init) {
    if (chain_ || injector_) throw InvalidArgument("rhythm path already attached");
    Rng r = init_rng("rhythm");
    const auto& bc = config_.backbone;
    if (mode == RhythmMode::frozen_inattention) {
        chain_ = std::make_unique<RhythmChain>(*store_, bc.d_model, bc.rhythm_block_count(), init, r);
    } else {
        injector_ = std::make_unique<FirstLayerInjector>(*store_, bc.d_model, bc.n_blocks, init, r);
    }
    config_.rhythm = true;
    config_.rhythm_mode = mode;
    config_.rhythm_init = init;
}

void VideoMusicModel::reinitialize_encoder() {
    if (encoder_->has_lora()) throw InvalidArgument("cannot reinitialize an encoder that carries LoRA adapters");
    Rng r = init_rng("encoder-scratch");
    encoder_->reinitialize(r);
}

void VideoMusicModel::freeze_backbone() { store_->set_trainable(Backbone::kPrefix, false); }

void VideoMusicModel::freeze_all() {
    for (Param* p : store_->all()) p->trainable = false;
}

std::optional<Var> VideoMusicModel::semantic(Graph& g, const ModelInput& in) const {
    switch (in.semantic) {
        case SemanticSource::none:
            return std::nullopt;
        case SemanticSource::prompt:
            if (in.prompt < 0 || static_cast<std::size_t>(in.prompt) >= config_.encoder.n_prompts) {
                throw InvalidArgument("prompt id " + std::to_string(in.prompt) + " out of range");
            }
            return prompt_semantic_condition(g, *encoder_, *projector_, in.prompt, config_.prompt_length);
        case SemanticSource::video:
            if (!embed_) throw InvalidArgument("video conditioning requires the embedding manager");
            if (in.global == nullptr) throw InvalidArgument("video conditioning requires global features");
            return compose_semantic_condition(g, *embed_, *encoder_, *projector_, *in.global);
    }
    return std::nullopt;
}

std::vector<Var> VideoMusicModel::additions(Graph& g, const ModelInput& in, std::size_t length) const {
    if (!config_.rhythm || in.distance == nullptr) return {};
    const std::vector<double> d = fit_distance(*in.distance, length);
    Var column = g.constant(Tensor::column(d));
    return chain_ ? chain_->build(g, column) : injector_->build(g, column);
}

Var VideoMusicModel::logits(Graph& g, std::span<const int> tokens, const ModelInput& in) const {
    const auto sem = semantic(g, in);
    const auto add = additions(g, in, tokens.size());
    if (injector_) return backbone_->forward_with(g, tokens, sem, add);
    return backbone_->forward(g, tokens, sem, add);
}

Var VideoMusicModel::loss(Graph& g, std::span<const int> tokens, const ModelInput& in) const {
    return ops::cross_entropy(logits(g, tokens, in), tokens);
}

Tensor VideoMusicModel::logits(std::span<const int> tokens, const ModelInput& in) const {
    Graph g(false);
    return logits(g, tokens, in).value();
}

std::vector<int> VideoMusicModel::generate(const ModelInput& in, std::size_t length, const Sampling& sampling,
                                           Rng& rng) const {
    Graph g(false);
    const auto sem = semantic(g, in);
    std::vector<Tensor> add;
    for (const Var& v : additions(g, in, length)) add.push_back(v.value());
    std::optional<Tensor> sem_value;
    if (sem) sem_value = sem->value();
    return backbone_->generate_with(sem_value ? &*sem_value : nullptr, add, length, sampling, rng);
}

}  // namespace vmus
