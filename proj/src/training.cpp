#include "vmus/training.hpp"

#include <cmath>

#include "vmus/container.hpp"
#include "vmus/error.hpp"

namespace vmus {

using nlohmann::json;

void TrainConfig::validate() const {
    if (stage < 0 || stage > 2) throw InvalidArgument("stage must be 0, 1 or 2");
    if (!(schedule.peak_lr > 0.0)) throw InvalidArgument("peak_lr must be > 0");
    if (schedule.warmup_steps < 1) throw InvalidArgument("warmup_steps must be >= 1");
    if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
    if (!(cond_dropout >= 0.0 && cond_dropout < 1.0)) throw InvalidArgument("cond_dropout must lie in [0, 1)");
}

json TrainLogEntry::to_json() const { return json{{"step", step}, {"stage", stage}, {"lr", lr}, {"loss", loss}}; }

DistanceSequence rhythm_distance(const ClipRecord& clip, RhythmSource source, double token_rate) {
    if (source == RhythmSource::local) {
        DistanceSequence d = compute_distance_sequence(mean_patch_similarity(clip.local));
        d.token_rate = token_rate;
        return d;
    }
    const auto per_frame = static_cast<std::size_t>(std::llround(token_rate / clip.global.fps));
    return step_held_distance_sequence(global_similarity(clip.global.features), per_frame, token_rate);
}

std::vector<TrainingExample> make_examples(const std::vector<ClipRecord>& clips, RhythmSource source,
                                           double token_rate) {
    std::vector<TrainingExample> out;
    out.reserve(clips.size());
    for (const ClipRecord& c : clips) {
        out.push_back({c.clip_id, c.label, c.tokens, c.global, rhythm_distance(c, source, token_rate)});
    }
    return out;
}

ModelInput stage_input(const VideoMusicModel& model, const TrainingExample& ex, int stage) {
    ModelInput in;
    if (stage == 0) {
        in.semantic = SemanticSource::prompt;
        in.prompt = ex.label;
        return in;
    }
    in.semantic = SemanticSource::video;
    in.global = &ex.global;
    if (stage == 2 && model.config().rhythm) in.distance = &ex.distance;
    return in;
}

void prepare_stage1(VideoMusicModel& model, const TrainConfig& config) {
    if (model.config().embedding_manager) throw InvalidArgument("stage 1 expects a stage-0 model");
    ParamStore& store = model.params();
    model.freeze_all();
    model.attach_embedding_manager();
    store.set_trainable(Projector::kPrefix, true);
    if (config.encoder_from_scratch) {
        model.reinitialize_encoder();
        store.set_trainable(TextEncoder::kPrefix, true);
    } else {
        model.attach_lora();
    }
}

void prepare_stage2(VideoMusicModel& model, const TrainConfig& config) {
    if (!model.config().embedding_manager) throw InvalidArgument("stage 2 expects a stage-1 model");
    model.attach_rhythm(config.rhythm_mode,
                        config.no_init_technique ? RhythmInit::gaussian : RhythmInit::zero_identity);
    if (config.rhythm_mode == RhythmMode::train_first_attn) {
        for (const std::string& prefix : model.backbone().first_layer_self_attention_prefixes()) {
            model.params().set_trainable(prefix, true);
        }
    }
}

TrainResult run_training(VideoMusicModel& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                         int input_stage, const LogSink& sink) {
    config.validate();
    if (data.empty()) throw InvalidArgument("no training examples");
    ParamStore& store = model.params();
    std::vector<Param*> params;
    for (Param* p : store.all())
        if (p->trainable) params.push_back(p);
    if (params.empty()) throw InvalidArgument("nothing to train: every parameter is frozen");

    AdamW opt(config.optimizer);
    const std::string tag = "stage" + std::to_string(input_stage);
    Rng order_rng(config.seed, "order/" + tag);
    Rng dropout_rng(config.seed, "dropout/" + tag);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    long step = 0;
    for (std::size_t epoch = 0; epoch < config.schedule.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double inv = 1.0 / static_cast<double>(end - start);
            store.zero_grad();
            double loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const TrainingExample& ex = data[order[i]];
                ModelInput in = stage_input(model, ex, input_stage);
                if (input_stage == 0 && dropout_rng.uniform() < config.cond_dropout) in.semantic = SemanticSource::none;
                Graph g;
                Var l = model.loss(g, ex.tokens, in);
                loss += l.value()[0] * inv;
                g.backward(l, inv);
            }
            ++step;
            if (!std::isfinite(loss)) {
                throw NumericError("training diverged at step " + std::to_string(step) + " of " + tag +
                                   ": loss is not finite");
            }
            const double lr = lr_schedule(step, config.schedule.peak_lr, config.schedule.warmup_steps);
            opt.step(params, lr, step);
            TrainLogEntry entry{step, config.stage, lr, loss};
            result.log.push_back(entry);
            if (sink) sink(entry);
        }
    }
    store.zero_grad();
    return result;
}

TrainResult pretrain_backbone(VideoMusicModel& model, const std::vector<TrainingExample>& data,
                              const TrainConfig& config, const LogSink& sink) {
    if (model.config().embedding_manager) throw InvalidArgument("stage 0 expects a freshly built model");
    for (Param* p : model.params().all()) p->trainable = true;
    return run_training(model, data, config, 0, sink);
}

TrainResult train_stage1(VideoMusicModel& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                         const LogSink& sink) {
    prepare_stage1(model, config);
    return run_training(model, data, config, 1, sink);
}

TrainResult train_stage2(VideoMusicModel& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                         const LogSink& sink) {
    prepare_stage2(model, config);
    return run_training(model, data, config, 2, sink);
}

TrainResult train_single_stage(VideoMusicModel& model, const std::vector<TrainingExample>& data,
                               const TrainConfig& config, const LogSink& sink) {
    prepare_stage1(model, config);
    prepare_stage2(model, config);
    return run_training(model, data, config, 2, sink);
}

Container checkpoint_container(const VideoMusicModel& model, int stage, const json& extra) {
    Container c;
    c.config_json = json{{"stage", stage}, {"seed", model.seed()}, {"model", model.config().to_json()}, {"extra", extra}}
                        .dump();
    for (const Param* p : model.params().all()) c.arrays.push_back({p->name, p->value, p->trainable});
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const VideoMusicModel& model, int stage, const json& extra) {
    write_container(path, checkpoint_container(model, stage, extra));
}

Checkpoint checkpoint_from_container(const Container& c) {
    json meta;
    try {
        meta = json::parse(c.config_json);
    } catch (const json::exception& e) {
        throw ContainerError(ContainerError::Kind::corrupt, std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    if (!meta.is_object() || !meta.contains("model") || !meta.contains("stage") || !meta.contains("seed")) {
        throw ContainerError(ContainerError::Kind::corrupt, "checkpoint config lacks model/stage/seed");
    }
    Checkpoint ck;
    ck.stage = meta.at("stage").get<int>();
    ck.extra = meta.value("extra", json::object());
    ck.model = std::make_unique<VideoMusicModel>(ModelConfig::from_json(meta.at("model")),
                                                 meta.at("seed").get<std::uint64_t>());
    ParamStore& store = ck.model->params();
    for (Param* p : store.all()) {
        const NamedArray* a = c.find(p->name);
        if (a == nullptr) {
            throw ContainerError(ContainerError::Kind::missing_array, "checkpoint lacks array '" + p->name + "'", p->name);
        }
        if (a->value.shape() != p->value.shape()) {
            throw ContainerError(ContainerError::Kind::shape_mismatch,
                                 "array '" + p->name + "' has shape " + shape_str(a->value.shape()) +
                                     " but the config implies " + shape_str(p->value.shape()),
                                 p->name);
        }
        if (!a->value.all_finite()) {
            throw ContainerError(ContainerError::Kind::corrupt, "array '" + p->name + "' holds non-finite values", p->name);
        }
        p->value = a->value;
        p->trainable = a->trainable;
    }
    if (c.arrays.size() != store.size()) {
        for (const NamedArray& a : c.arrays) {
            if (!store.contains(a.name)) {
                throw ContainerError(ContainerError::Kind::corrupt, "unexpected array '" + a.name + "' in checkpoint", a.name);
            }
        }
        throw ContainerError(ContainerError::Kind::corrupt, "duplicate arrays in checkpoint");
    }
    return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_container(read_container(path)); }

}  // namespace vmus
