//
// Flat dotted-key configuration: built-in defaults, optional config file,
// command-line overrides (same dotted names). Typed accessors translate the
// resolved map into the component config structs.
//

#pragma once

#include <panic/kvtext.hpp>
#include <panic/model.hpp>
#include <panic/synth.hpp>
#include <panic/train.hpp>
#include <panic/types.hpp>

#include <array>
#include <string>
#include <vector>

namespace panic {

inline KvMap default_config() {
    KvMap kv;
    kv.set_int("seed", 0);

    kv.set_bool("model.use_tabular", true);
    kv.set_bool("model.use_image", true);
    kv.set_int("model.nam.hidden", 32);
    kv.set_double("model.nam.mlp_dropout", 0.4);
    kv.set_double("model.nam.output_dropout", 0.1);
    // Shallow trunk with a compact receptive field: cells in the final map
    // describe their own neighbourhood, which keeps occurrence maps
    // anchored to the anatomy that produced the evidence.
    kv.set_int("model.backbone.stem_channels", 8);
    kv.set("model.backbone.channels", "16,32,32,32");
    kv.set("model.backbone.blocks", "1,1,0,0");
    kv.set("model.backbone.strides", "2,1,1,1");
    kv.set_int("model.backbone.stem_stride", 2);
    kv.set_int("model.proto.per_class", 2);
    kv.set_int("model.proto.latent", 64);
    kv.set_int("model.proto.hidden", 64);

    kv.set_double("train.lr", 0.002);
    kv.set_double("train.weight_decay", 0.0005);
    kv.set_double("train.cyclic_low", 0.1);
    kv.set_int("train.cyclic_period", 10);
    kv.set_int("train.epochs", 16);
    kv.set_int("train.batch_size", 32);
    kv.set_int("train.alternation_cadence", 1);
    kv.set_int("train.warmup_epochs", 4);
    kv.set_int("train.folds", 5);
    kv.set_int("train.fold", -1);  // -1: all folds

    kv.set_double("loss.tab", 0.01);
    kv.set_double("loss.cluster", 0.5);
    kv.set_double("loss.separation", 0.5);
    kv.set_double("loss.occurrence", 0.5);
    kv.set_double("loss.affine", 0.5);

    kv.set_int("data.size", 600);
    kv.set_int("data.dim", 32);
    kv.set_double("data.missing_rate", 0.05);
    kv.set_double("data.noise_sd", 0.3);
    kv.set_double("data.noise_smooth_sigma", 1.5);
    kv.set_double("data.blob_intensity", 1.0);
    kv.set_double("data.blob_radius", 7.0);

    kv.set_int("interpret.reference_class", 0);
    kv.set_int("interpret.grid_points", 101);
    return kv;
}

// Merge file values then flag overrides onto the defaults. Unknown keys are
// configuration errors so typos fail fast.
inline KvMap resolve_config(const std::string& config_path,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
    KvMap kv = default_config();
    if (!config_path.empty()) {
        KvMap file = KvMap::load(config_path);
        for (const auto& [k, v] : file.items()) {
            if (!kv.has(k)) throw ConfigError("unknown config key '" + k + "' in " + config_path);
            kv.set(k, v);
        }
    }
    for (const auto& [k, v] : overrides) {
        if (!kv.has(k)) throw ConfigError("unknown config key '" + k + "'");
        kv.set(k, v);
    }
    return kv;
}

namespace detail {
inline std::array<int, 4> parse_int4(const std::string& s, const std::string& key) {
    std::array<int, 4> out{};
    std::size_t pos = 0;
    for (int i = 0; i < 4; ++i) {
        const std::size_t comma = s.find(',', pos);
        const std::string tok =
            s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            out[static_cast<std::size_t>(i)] = std::stoi(tok);
        } catch (const std::exception&) {
            throw ConfigError("bad integer list for " + key + ": '" + s + "'");
        }
        if (comma == std::string::npos && i != 3)
            throw ConfigError(key + " needs 4 comma-separated integers, got '" + s + "'");
        pos = comma + 1;
    }
    return out;
}
}  // namespace detail

inline ModelConfig model_config_from(const KvMap& kv, int classes, const Grid3& grid) {
    ModelConfig mc;
    mc.classes = classes;
    mc.use_tabular = kv.get_bool_or("model.use_tabular", true);
    mc.use_image = kv.get_bool_or("model.use_image", true);
    mc.input_grid = grid;
    mc.nam.hidden = static_cast<int>(kv.get_int("model.nam.hidden"));
    mc.nam.mlp_dropout = kv.get_double("model.nam.mlp_dropout");
    mc.nam.output_dropout = kv.get_double("model.nam.output_dropout");
    mc.backbone.stem_channels = static_cast<int>(kv.get_int("model.backbone.stem_channels"));
    mc.backbone.stage_channels =
        detail::parse_int4(kv.get("model.backbone.channels"), "model.backbone.channels");
    mc.backbone.stage_blocks =
        detail::parse_int4(kv.get("model.backbone.blocks"), "model.backbone.blocks");
    mc.backbone.stage_strides =
        detail::parse_int4(kv.get("model.backbone.strides"), "model.backbone.strides");
    mc.backbone.stem_stride = static_cast<int>(kv.get_int("model.backbone.stem_stride"));
    mc.proto.classes = classes;
    mc.proto.per_class = static_cast<int>(kv.get_int("model.proto.per_class"));
    mc.proto.latent = static_cast<int>(kv.get_int("model.proto.latent"));
    mc.proto.hidden = static_cast<int>(kv.get_int("model.proto.hidden"));
    if (mc.nam.hidden < 1 || mc.proto.per_class < 1 || mc.proto.latent < 1)
        throw ConfigError("model dimensions must be positive");
    if (mc.nam.mlp_dropout < 0 || mc.nam.mlp_dropout >= 1 || mc.nam.output_dropout < 0 ||
        mc.nam.output_dropout >= 1)
        throw ConfigError("dropout rates must be in [0,1)");
    return mc;
}

inline TrainConfig train_config_from(const KvMap& kv) {
    TrainConfig tc;
    tc.lr = kv.get_double("train.lr");
    tc.weight_decay = kv.get_double("train.weight_decay");
    tc.cyclic_low = kv.get_double("train.cyclic_low");
    tc.cyclic_period = kv.get_int("train.cyclic_period");
    tc.epochs = kv.get_int("train.epochs");
    tc.batch_size = kv.get_int("train.batch_size");
    tc.alternation_cadence = kv.get_int("train.alternation_cadence");
    tc.warmup_epochs = kv.get_int("train.warmup_epochs");
    tc.validate();
    return tc;
}

inline LossWeights loss_weights_from(const KvMap& kv) {
    LossWeights lw;
    lw.tab = kv.get_double("loss.tab");
    lw.cluster = kv.get_double("loss.cluster");
    lw.separation = kv.get_double("loss.separation");
    lw.occurrence = kv.get_double("loss.occurrence");
    lw.affine = kv.get_double("loss.affine");
    lw.validate();
    return lw;
}

inline synth::SyntheticSpec synth_spec_from(const KvMap& kv) {
    synth::SyntheticSpec sp;
    sp.size = kv.get_int("data.size");
    sp.grid = Grid3::cube(kv.get_int("data.dim"));
    sp.missing_rate = kv.get_double("data.missing_rate");
    sp.noise_sd = kv.get_double("data.noise_sd");
    sp.noise_smooth_sigma = kv.get_double("data.noise_smooth_sigma");
    sp.blob_intensity = kv.get_double("data.blob_intensity");
    sp.blob_radius = kv.get_double("data.blob_radius");
    sp.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
    sp.validate();
    return sp;
}

}  // namespace panic
