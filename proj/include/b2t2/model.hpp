#pragma once

// Model assembly: the encoder plus fusion parameters and a visual backbone,
// with the B2T2 two-class head and the Dual Encoder bilinear score.

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "b2t2/checkpoint.hpp"
#include "b2t2/data.hpp"
#include "b2t2/encoder.hpp"
#include "b2t2/fusion.hpp"
#include "b2t2/vision.hpp"

namespace b2t2 {

struct ModelConfig {
    EncoderConfig encoder;
    int visual_dim = 32;   // d
    int grid_size = 14;    // k
    BackboneKind backbone = BackboneKind::mean_patch;
    bool backbone_frozen = true;
    FusionVariant variant;
    std::uint64_t seed = 0;
};

class Model {
public:
    ModelConfig config;
    Encoder encoder;
    VisualBackbone backbone;
    PositionTables position_tables;
    ParamMap params;  // every named tensor participating in checkpoints

    Model() = default;

    explicit Model(const ModelConfig& cfg)
        : config(cfg),
          encoder(cfg.encoder, cfg.seed),
          backbone(make_backbone(cfg.backbone, cfg.visual_dim, cfg.seed,
                                 cfg.backbone_frozen)),
          position_tables(make_position_tables(cfg.grid_size, cfg.visual_dim, cfg.seed)) {
        Rng rng = make_rng(cfg.seed, 0x11c9);
        int h = cfg.encoder.hidden, d = cfg.visual_dim;
        params = encoder.params;
        params["fusion.m"] = make_tensor(
            {h, d}, detail::trunc_normal_values(static_cast<std::size_t>(h) * d, 0.02, rng),
            true);
        params["fusion.d"] = make_tensor(
            {d, h}, detail::trunc_normal_values(static_cast<std::size_t>(d) * h, 0.02, rng),
            true);
        params["fusion.a"] = make_tensor(
            {2, h}, detail::trunc_normal_values(2 * static_cast<std::size_t>(h), 0.02, rng),
            true);
        params["fusion.b"] = make_tensor({2}, {0.0, 0.0}, true);
        params["fusion.x"] = position_tables.x;
        params["fusion.y"] = position_tables.y;
        for (auto& [name, t] : backbone.params) params[name] = t;
    }

    // Parameters the optimizer touches (frozen backbone weights excluded).
    ParamMap trainable_params() {
        ParamMap out;
        for (auto& [name, t] : params)
            if (t->requires_grad) out[name] = t;
        return out;
    }

    // Visual tokens for every box of an instance: rows M (Phi + pi).
    Tensor visual_tokens(const EncodedInstance& inst, const Image& img) const {
        std::vector<Tensor> rows;
        rows.reserve(inst.boxes.size());
        for (const auto& b : inst.boxes)
            rows.push_back(visual_token(img, b, backbone, position_tables,
                                        params.at("fusion.m"),
                                        config.variant.position_embeddings));
        return stack_rows(rows);
    }

    // Class logits [logit_0, logit_1] of the B2T2 head (also used for the
    // text-only and no-boxes variants, where no visual token is added).
    Tensor class_logits(const EncodedInstance& inst, const Image& img) const {
        Tensor e = encoder.embed_tokens(inst.tokens);
        Tensor contextual;
        switch (config.variant.mode) {
            case FusionMode::full: {
                if (!inst.refmatrix.empty()) {
                    Tensor v = visual_tokens(inst, img);
                    e = fuse(e, inst.refmatrix, v);
                }
                contextual = encoder.encode(e, inst.tokens.attention_mask);
                break;
            }
            case FusionMode::late_fusion_last_layer: {
                contextual = encoder.encode(e, inst.tokens.attention_mask);
                if (!inst.refmatrix.empty()) {
                    Tensor v = visual_tokens(inst, img);
                    contextual = fuse(contextual, inst.refmatrix, v);
                }
                break;
            }
            case FusionMode::no_boxes:
            case FusionMode::text_only:
            case FusionMode::dual_encoder:
                contextual = encoder.encode(e, inst.tokens.attention_mask);
                break;
        }
        Tensor cls = Encoder::psi(contextual);
        return add(matvec(params.at("fusion.a"), cls), params.at("fusion.b"));
    }

    // p(l | I, B, R, T): softmax over the two class logits.
    Tensor class_distribution(const EncodedInstance& inst, const Image& img) const {
        return softmax(class_logits(inst, img));
    }

    // Dual Encoder: sigmoid(Psi^T D' Phi(I)); boxes and R are ignored.
    Tensor dual_score(const TokenSequence& tokens, const Image& img) const {
        Tensor contextual =
            encoder.encode(encoder.embed_tokens(tokens), tokens.attention_mask);
        Tensor cls = Encoder::psi(contextual);
        Tensor img_features = phi(img, backbone);
        Tensor bilinear = dot(img_features, matvec(params.at("fusion.d"), cls));
        return sigmoid(bilinear);
    }

    // p(l = 1 | candidate). For the dual encoder this is the sigmoid score,
    // otherwise class-1 softmax probability.
    Tensor positive_probability(const EncodedInstance& inst, const Image& img) const {
        if (config.variant.mode == FusionMode::dual_encoder)
            return dual_score(inst.tokens, img);
        return select_row(reshape(class_distribution(inst, img), {2, 1}), 1);
    }

    // Candidate score on the logit scale: logit_1 - logit_0 for the class
    // head, the raw bilinear form for the dual encoder. Ensembles sum these.
    Tensor logit_margin(const EncodedInstance& inst, const Image& img) const {
        if (config.variant.mode == FusionMode::dual_encoder) {
            Tensor contextual =
                encoder.encode(encoder.embed_tokens(inst.tokens), inst.tokens.attention_mask);
            Tensor cls = Encoder::psi(contextual);
            return dot(phi(img, backbone), matvec(params.at("fusion.d"), cls));
        }
        Tensor logits = class_logits(inst, img);
        Tensor two_col = reshape(logits, {2, 1});
        return sub(select_row(two_col, 1), select_row(two_col, 0));
    }
};

// ---------------------------------------------------------------------------
// cached Phi features — frozen backbones make crop features constants

class PhiCache {
public:
    Tensor get(const Model& model, const Image& img, const BoundingBox& b) {
        if (!model.backbone.frozen)
            return phi(crop(img, b, model.backbone.input_size), model.backbone);
        auto key = std::make_tuple(&img, b.x1, b.y1, b.x2, b.y2);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        Tensor t = phi(crop(img, b, model.backbone.input_size), model.backbone);
        cache_.emplace(std::move(key), t);
        return t;
    }

    // Visual tokens for every box of an instance, sharing cached crop
    // features: rows M (Phi + pi), same as Model::visual_tokens.
    Tensor visual_tokens(const Model& model, const EncodedInstance& inst, const Image& img) {
        std::vector<Tensor> rows;
        rows.reserve(inst.boxes.size());
        for (const auto& b : inst.boxes) {
            Tensor features = get(model, img, b);
            if (model.config.variant.position_embeddings)
                features = add(features, pi(b, model.position_tables, img.width, img.height));
            rows.push_back(matvec(model.params.at("fusion.m"), features));
        }
        return stack_rows(rows);
    }

private:
    std::map<std::tuple<const Image*, double, double, double, double>, Tensor> cache_;
};

// ---------------------------------------------------------------------------
// model config (de)serialization — sidecar metadata next to checkpoints

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["encoder"] = {{"num_layers", c.encoder.num_layers},
                    {"num_heads", c.encoder.num_heads},
                    {"hidden", c.encoder.hidden},
                    {"ffn_dim", c.encoder.ffn_dim},
                    {"vocab_size", c.encoder.vocab_size},
                    {"type_vocab", c.encoder.type_vocab},
                    {"max_positions", c.encoder.max_positions},
                    {"dropout_rate", c.encoder.dropout_rate}};
    j["visual_dim"] = c.visual_dim;
    j["grid_size"] = c.grid_size;
    j["backbone"] = c.backbone == BackboneKind::mean_patch ? "mean_patch" : "tiny_cnn";
    j["backbone_frozen"] = c.backbone_frozen;
    j["variant"] = {{"mode", variant_name(FusionVariant{c.variant.mode, true, true, 8})},
                    {"class_labels", c.variant.class_labels},
                    {"position_embeddings", c.variant.position_embeddings},
                    {"appended_boxes", c.variant.appended_boxes}};
    j["seed"] = c.seed;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const auto& e = j.at("encoder");
    c.encoder.num_layers = e.at("num_layers").get<int>();
    c.encoder.num_heads = e.at("num_heads").get<int>();
    c.encoder.hidden = e.at("hidden").get<int>();
    c.encoder.ffn_dim = e.at("ffn_dim").get<int>();
    c.encoder.vocab_size = e.at("vocab_size").get<int>();
    c.encoder.type_vocab = e.at("type_vocab").get<int>();
    c.encoder.max_positions = e.at("max_positions").get<int>();
    c.encoder.dropout_rate = e.at("dropout_rate").get<double>();
    c.visual_dim = j.at("visual_dim").get<int>();
    c.grid_size = j.at("grid_size").get<int>();
    c.backbone = j.at("backbone").get<std::string>() == "tiny_cnn" ? BackboneKind::tiny_cnn
                                                                   : BackboneKind::mean_patch;
    c.backbone_frozen = j.at("backbone_frozen").get<bool>();
    const auto& v = j.at("variant");
    c.variant = parse_variant(v.at("mode").get<std::string>());
    c.variant.class_labels = v.at("class_labels").get<bool>();
    c.variant.position_embeddings = v.at("position_embeddings").get<bool>();
    c.variant.appended_boxes = v.at("appended_boxes").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline void save_model(const Model& model, const std::string& path) {
    save_checkpoint(model.params, path);
    std::ofstream os(path + ".meta.json");
    if (!os) throw CheckpointError("cannot write model metadata: " + path + ".meta.json");
    os << model_config_to_json(model.config).dump(2) << '\n';
}

inline Model load_model(const std::string& path) {
    std::ifstream is(path + ".meta.json");
    if (!is) throw CheckpointError("missing model metadata: " + path + ".meta.json");
    nlohmann::json j;
    is >> j;
    Model model(model_config_from_json(j));
    load_checkpoint(model.params, path);
    return model;
}

}  // namespace b2t2
