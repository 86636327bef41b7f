#pragma once

// Training losses: binary cross entropy, masked-LM cross entropy, and the
// combined pretraining objective with positive-only MLM gating.

#include <vector>

#include "b2t2/common.hpp"
#include "b2t2/data.hpp"
#include "b2t2/model.hpp"
#include "b2t2/tensor.hpp"

namespace b2t2 {

inline constexpr double kProbFloor = 1e-12;

// -[l log p + (1 - l) log(1 - p)], p clamped to [1e-12, 1 - 1e-12].
inline Tensor bce_loss(const Tensor& p, int label) {
    if (p->size() != 1) throw ContractError("bce_loss expects a scalar probability");
    if (label != 0 && label != 1) throw ContractError("bce_loss label must be 0 or 1");
    double v = p->value[0];
    if (v < 0.0 || v > 1.0) throw ContractError("probability outside [0,1]");
    if (label == 1) return scale(log_clamped(p, kProbFloor), -1.0);
    Tensor one_minus = add_const(scale(p, -1.0), 1.0);
    return scale(log_clamped(one_minus, kProbFloor), -1.0);
}

// Summed cross entropy over the masked positions only.
inline Tensor mlm_loss(const Tensor& logits, const std::vector<MlmTarget>& targets) {
    if (targets.empty()) return scalar(0.0);
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(targets.size());
    for (const auto& t : targets) pairs.emplace_back(t.position, t.original_piece_id);
    return cross_entropy_rows(logits, pairs);
}

struct PretrainBatchItem {
    const Image* image;
    TokenSequence masked_tokens;
    std::vector<MlmTarget> mlm_targets;
    // Geometry for the [BOX] markers in the caption, in occurrence order.
    // For impostor items these come from the impostor caption and are
    // cropped out of the displayed image.
    std::vector<BoundingBox> boxes;
    int label;  // 1 = true caption, 0 = impostor
};

// L = L_BCE + I[l = 1] * L_MLM. The MLM term is not built at all for
// impostor items, so its gradient is exactly zero. The whole-image token
// and any caption [BOX] markers are fused just like answer-task boxes.
inline Tensor pretrain_loss(const Model& model, const PretrainBatchItem& item,
                            PhiCache* cache = nullptr) {
    EncodedInstance inst;
    inst.tokens = item.masked_tokens;
    inst.boxes = {full_image_box(*item.image)};
    for (const auto& b : item.boxes) inst.boxes.push_back(b);
    int n = inst.tokens.length();
    inst.refmatrix = ReferenceMatrix(static_cast<int>(inst.boxes.size()), n);
    int next_box = 0;
    for (int j = 0; j < n; ++j) {
        if (inst.tokens.piece_ids[j] == kImgId) {
            inst.refmatrix.at(0, j) = 1;
        } else if (inst.tokens.piece_ids[j] == kBoxId) {
            // truncation may drop trailing markers, but never invent them
            if (next_box >= static_cast<int>(item.boxes.size()))
                throw ContractError("caption [BOX] marker without geometry");
            inst.refmatrix.at(1 + next_box, j) = 1;
            ++next_box;
        }
    }
    inst.label = item.label;

    // one shared encoder pass feeds both the impostor head and the MLM head
    Tensor e = model.encoder.embed_tokens(inst.tokens);
    if (model.config.variant.mode == FusionMode::full)
        e = fuse(e, inst.refmatrix,
                 cache ? cache->visual_tokens(model, inst, *item.image)
                       : model.visual_tokens(inst, *item.image));
    Tensor contextual = model.encoder.encode(e, inst.tokens.attention_mask);
    Tensor p;
    if (model.config.variant.mode == FusionMode::dual_encoder) {
        Tensor img_features = cache
                                  ? cache->get(model, *item.image,
                                               full_image_box(*item.image))
                                  : phi(*item.image, model.backbone);
        p = sigmoid(dot(img_features,
                        matvec(model.params.at("fusion.d"), Encoder::psi(contextual))));
    } else {
        Tensor logits = add(matvec(model.params.at("fusion.a"), Encoder::psi(contextual)),
                            model.params.at("fusion.b"));
        p = select_row(reshape(softmax(logits), {2, 1}), 1);
    }
    Tensor loss = bce_loss(p, item.label);
    if (item.label == 1 && !item.mlm_targets.empty())
        loss = add(loss, mlm_loss(model.encoder.mlm_logits(contextual), item.mlm_targets));
    return loss;
}

}  // namespace b2t2
