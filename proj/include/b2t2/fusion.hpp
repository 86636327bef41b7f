#pragma once

// Early-fusion machinery: grid-quantized box position embeddings, visual
// tokens projected into the text embedding space, the additive fusion of
// visual tokens into token representations, and the late-fusion variants.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "b2t2/common.hpp"
#include "b2t2/tensor.hpp"
#include "b2t2/vision.hpp"

namespace b2t2 {

// m x n' binary matrix; entry (i, j) set iff box i is referenced by token j.
struct ReferenceMatrix {
    int num_boxes = 0;
    int num_tokens = 0;
    std::vector<std::uint8_t> bits;  // row-major m x n'

    ReferenceMatrix() = default;
    ReferenceMatrix(int m, int n)
        : num_boxes(m), num_tokens(n), bits(static_cast<std::size_t>(m) * n, 0) {}

    std::uint8_t& at(int box, int token) { return bits[box * num_tokens + token]; }
    std::uint8_t at(int box, int token) const { return bits[box * num_tokens + token]; }

    // Each token references at most one box.
    void validate() const {
        for (int j = 0; j < num_tokens; ++j) {
            int col_sum = 0;
            for (int i = 0; i < num_boxes; ++i) col_sum += at(i, j);
            if (col_sum > 1) throw ContractError("reference matrix column sum exceeds 1");
        }
    }

    bool empty() const {
        for (auto b : bits)
            if (b) return false;
        return true;
    }
};

// Learnable corner-coordinate tables X and Y, each k x (d/4). The same
// tables embed both corners.
struct PositionTables {
    int grid_size = 14;  // k
    Tensor x;            // k x d/4
    Tensor y;            // k x d/4
};

inline PositionTables make_position_tables(int k, int d, std::uint64_t seed) {
    if (d % 4 != 0) throw ContractError("visual feature dimension must be divisible by 4");
    Rng rng = make_rng(seed, 0x5bc2);
    PositionTables t;
    t.grid_size = k;
    std::size_t n = static_cast<std::size_t>(k) * (d / 4);
    t.x = make_tensor({k, d / 4}, detail::normal_values(n, 0.02, rng), true);
    t.y = make_tensor({k, d / 4}, detail::normal_values(n, 0.02, rng), true);
    return t;
}

enum class FusionMode { full, no_boxes, late_fusion_last_layer, dual_encoder, text_only };

struct FusionVariant {
    FusionMode mode = FusionMode::full;
    bool class_labels = true;
    bool position_embeddings = true;
    int appended_boxes = 8;  // p

    bool uses_boxes() const {
        return mode == FusionMode::full || mode == FusionMode::late_fusion_last_layer;
    }
};

inline FusionVariant parse_variant(const std::string& name) {
    FusionVariant v;
    if (name == "full") {
    } else if (name == "no_boxes") {
        v.mode = FusionMode::no_boxes;
        v.appended_boxes = 0;
    } else if (name == "late_fusion") {
        v.mode = FusionMode::late_fusion_last_layer;
    } else if (name == "dual_encoder") {
        v.mode = FusionMode::dual_encoder;
        v.appended_boxes = 0;
    } else if (name == "text_only") {
        v.mode = FusionMode::text_only;
        v.appended_boxes = 0;
    } else if (name == "no_class_labels") {
        v.class_labels = false;
    } else if (name == "no_position_embeddings") {
        v.position_embeddings = false;
    } else if (name == "fewer_boxes") {
        v.appended_boxes = 4;
    } else {
        throw ContractError("unknown fusion variant: " + name);
    }
    return v;
}

inline std::string variant_name(const FusionVariant& v) {
    switch (v.mode) {
        case FusionMode::no_boxes: return "no_boxes";
        case FusionMode::late_fusion_last_layer: return "late_fusion";
        case FusionMode::dual_encoder: return "dual_encoder";
        case FusionMode::text_only: return "text_only";
        case FusionMode::full: break;
    }
    if (!v.class_labels) return "no_class_labels";
    if (!v.position_embeddings) return "no_position_embeddings";
    if (v.appended_boxes == 4) return "fewer_boxes";
    return "full";
}

// Normalize box corners so that a full-image box maps to (0, 0, k, k),
// floor, clamp to [0, k-1] and concatenate the four table rows.
inline Tensor pi(const BoundingBox& b, const PositionTables& tables, int image_w,
                 int image_h) {
    int k = tables.grid_size;
    double sx = static_cast<double>(k) / image_w;
    double sy = static_cast<double>(k) / image_h;
    double coords[4] = {b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
    int idx[4];
    for (int i = 0; i < 4; ++i) {
        if (coords[i] < -1e-9 || coords[i] > k + 1e-9)
            throw ContractError("normalized box coordinate outside [0, k]");
        idx[i] = std::clamp(static_cast<int>(std::floor(coords[i])), 0, k - 1);
    }
    Tensor x1 = embedding_rows(tables.x, {idx[0]});
    Tensor y1 = embedding_rows(tables.y, {idx[1]});
    Tensor x2 = embedding_rows(tables.x, {idx[2]});
    Tensor y2 = embedding_rows(tables.y, {idx[3]});
    Tensor cat = concat_cols({x1, y1, x2, y2});
    return reshape(cat, {cat->shape[1]});
}

// M (Phi(crop(I, b)) + pi(b)) — one visual token in text embedding space.
inline Tensor visual_token(const Image& img, const BoundingBox& b,
                           const VisualBackbone& backbone, const PositionTables& tables,
                           const Tensor& m_proj, bool position_embeddings) {
    Tensor features = phi(crop(img, b, backbone.input_size), backbone);
    if (position_embeddings)
        features = add(features, pi(b, tables, img.width, img.height));
    return matvec(m_proj, features);
}

// E'[j] = E_T[j] + sum_i R[i][j] * vtokens[i], i.e. E + R^T V.
inline Tensor fuse(const Tensor& token_embeds, const ReferenceMatrix& refs,
                   const Tensor& vtokens) {
    auto [n, h] = detail::as_matrix(token_embeds);
    if (refs.num_tokens != n) throw DimensionError("reference matrix token count mismatch");
    if (refs.num_boxes == 0) return token_embeds;
    if (!vtokens || vtokens->shape.size() != 2 || vtokens->shape[0] != refs.num_boxes ||
        vtokens->shape[1] != h)
        throw DimensionError("visual token matrix shape mismatch");
    std::vector<double> rt(static_cast<std::size_t>(n) * refs.num_boxes);
    for (int i = 0; i < refs.num_boxes; ++i)
        for (int j = 0; j < n; ++j) rt[j * refs.num_boxes + i] = refs.at(i, j);
    Tensor r_transposed = make_tensor({n, refs.num_boxes}, std::move(rt));
    return add(token_embeds, matmul(r_transposed, vtokens));
}

}  // namespace b2t2
