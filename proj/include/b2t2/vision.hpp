#pragma once

// Image handling, bounding-box cropping and the pluggable image
// representation function. Images are float64 RGB in [0,1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "b2t2/adam.hpp"
#include "b2t2/common.hpp"
#include "b2t2/tensor.hpp"

namespace b2t2 {

struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // H x W x 3, row-major

    double& at(int i, int j, int c) { return pixels[(i * width + j) * 3 + c]; }
    double at(int i, int j, int c) const { return pixels[(i * width + j) * 3 + c]; }
};

inline Image make_image(int h, int w, double fill = 0.0) {
    if (h < 1 || w < 1) throw ContractError("image dims must be >= 1");
    return Image{h, w, std::vector<double>(static_cast<std::size_t>(h) * w * 3, fill)};
}

struct BoundingBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

inline BoundingBox full_image_box(const Image& img) {
    return {0.0, 0.0, static_cast<double>(img.width), static_cast<double>(img.height)};
}

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit) io

inline Image load_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open ppm file: " + path);
    std::string magic;
    int w, h, maxval;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w < 1 || h < 1)
        throw DataError("unsupported ppm header in " + path);
    is.get();  // single whitespace after header
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw DataError("truncated ppm file: " + path);
    Image img = make_image(h, w);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
    return img;
}

inline void save_ppm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open ppm file for writing: " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (double v : img.pixels) {
        double c = std::clamp(v, 0.0, 1.0);
        os.put(static_cast<char>(std::lround(c * 255.0)));
    }
}

// ---------------------------------------------------------------------------
// cropping

// Bilinear resize with half-pixel centers.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
    Image dst = make_image(out_h, out_w);
    double sy = static_cast<double>(src.height) / out_h;
    double sx = static_cast<double>(src.width) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, src.height - 1);
        int y1c = std::clamp(y0 + 1, 0, src.height - 1);
        for (int j = 0; j < out_w; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, src.width - 1);
            int x1c = std::clamp(x0 + 1, 0, src.width - 1);
            for (int c = 0; c < 3; ++c) {
                double top = src.at(y0c, x0c, c) * (1 - wx) + src.at(y0c, x1c, c) * wx;
                double bot = src.at(y1c, x0c, c) * (1 - wx) + src.at(y1c, x1c, c) * wx;
                dst.at(i, j, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

// Extract the integer-rounded sub-image of b clipped to the image bounds,
// without resizing.
inline Image crop_raw(const Image& img, const BoundingBox& b) {
    if (!(b.x1 < b.x2) || !(b.y1 < b.y2))
        throw BoxError("degenerate or inverted bounding box");
    int x1 = std::clamp(static_cast<int>(std::lround(b.x1)), 0, img.width);
    int x2 = std::clamp(static_cast<int>(std::lround(b.x2)), 0, img.width);
    int y1 = std::clamp(static_cast<int>(std::lround(b.y1)), 0, img.height);
    int y2 = std::clamp(static_cast<int>(std::lround(b.y2)), 0, img.height);
    if (x2 <= x1 || y2 <= y1) throw BoxError("bounding box does not intersect the image");
    Image out = make_image(y2 - y1, x2 - x1);
    for (int i = y1; i < y2; ++i)
        for (int j = x1; j < x2; ++j)
            for (int c = 0; c < 3; ++c) out.at(i - y1, j - x1, c) = img.at(i, j, c);
    return out;
}

// Crop then resize to the backbone's fixed input size.
inline Image crop(const Image& img, const BoundingBox& b, int out_size = 16) {
    Image sub = crop_raw(img, b);
    if (sub.height == out_size && sub.width == out_size) return sub;
    return resize_bilinear(sub, out_size, out_size);
}

// ---------------------------------------------------------------------------
// backbones

enum class BackboneKind { mean_patch, tiny_cnn };

// The image representation function. mean_patch is a fixed seeded random
// projection of 4x4-grid cell color means; tiny_cnn is a small conv net,
// trainable only when frozen == false.
struct VisualBackbone {
    BackboneKind kind = BackboneKind::mean_patch;
    int out_dim = 32;
    int input_size = 16;
    bool frozen = true;
    std::uint64_t seed = 0;

    Tensor projection;  // mean_patch: out_dim x 48, fixed
    ParamMap params;    // tiny_cnn weights
};

namespace detail {

inline std::vector<double> normal_values(std::size_t n, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> out(n);
    for (auto& v : out) v = dist(rng);
    return out;
}

}  // namespace detail

inline VisualBackbone make_backbone(BackboneKind kind, int out_dim, std::uint64_t seed,
                                    bool frozen = true) {
    VisualBackbone bb;
    bb.kind = kind;
    bb.out_dim = out_dim;
    bb.frozen = frozen;
    bb.seed = seed;
    Rng rng = make_rng(seed, 0x7681);
    if (kind == BackboneKind::mean_patch) {
        bb.projection = make_tensor(
            {out_dim, 48},
            detail::normal_values(static_cast<std::size_t>(out_dim) * 48,
                                  1.0 / std::sqrt(48.0), rng));
    } else {
        bool rg = !frozen;
        auto mk = [&](const char* name, std::vector<int> shape, double std) {
            bb.params["phi." + std::string(name)] =
                make_tensor(shape, detail::normal_values(shape_numel(shape), std, rng), rg);
        };
        mk("conv1.w", {3, 3, 3, 8}, 0.2);
        bb.params["phi.conv1.b"] = make_tensor({8}, std::vector<double>(8, 0.0), rg);
        mk("conv2.w", {3, 3, 8, 8}, 0.2);
        bb.params["phi.conv2.b"] = make_tensor({8}, std::vector<double>(8, 0.0), rg);
        mk("conv3.w", {3, 3, 8, 8}, 0.2);
        bb.params["phi.conv3.b"] = make_tensor({8}, std::vector<double>(8, 0.0), rg);
        mk("fc.w", {out_dim, 8}, 1.0 / std::sqrt(8.0));
        bb.params["phi.fc.b"] = make_tensor({out_dim}, std::vector<double>(out_dim, 0.0), rg);
    }
    return bb;
}

// 4x4-grid per-cell RGB means of a square image: 48 values.
inline std::vector<double> patch_means(const Image& img) {
    std::vector<double> cells(48, 0.0);
    int ch = img.height / 4, cw = img.width / 4;
    if (ch < 1 || cw < 1) throw ContractError("image too small for 4x4 patch grid");
    for (int gi = 0; gi < 4; ++gi)
        for (int gj = 0; gj < 4; ++gj) {
            double acc[3] = {0, 0, 0};
            for (int i = gi * ch; i < (gi + 1) * ch; ++i)
                for (int j = gj * cw; j < (gj + 1) * cw; ++j)
                    for (int c = 0; c < 3; ++c) acc[c] += img.at(i, j, c);
            double inv = 1.0 / (ch * cw);
            for (int c = 0; c < 3; ++c) cells[(gi * 4 + gj) * 3 + c] = acc[c] * inv;
        }
    return cells;
}

// Phi: image -> fixed-size feature vector of length out_dim. Always returns
// a graph tensor; gradients reach tiny_cnn weights only when not frozen.
inline Tensor phi(const Image& img, const VisualBackbone& bb) {
    Image in = (img.height == bb.input_size && img.width == bb.input_size)
                   ? img
                   : resize_bilinear(img, bb.input_size, bb.input_size);
    if (bb.kind == BackboneKind::mean_patch) {
        Tensor cells = make_tensor({48}, patch_means(in));
        return matvec(bb.projection, cells);
    }
    Tensor x = make_tensor({in.height, in.width, 3}, in.pixels);
    x = avg_pool2(relu(conv3x3(x, bb.params.at("phi.conv1.w"), bb.params.at("phi.conv1.b"))));
    x = avg_pool2(relu(conv3x3(x, bb.params.at("phi.conv2.w"), bb.params.at("phi.conv2.b"))));
    x = avg_pool2(relu(conv3x3(x, bb.params.at("phi.conv3.w"), bb.params.at("phi.conv3.b"))));
    Tensor pooled = global_avg_pool(x);
    return add(matvec(bb.params.at("phi.fc.w"), pooled), bb.params.at("phi.fc.b"));
}

}  // namespace b2t2
