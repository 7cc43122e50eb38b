// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "vitcomer/config.hpp"
#include "vitcomer/nn_ops.hpp"
#include "vitcomer/tensor.hpp"

namespace vitcomer {

// CNN branch: convolutional stem producing the {1/8, 1/16, 1/32} pyramid and
// the multi-receptive-field feature pyramid module that enhances it.

struct LevelShape {
    int h = 0, w = 0;
    bool operator==(const LevelShape&) const = default;
};

constexpr int kLevels = 3;
constexpr std::array<int, kLevels> kStrides{8, 16, 32};

inline std::array<LevelShape, kLevels> pyramid_shapes(int img_h, int img_w) {
    if (img_h % 32 != 0 || img_w % 32 != 0)
        throw ShapeError("pyramid: image extents must be divisible by 32");
    std::array<LevelShape, kLevels> s{};
    for (int l = 0; l < kLevels; ++l) s[static_cast<std::size_t>(l)] = {img_h / kStrides[static_cast<std::size_t>(l)],
                                                                        img_w / kStrides[static_cast<std::size_t>(l)]};
    return s;
}

// Three same-width feature maps at strides 8/16/32, each [D x h x w].
template <typename T>
struct Pyramid {
    std::array<Tensor<T>, kLevels> levels;
    std::array<LevelShape, kLevels> shapes{};
};

// The pyramid flattened to [total x D] token rows, level-major, row-major
// within a level. `offsets` are the split indices of the three levels.
template <typename T>
struct TokenSeq {
    Tensor<T> tokens;
    std::array<LevelShape, kLevels> shapes{};
    std::array<int, kLevels> offsets{};
    int total = 0;

    int level_tokens(int l) const {
        return shapes[static_cast<std::size_t>(l)].h * shapes[static_cast<std::size_t>(l)].w;
    }
};

template <typename T>
TokenSeq<T> flatten(const Pyramid<T>& p) {
    std::vector<Tensor<T>> parts;
    TokenSeq<T> out;
    out.shapes = p.shapes;
    int off = 0;
    for (int l = 0; l < kLevels; ++l) {
        const auto& lvl = p.levels[static_cast<std::size_t>(l)];
        const auto& sh = p.shapes[static_cast<std::size_t>(l)];
        if (lvl.rank() != 3 || lvl.dims[1] != sh.h || lvl.dims[2] != sh.w)
            throw ShapeError("flatten: level tensor does not match its declared shape");
        out.offsets[static_cast<std::size_t>(l)] = off;
        off += sh.h * sh.w;
        parts.push_back(map_to_tokens(lvl));
    }
    out.total = off;
    out.tokens = concat(0, parts);
    return out;
}

template <typename T>
Pyramid<T> unflatten(const TokenSeq<T>& t) {
    if (t.tokens.rank() != 2 || t.tokens.dims[0] != t.total)
        throw ShapeError("unflatten: token count inconsistent with level shapes");
    std::vector<int> sizes;
    for (int l = 0; l < kLevels; ++l) sizes.push_back(t.level_tokens(l));
    auto parts = split(t.tokens, 0, sizes);
    Pyramid<T> p;
    p.shapes = t.shapes;
    for (int l = 0; l < kLevels; ++l)
        p.levels[static_cast<std::size_t>(l)] =
            tokens_to_map(parts[static_cast<std::size_t>(l)], t.shapes[static_cast<std::size_t>(l)].h,
                          t.shapes[static_cast<std::size_t>(l)].w);
    return p;
}

// ---------------------------------------------------------------------------
// Stem: five 3x3 stride-2 convs (two GELUs in the early trunk) at a fixed
// trunk width, then a 1x1 projection per level to D channels.
// ---------------------------------------------------------------------------

template <typename T>
struct StemParams {
    ConvParams<T> conv1; // 3    -> W/2, stride 2 (1/2)
    ConvParams<T> conv2; // W/2  -> W,   stride 2 (1/4)
    ConvParams<T> conv3; // W    -> W,   stride 2 (1/8)
    ConvParams<T> conv4; // W    -> W,   stride 2 (1/16)
    ConvParams<T> conv5; // W    -> W,   stride 2 (1/32)
    std::array<ConvParams<T>, kLevels> proj; // 1x1, W -> D
};

template <typename T>
Pyramid<T> conv_stem(const StemParams<T>& p, const Tensor<T>& image) {
    if (image.rank() != 3 || image.dims[0] != 3) throw ShapeError("conv_stem: image must be [3 x H x W]");
    if (image.dims[1] % 32 != 0 || image.dims[2] % 32 != 0)
        throw ShapeError("conv_stem: image extents must be divisible by 32");
    Tensor<T> t = gelu(conv2d(image, p.conv1));
    t = gelu(conv2d(t, p.conv2));
    Tensor<T> c3 = conv2d(t, p.conv3);
    Tensor<T> c4 = conv2d(c3, p.conv4);
    Tensor<T> c5 = conv2d(c4, p.conv5);
    Pyramid<T> out;
    out.shapes = pyramid_shapes(image.dims[1], image.dims[2]);
    out.levels[0] = conv2d(c3, p.proj[0]);
    out.levels[1] = conv2d(c4, p.proj[1]);
    out.levels[2] = conv2d(c5, p.proj[2]);
    return out;
}

// ---------------------------------------------------------------------------
// MRFP: FC down to D', per-level grouped depthwise convs (group m uses kernel
// size kernels[m] on a contiguous channel slice), FC back up to D. The same
// conv weights act on every pyramid level; levels never mix.
// ---------------------------------------------------------------------------

template <typename T>
struct MrfpParams {
    LinearParams<T> down;                 // D  -> D'
    std::vector<ConvParams<T>> group_convs; // depthwise, one per group, over D'/M channels each
    LinearParams<T> up;                   // D' -> D
};

template <typename T>
TokenSeq<T> mrfp(const TokenSeq<T>& t, const MrfpParams<T>& p, const MrfpConfig& cfg) {
    const int dr = p.down.w.dims[0];
    const int groups = cfg.groups();
    if (dr % groups != 0) throw ShapeError("mrfp: reduced dim must be divisible by the group count");
    const int cg = dr / groups;

    TokenSeq<T> reduced = t;
    reduced.tokens = linear(t.tokens, p.down);
    Pyramid<T> maps = unflatten(reduced);

    Pyramid<T> conved;
    conved.shapes = maps.shapes;
    for (int l = 0; l < kLevels; ++l) {
        std::vector<Tensor<T>> parts;
        for (int g = 0; g < groups; ++g) {
            Tensor<T> chans = slice(maps.levels[static_cast<std::size_t>(l)], 0, g * cg, cg);
            parts.push_back(conv2d(chans, p.group_convs[static_cast<std::size_t>(g)]));
        }
        conved.levels[static_cast<std::size_t>(l)] = groups == 1 ? parts[0] : concat(0, parts);
    }

    TokenSeq<T> flat = flatten(conved);
    TokenSeq<T> out = t;
    out.tokens = linear(flat.tokens, p.up);
    return out;
}

} // namespace vitcomer
