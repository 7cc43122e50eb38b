// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "vitcomer/config.hpp"
#include "vitcomer/mrfp.hpp"
#include "vitcomer/nn_ops.hpp"
#include "vitcomer/tensor.hpp"

namespace vitcomer {

// CNN-Transformer fusion interaction: fuse ViT tokens into the pyramid's
// 1/16 level, run multi-scale deformable attention + FFN over the fused
// token sequence, and inject the result back into one of the branches.

template <typename T>
struct DeformAttnParams {
    LinearParams<T> query;  // D -> D
    LinearParams<T> offset; // D -> heads * levels * K * 2, zero-initialized
    LinearParams<T> attw;   // D -> heads * levels * K,    zero-initialized
    LinearParams<T> value;  // D -> Dv
    LinearParams<T> output; // Dv -> D
};

template <typename T>
struct CtiParams {
    NormParams<T> norm1;
    DeformAttnParams<T> attn;
    NormParams<T> norm2;
    FfnParams<T> ffn;
    Tensor<T> alpha; // scalar gate, only allocated for the to-ViT instances
    bool has_alpha = false;
};

// F' = {F3, F4 + X, F5}: ViT tokens added onto the 1/16 level only.
template <typename T>
TokenSeq<T> fuse(const Tensor<T>& vit_tokens, const TokenSeq<T>& f) {
    if (vit_tokens.rank() != 2 || vit_tokens.dims[0] != f.level_tokens(1))
        throw ShapeError("fuse: ViT token count must match the 1/16 pyramid level");
    if (vit_tokens.dims[1] != f.tokens.dims[1]) throw ShapeError("fuse: token widths differ");
    auto parts = split(f.tokens, 0, {f.level_tokens(0), f.level_tokens(1), f.level_tokens(2)});
    parts[1] = add(parts[1], vit_tokens);
    TokenSeq<T> out = f;
    out.tokens = concat(0, parts);
    return out;
}

// Per-token reference points of the whole sequence mapped into level `l`,
// in that level's pixel coordinates: centers (j+0.5)/w, (i+0.5)/h scaled by
// the target extent minus the half-pixel shift. Frozen constants.
template <typename T>
Tensor<T> reference_points_px(const std::array<LevelShape, kLevels>& shapes, int target_level) {
    const LevelShape tgt = shapes[static_cast<std::size_t>(target_level)];
    int total = 0;
    for (const auto& s : shapes) total += s.h * s.w;
    Tensor<T> pts = Tensor<T>::zeros({total, 2});
    int row = 0;
    for (const auto& s : shapes)
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j, ++row) {
                const double rx = (j + 0.5) / s.w;
                const double ry = (i + 0.5) / s.h;
                pts[row * 2 + 0] = static_cast<T>(rx * tgt.w - 0.5);
                pts[row * 2 + 1] = static_cast<T>(ry * tgt.h - 0.5);
            }
    return pts;
}

// Multi-scale deformable attention. Every query predicts K offsets and one
// softmaxed weight per head and level, samples the value maps bilinearly at
// reference-point + offset (offsets live in the target level's pixel units),
// and the weighted samples are merged across heads through the output
// projection. Zero-initialized offset/weight projections make the initial
// pass sample exactly at the reference points with uniform weights.
template <typename T>
Tensor<T> msdeform_attn(const TokenSeq<T>& q, const TokenSeq<T>& v, const DeformAttnParams<T>& p,
                        const CtiConfig& cfg) {
    if (q.shapes != v.shapes) throw ShapeError("msdeform_attn: query/value level shapes differ");
    const int vd = p.value.w.dims[0];
    const int heads = cfg.heads, kpts = cfg.points;
    if (vd % heads != 0) throw ShapeError("msdeform_attn: value dim must be divisible by heads");
    const int hd = vd / heads;
    if (p.offset.w.dims[0] != heads * kLevels * kpts * 2 || p.attw.w.dims[0] != heads * kLevels * kpts)
        throw ShapeError("msdeform_attn: projection extents do not match heads/points");

    Tensor<T> qt = linear(q.tokens, p.query);
    Tensor<T> offsets = linear(qt, p.offset); // [T x heads*3*K*2]
    Tensor<T> logits = linear(qt, p.attw);    // [T x heads*3*K]
    Tensor<T> values = linear(v.tokens, p.value);

    // per-level, per-head value maps [hd x h x w]
    std::vector<int> level_sizes;
    for (int l = 0; l < kLevels; ++l) level_sizes.push_back(q.level_tokens(l));
    auto value_levels = split(values, 0, level_sizes);
    std::array<std::vector<Tensor<T>>, kLevels> maps;
    for (int l = 0; l < kLevels; ++l) {
        const auto sh = q.shapes[static_cast<std::size_t>(l)];
        for (int m = 0; m < heads; ++m)
            maps[static_cast<std::size_t>(l)].push_back(
                tokens_to_map(slice(value_levels[static_cast<std::size_t>(l)], 1, m * hd, hd), sh.h, sh.w));
    }

    std::array<Tensor<T>, kLevels> refs;
    for (int l = 0; l < kLevels; ++l) refs[static_cast<std::size_t>(l)] = reference_points_px<T>(q.shapes, l);

    std::vector<Tensor<T>> head_outputs;
    for (int m = 0; m < heads; ++m) {
        // weights softmaxed over the level x point axis of this head
        Tensor<T> wlogits = slice(logits, 1, m * kLevels * kpts, kLevels * kpts);
        Tensor<T> weights = softmax(wlogits, 1);
        Tensor<T> acc;
        bool first = true;
        for (int l = 0; l < kLevels; ++l)
            for (int k = 0; k < kpts; ++k) {
                const int col = ((m * kLevels + l) * kpts + k) * 2;
                Tensor<T> pts = add(slice(offsets, 1, col, 2), refs[static_cast<std::size_t>(l)]);
                Tensor<T> sampled = bilinear_sample(maps[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)], pts);
                Tensor<T> wcol = reshape(slice(weights, 1, l * kpts + k, 1), {q.total});
                Tensor<T> term = row_scale(sampled, wcol);
                acc = first ? term : add(acc, term);
                first = false;
            }
        head_outputs.push_back(acc);
    }
    Tensor<T> merged = heads == 1 ? head_outputs[0] : concat(1, head_outputs);
    return linear(merged, p.output);
}

// O = F' + Attn(norm1(F')); O = O + FFN(norm2(O)). Residuals around both
// sublayers keep the block transparent under zero-initialized projections.
template <typename T>
TokenSeq<T> cti_core(const TokenSeq<T>& f, const CtiParams<T>& p, const CtiConfig& cfg) {
    TokenSeq<T> normed = f;
    normed.tokens = layer_norm(f.tokens, p.norm1);
    Tensor<T> t = add(f.tokens, msdeform_attn(normed, normed, p.attn, cfg));
    TokenSeq<T> out = f;
    out.tokens = add(t, ffn(layer_norm(t, p.norm2), p.ffn));
    return out;
}

// X^ = alpha * aligned(O) + X where aligned(O) is the sum of the three levels
// of O bilinearly resized onto the 1/16 grid.
template <typename T>
Tensor<T> inject_to_vit(const Tensor<T>& vit_tokens, const TokenSeq<T>& o, const Tensor<T>& alpha) {
    Pyramid<T> levels = unflatten(o);
    const LevelShape mid = o.shapes[1];
    Tensor<T> aligned = levels.levels[1];
    aligned = add(aligned, bilinear_resize(levels.levels[0], mid.h, mid.w));
    aligned = add(aligned, bilinear_resize(levels.levels[2], mid.h, mid.w));
    Tensor<T> tokens = map_to_tokens(aligned);
    if (tokens.dims != vit_tokens.dims) throw ShapeError("inject_to_vit: token shape mismatch");
    return add(mul(tokens, alpha), vit_tokens);
}

// F^ = O + F', ungated.
template <typename T>
TokenSeq<T> inject_to_cnn(const TokenSeq<T>& f, const TokenSeq<T>& o) {
    if (f.shapes != o.shapes || f.total != o.total) throw ShapeError("inject_to_cnn: sequence shapes differ");
    TokenSeq<T> out = f;
    out.tokens = add(o.tokens, f.tokens);
    return out;
}

} // namespace vitcomer
