// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "vitcomer/config.hpp"
#include "vitcomer/nn_ops.hpp"
#include "vitcomer/tensor.hpp"

namespace vitcomer {

// Plain ViT branch: non-overlapping 16x16 patch embedding, learnable
// positional grid, pre-norm transformer blocks. No class token; the token
// grid stays at 1/16 through every layer.

template <typename T>
struct VitBlockParams {
    NormParams<T> ln1;
    MhsaParams<T> attn;
    NormParams<T> ln2;
    FfnParams<T> mlp;
};

template <typename T>
struct VitParams {
    ConvParams<T> patch; // 3 -> D, k = 16, stride = 16
    Tensor<T> pos;       // [grid_h * grid_w x D] for the configured image size
    std::vector<VitBlockParams<T>> blocks;
};

// Token grid extents for an input of the given size.
inline void vit_grid(const ViTConfig& cfg, int img_h, int img_w, int& gh, int& gw) {
    gh = img_h / cfg.patch;
    gw = img_w / cfg.patch;
}

template <typename T>
Tensor<T> patch_embed(const VitParams<T>& p, const ViTConfig& cfg, const Tensor<T>& image) {
    if (image.rank() != 3 || image.dims[0] != 3) throw ShapeError("patch_embed: image must be [3 x H x W]");
    const int h = image.dims[1], w = image.dims[2];
    if (h % 32 != 0 || w % 32 != 0)
        throw ShapeError("patch_embed: image extents must be divisible by 32, got " + std::to_string(h) + "x" +
                         std::to_string(w));
    Tensor<T> tokens = map_to_tokens(conv2d(image, p.patch)); // [gh*gw x D]
    int gh, gw, cfg_gh, cfg_gw;
    vit_grid(cfg, h, w, gh, gw);
    vit_grid(cfg, cfg.img_h, cfg.img_w, cfg_gh, cfg_gw);
    Tensor<T> pos = p.pos;
    if (gh != cfg_gh || gw != cfg_gw) {
        // stored positional grid resized to the current token grid
        pos = map_to_tokens(bilinear_resize(tokens_to_map(p.pos, cfg_gh, cfg_gw), gh, gw));
    }
    return add(tokens, pos);
}

// Pre-norm encoder block: X += MHSA(LN(X)); X += FFN(LN(X)).
template <typename T>
Tensor<T> vit_block(const VitBlockParams<T>& blk, const Tensor<T>& x, int heads) {
    Tensor<T> y = add(x, mhsa(layer_norm(x, blk.ln1), blk.attn, heads));
    return add(y, ffn(layer_norm(y, blk.ln2), blk.mlp));
}

// Half-open block range of interaction stage `stage` (1-based).
inline void stage_bounds(int depth, int stages, int stage, int& first, int& last) {
    if (stage < 1 || stage > stages) throw ShapeError("stage index out of range");
    const int per = depth / stages;
    first = (stage - 1) * per;
    last = stage * per;
}

template <typename T>
Tensor<T> run_stage(const VitParams<T>& p, const ViTConfig& cfg, int stages, const Tensor<T>& x, int stage) {
    int first, last;
    stage_bounds(cfg.depth, stages, stage, first, last);
    Tensor<T> cur = x;
    for (int b = first; b < last; ++b) cur = vit_block(p.blocks[static_cast<std::size_t>(b)], cur, cfg.heads);
    return cur;
}

// Standalone plain-ViT forward; `trace` collects the token tensor after the
// patch embedding and after every block (L + 1 entries).
template <typename T>
Tensor<T> plain_vit_forward(const VitParams<T>& p, const ViTConfig& cfg, const Tensor<T>& image,
                            std::vector<Tensor<T>>* trace = nullptr) {
    Tensor<T> x = patch_embed(p, cfg, image);
    if (trace) trace->push_back(x.detached());
    for (const auto& blk : p.blocks) {
        x = vit_block(blk, x, cfg.heads);
        if (trace) trace->push_back(x.detached());
    }
    return x;
}

} // namespace vitcomer
