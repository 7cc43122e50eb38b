// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vitcomer/model.hpp"
#include "vitcomer/rng.hpp"

namespace vitcomer {

// Synthetic dense-prediction task: color-coded axis-aligned shapes on a dark
// background, labels per pixel over {background, square, h-bar, v-bar}.
// Shape edges snap to the 8-pixel grid so a 1/8-resolution logit map can fit
// the label boundaries exactly. Fully determined by (seed, count, H, W).

template <typename T>
struct ToySample {
    Tensor<T> image;         // [3 x H x W], values in [0, 1]
    std::vector<int> labels; // H * W entries
};

template <typename T>
struct ToyDataset {
    int img_h = 0, img_w = 0, classes = 4;
    std::vector<ToySample<T>> samples;
};

template <typename T>
ToyDataset<T> make_toy_dataset(std::uint64_t seed, int count, int img_h, int img_w, int classes = 4) {
    if (img_h % 32 != 0 || img_w % 32 != 0) throw ConfigError("toy dataset extents must be divisible by 32");
    if (classes != 4) throw ConfigError("the toy task renders exactly 4 classes");
    ToyDataset<T> ds;
    ds.img_h = img_h;
    ds.img_w = img_w;
    ds.classes = classes;
    Rng rng(seed);

    const double colors[4][3] = {
        {0.15, 0.15, 0.15}, // background
        {0.85, 0.20, 0.20}, // squares
        {0.20, 0.85, 0.20}, // horizontal bars
        {0.20, 0.20, 0.85}, // vertical bars
    };
    // shapes live on a 16-pixel grid with sides of at least 16 pixels, so a
    // 1/8-resolution logit grid can carry every label boundary
    const int gx = img_w / 16, gy = img_h / 16;

    for (int n = 0; n < count; ++n) {
        ToySample<T> s;
        s.image = Tensor<T>::zeros({3, img_h, img_w});
        s.labels.assign(static_cast<std::size_t>(img_h) * img_w, 0);

        auto paint = [&](int cls, int x0, int y0, int w, int h) {
            for (int y = y0; y < y0 + h; ++y)
                for (int x = x0; x < x0 + w; ++x) {
                    s.labels[static_cast<std::size_t>(y) * img_w + x] = cls;
                }
        };

        const int shapes = 2; // two shapes per image, mixed scales
        for (int k = 0; k < shapes; ++k) {
            const int cls = 1 + static_cast<int>(rng.below(3));
            int w16 = 0, h16 = 0;
            if (cls == 1) { // square, 1..2 cells
                w16 = h16 = 1 + static_cast<int>(rng.below(2));
            } else if (cls == 2) { // horizontal bar
                w16 = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(gx - 1)));
                h16 = 2;
            } else { // vertical bar
                w16 = 2;
                h16 = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(gy - 1)));
            }
            w16 = std::min(w16, gx);
            h16 = std::min(h16, gy);
            const int x0 = 16 * static_cast<int>(rng.below(static_cast<std::uint64_t>(gx - w16 + 1)));
            const int y0 = 16 * static_cast<int>(rng.below(static_cast<std::uint64_t>(gy - h16 + 1)));
            paint(cls, x0, y0, 16 * w16, 16 * h16);
        }

        for (int y = 0; y < img_h; ++y)
            for (int x = 0; x < img_w; ++x) {
                const int cls = s.labels[static_cast<std::size_t>(y) * img_w + x];
                for (int c = 0; c < 3; ++c) {
                    const double v = colors[cls][c] + rng.uniform(-0.04, 0.04);
                    s.image[(static_cast<std::size_t>(c) * img_h + y) * img_w + x] = static_cast<T>(v);
                }
            }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Per-pixel class logits at full resolution: per-level 1x1 heads, the coarser
// logits resized onto the 1/8 grid and summed, then upsampled to H x W.
// Returns [H*W x classes] rows matching the label layout.
template <typename T>
Tensor<T> seg_logits(const Model<T>& m, const ForwardResult<T>& fwd, int img_h, int img_w) {
    Tensor<T> l8 = conv2d(fwd.out[0], m.head.level[0]);
    Tensor<T> l16 = conv2d(fwd.out[1], m.head.level[1]);
    Tensor<T> l32 = conv2d(fwd.out[2], m.head.level[2]);
    const int h8 = fwd.shapes[0].h, w8 = fwd.shapes[0].w;
    Tensor<T> fused = add(l8, add(bilinear_resize(l16, h8, w8), bilinear_resize(l32, h8, w8)));
    return map_to_tokens(bilinear_resize(fused, img_h, img_w));
}

template <typename T>
Tensor<T> toy_loss(const Model<T>& m, const Tensor<T>& image, const std::vector<int>& labels) {
    ForwardResult<T> fwd = forward(m, image);
    return cross_entropy_mean(seg_logits(m, fwd, image.dims[1], image.dims[2]), labels);
}

// ---------------------------------------------------------------------------
// SGD with momentum over every parameter, velocity kept per parameter name.
// ---------------------------------------------------------------------------

template <typename T>
struct SgdState {
    double lr = 0.05;
    double momentum = 0.9;
    std::unordered_map<std::string, std::vector<T>> velocity;
};

// One optimization step over a batch of dataset indices; returns the batch
// loss. Aborts with NumericError if the loss is not finite.
template <typename T>
double train_step(Model<T>& m, SgdState<T>& opt, const ToyDataset<T>& ds, const std::vector<int>& batch) {
    if (batch.empty()) throw ConfigError("train_step: empty batch");
    Tape<T> tape;
    m.attach(tape);
    Tensor<T> total;
    bool first = true;
    for (int idx : batch) {
        const auto& sample = ds.samples[static_cast<std::size_t>(idx)];
        Tensor<T> one = toy_loss(m, sample.image, sample.labels);
        total = first ? one : add(total, one);
        first = false;
    }
    Tensor<T> loss = scale(total, 1.0 / static_cast<double>(batch.size()));
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) throw NumericError("train_step: non-finite loss");
    tape.backward(loss);

    m.for_each_param([&](const std::string& name, Tensor<T>& p) {
        Tensor<T> g = tape.grad_of(p);
        auto& vel = opt.velocity[name];
        if (vel.empty()) vel.assign(static_cast<std::size_t>(p.numel()), T(0));
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            vel[static_cast<std::size_t>(i)] =
                static_cast<T>(opt.momentum) * vel[static_cast<std::size_t>(i)] + g[i];
            p[i] -= static_cast<T>(opt.lr) * vel[static_cast<std::size_t>(i)];
        }
    });
    m.detach();
    return loss_value;
}

} // namespace vitcomer
