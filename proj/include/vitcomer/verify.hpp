// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "vitcomer/model.hpp"
#include "vitcomer/oracles.hpp"
#include "vitcomer/rng.hpp"

namespace vitcomer {

// Max |difference| between the CoMer ViT-branch token trajectory and the
// standalone plain ViT with the same weights and input.
inline double transparency_gap(const CoMerConfig& cfg, std::uint64_t seed) {
    auto model = init_model<double>(cfg, seed);
    Rng rng(seed + 1);
    Tensor<double> img = Tensor<double>::zeros({3, cfg.vit.img_h, cfg.vit.img_w});
    rng.fill_uniform(img.data, 0, 1);
    auto fwd = forward(model, img, /*trace_vit=*/true);
    std::vector<Tensor<double>> plain;
    plain_vit_forward(model.vit, cfg.vit, img, &plain);
    double worst = 0;
    for (std::size_t l = 0; l < plain.size(); ++l)
        for (std::int64_t i = 0; i < plain[l].numel(); ++i)
            worst = std::max(worst, std::abs(fwd.vit_trace[l][i] - plain[l][i]));
    return worst;
}

struct OracleErrors {
    double conv2d = 0;
    double mhsa = 0;
    double msdeform = 0;
    double zero_offset = 0;
    double mrfp = 0;

    double worst() const {
        return std::max({conv2d, mhsa, msdeform, zero_offset, mrfp});
    }
};

// Runs every composite kernel against its brute-force loop reference across
// `trials` random seeds and returns the max absolute errors.
inline OracleErrors oracle_sweep(const CoMerConfig& cfg, std::uint64_t seed, int trials) {
    OracleErrors err;
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(seed + 1000 + static_cast<std::uint64_t>(trial));

        { // conv2d on small random shapes, plain and depthwise
            const int kernels[] = {1, 3, 5};
            const int c = 1 + static_cast<int>(rng.below(4));
            const int h = 3 + static_cast<int>(rng.below(5));
            const int w = 3 + static_cast<int>(rng.below(5));
            const int k = kernels[rng.below(3)];
            const bool depthwise = rng.below(2) == 0;
            const int groups = depthwise ? c : 1;
            const int out_c = depthwise ? c : 1 + static_cast<int>(rng.below(4));
            ConvParams<double> p;
            p.kernel = Tensor<double>::zeros({out_c, c / groups, k, k});
            p.bias = Tensor<double>::zeros({out_c});
            rng.fill_uniform(p.kernel.data, -1, 1);
            rng.fill_uniform(p.bias.data, -1, 1);
            p.stride = 1 + static_cast<int>(rng.below(2));
            p.pad = k / 2;
            p.groups = groups;
            Tensor<double> x = Tensor<double>::zeros({c, h, w});
            rng.fill_uniform(x.data, -1, 1);
            auto y = conv2d(x, p);
            auto ref = oracle::conv2d_ref(x.data, c, h, w, p.kernel.data, out_c, k, p.bias.data, p.stride, p.pad,
                                          groups);
            for (std::size_t i = 0; i < ref.size(); ++i) err.conv2d = std::max(err.conv2d, std::abs(y.data[i] - ref[i]));
        }

        { // mhsa
            const int tokens = 2 + static_cast<int>(rng.below(5));
            const int d = rng.below(2) == 0 ? 4 : 8;
            const int heads = rng.below(2) == 0 ? 1 : 2;
            MhsaParams<double> p;
            p.qkv.w = Tensor<double>::zeros({3 * d, d});
            p.qkv.b = Tensor<double>::zeros({3 * d});
            p.proj.w = Tensor<double>::zeros({d, d});
            p.proj.b = Tensor<double>::zeros({d});
            rng.fill_uniform(p.qkv.w.data, -1, 1);
            rng.fill_uniform(p.qkv.b.data, -1, 1);
            rng.fill_uniform(p.proj.w.data, -1, 1);
            rng.fill_uniform(p.proj.b.data, -1, 1);
            Tensor<double> x = Tensor<double>::zeros({tokens, d});
            rng.fill_uniform(x.data, -1, 1);
            auto y = mhsa(x, p, heads);
            auto ref =
                oracle::mhsa_ref(x.data, tokens, d, heads, p.qkv.w.data, p.qkv.b.data, p.proj.w.data, p.proj.b.data);
            for (std::size_t i = 0; i < ref.size(); ++i) err.mhsa = std::max(err.mhsa, std::abs(y.data[i] - ref[i]));
        }

        { // deformable attention + mrfp on the configured pyramid shapes
            auto m = init_model<double>(cfg, seed + 2000 + static_cast<std::uint64_t>(trial));
            Pyramid<double> p;
            p.shapes = pyramid_shapes(cfg.vit.img_h, cfg.vit.img_w);
            for (int l = 0; l < kLevels; ++l) {
                p.levels[static_cast<std::size_t>(l)] = Tensor<double>::zeros(
                    {cfg.vit.dim, p.shapes[static_cast<std::size_t>(l)].h, p.shapes[static_cast<std::size_t>(l)].w});
                rng.fill_uniform(p.levels[static_cast<std::size_t>(l)].data, -1, 1);
            }
            auto f = flatten(p);
            std::array<std::pair<int, int>, 3> shp;
            for (int l = 0; l < kLevels; ++l)
                shp[static_cast<std::size_t>(l)] = {f.shapes[static_cast<std::size_t>(l)].h,
                                                    f.shapes[static_cast<std::size_t>(l)].w};

            if (!m.cti_v.empty()) {
                auto& cti = m.cti_v[0];
                for (Tensor<double>* t : {&cti.attn.query.w, &cti.attn.offset.w, &cti.attn.offset.b, &cti.attn.attw.w,
                                          &cti.attn.attw.b, &cti.attn.value.w, &cti.attn.output.w})
                    rng.fill_uniform(t->data, -0.5, 0.5);
                auto out = msdeform_attn(f, f, cti.attn, cfg.cti);
                oracle::DeformRefParams rp;
                rp.d = cfg.vit.dim;
                rp.vd = cfg.cti_value_dim();
                rp.heads = cfg.cti.heads;
                rp.points = cfg.cti.points;
                rp.wq = cti.attn.query.w.data;
                rp.bq = cti.attn.query.b.data;
                rp.woff = cti.attn.offset.w.data;
                rp.boff = cti.attn.offset.b.data;
                rp.watt = cti.attn.attw.w.data;
                rp.batt = cti.attn.attw.b.data;
                rp.wval = cti.attn.value.w.data;
                rp.bval = cti.attn.value.b.data;
                rp.wout = cti.attn.output.w.data;
                rp.bout = cti.attn.output.b.data;
                auto ref = oracle::msdeform_ref(f.tokens.data, f.tokens.data, f.total, shp, rp);
                for (std::size_t i = 0; i < ref.size(); ++i)
                    err.msdeform = std::max(err.msdeform, std::abs(ref[i] - out.data[i]));

                // zero-initialized offsets/weights sample exactly at the
                // reference points with uniform level weights
                auto m0 = init_model<double>(cfg, seed + 3000 + static_cast<std::uint64_t>(trial));
                auto& a0 = m0.cti_v[0].attn;
                auto out0 = msdeform_attn(f, f, a0, cfg.cti);
                auto values = linear(f.tokens, a0.value);
                const int vd = cfg.cti_value_dim();
                for (int tok = 0; tok < f.total; tok += 7) {
                    int lt = 0;
                    while (lt + 1 < kLevels && tok >= f.offsets[static_cast<std::size_t>(lt + 1)]) ++lt;
                    const auto sh = f.shapes[static_cast<std::size_t>(lt)];
                    const int local = tok - f.offsets[static_cast<std::size_t>(lt)];
                    const double ry = (local / sh.w + 0.5) / sh.h;
                    const double rx = (local % sh.w + 0.5) / sh.w;
                    std::vector<double> merged(static_cast<std::size_t>(vd), 0.0);
                    for (int l = 0; l < kLevels; ++l) {
                        const auto ls = f.shapes[static_cast<std::size_t>(l)];
                        std::vector<double> chan(static_cast<std::size_t>(ls.h) * ls.w);
                        for (int c = 0; c < vd; ++c) {
                            for (int i = 0; i < ls.h * ls.w; ++i)
                                chan[static_cast<std::size_t>(i)] =
                                    values[(f.offsets[static_cast<std::size_t>(l)] + i) * vd + c];
                            merged[static_cast<std::size_t>(c)] +=
                                oracle::bilinear_at(chan.data(), ls.h, ls.w, rx * ls.w - 0.5, ry * ls.h - 0.5) /
                                kLevels;
                        }
                    }
                    for (int c = 0; c < cfg.vit.dim; ++c) {
                        double s = a0.output.b[c];
                        for (int e = 0; e < vd; ++e) s += merged[static_cast<std::size_t>(e)] * a0.output.w[c * vd + e];
                        err.zero_offset = std::max(err.zero_offset, std::abs(out0[tok * cfg.vit.dim + c] - s));
                    }
                }
            }

            if (!m.mrfp.empty()) {
                auto& mr = m.mrfp[0];
                rng.fill_uniform(mr.down.w.data, -1, 1);
                rng.fill_uniform(mr.up.w.data, -1, 1);
                for (auto& cv : mr.group_convs) {
                    rng.fill_uniform(cv.kernel.data, -1, 1);
                    rng.fill_uniform(cv.bias.data, -1, 1);
                }
                auto out = mrfp(f, mr, cfg.mrfp);
                oracle::MrfpRefParams rp;
                rp.d = cfg.vit.dim;
                rp.dr = cfg.mrfp_dim();
                rp.kernels = cfg.mrfp.kernels;
                rp.wdown = mr.down.w.data;
                rp.bdown = mr.down.b.data;
                rp.wup = mr.up.w.data;
                rp.bup = mr.up.b.data;
                for (auto& cv : mr.group_convs) {
                    rp.dw_kernels.insert(rp.dw_kernels.end(), cv.kernel.data.begin(), cv.kernel.data.end());
                    rp.dw_bias.insert(rp.dw_bias.end(), cv.bias.data.begin(), cv.bias.data.end());
                }
                auto ref = oracle::mrfp_ref(f.tokens.data, f.total, shp, rp);
                for (std::size_t i = 0; i < ref.size(); ++i)
                    err.mrfp = std::max(err.mrfp, std::abs(ref[i] - out.tokens.data[i]));
            }
        }
    }
    return err;
}

} // namespace vitcomer
