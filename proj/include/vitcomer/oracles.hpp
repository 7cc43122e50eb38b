// SPDX-License-Identifier: Apache-2.0
#pragma once

// Brute-force reference implementations used to cross-check the tape ops.
// Everything here works on raw row-major buffers with explicit loops and
// never calls into the tensor/op layer, so the two routes stay independent.

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace vitcomer::oracle {

// Cross-correlation written input-centric (scatter), unlike the gather-form
// implementation it checks. kernel [outC x inC/groups x k x k].
inline std::vector<double> conv2d_ref(const std::vector<double>& x, int in_c, int h, int w,
                                      const std::vector<double>& kernel, int out_c, int k,
                                      const std::vector<double>& bias, int stride, int pad, int groups) {
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    const int icg = in_c / groups;
    const int ocg = out_c / groups;
    std::vector<double> out(static_cast<std::size_t>(out_c) * oh * ow, 0.0);
    for (int oc = 0; oc < out_c; ++oc)
        for (int i = 0; i < oh * ow; ++i) out[static_cast<std::size_t>(oc) * oh * ow + i] = bias[static_cast<std::size_t>(oc)];
    for (int ic = 0; ic < in_c; ++ic) {
        const int g = ic / icg;
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix) {
                const double xv = x[(static_cast<std::size_t>(ic) * h + iy) * w + ix];
                for (int ky = 0; ky < k; ++ky) {
                    const int num_y = iy + pad - ky;
                    if (num_y < 0 || num_y % stride != 0) continue;
                    const int oy = num_y / stride;
                    if (oy >= oh) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int num_x = ix + pad - kx;
                        if (num_x < 0 || num_x % stride != 0) continue;
                        const int ox = num_x / stride;
                        if (ox >= ow) continue;
                        for (int ocl = 0; ocl < ocg; ++ocl) {
                            const int oc = g * ocg + ocl;
                            const double kv =
                                kernel[((static_cast<std::size_t>(oc) * icg + (ic - g * icg)) * k + ky) * k + kx];
                            out[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] += xv * kv;
                        }
                    }
                }
            }
    }
    return out;
}

// Dense single-pass multi-head self-attention. Weights are [out x in],
// qkv column layout [q | k | v] matching the implementation's parameters.
inline std::vector<double> mhsa_ref(const std::vector<double>& x, int tokens, int d, int heads,
                                    const std::vector<double>& wqkv, const std::vector<double>& bqkv,
                                    const std::vector<double>& wproj, const std::vector<double>& bproj) {
    const int dh = d / heads;
    std::vector<double> qkv(static_cast<std::size_t>(tokens) * 3 * d, 0.0);
    for (int t = 0; t < tokens; ++t)
        for (int o = 0; o < 3 * d; ++o) {
            double s = bqkv[static_cast<std::size_t>(o)];
            for (int i = 0; i < d; ++i)
                s += x[static_cast<std::size_t>(t) * d + i] * wqkv[static_cast<std::size_t>(o) * d + i];
            qkv[static_cast<std::size_t>(t) * 3 * d + o] = s;
        }
    std::vector<double> merged(static_cast<std::size_t>(tokens) * d, 0.0);
    std::vector<double> scores(static_cast<std::size_t>(tokens));
    for (int hd = 0; hd < heads; ++hd) {
        const int qo = hd * dh, ko = d + hd * dh, vo = 2 * d + hd * dh;
        for (int t = 0; t < tokens; ++t) {
            double mx = -1e300;
            for (int u = 0; u < tokens; ++u) {
                double s = 0;
                for (int i = 0; i < dh; ++i)
                    s += qkv[static_cast<std::size_t>(t) * 3 * d + qo + i] * qkv[static_cast<std::size_t>(u) * 3 * d + ko + i];
                s /= std::sqrt(static_cast<double>(dh));
                scores[static_cast<std::size_t>(u)] = s;
                mx = std::max(mx, s);
            }
            double denom = 0;
            for (int u = 0; u < tokens; ++u) {
                scores[static_cast<std::size_t>(u)] = std::exp(scores[static_cast<std::size_t>(u)] - mx);
                denom += scores[static_cast<std::size_t>(u)];
            }
            for (int i = 0; i < dh; ++i) {
                double acc = 0;
                for (int u = 0; u < tokens; ++u)
                    acc += scores[static_cast<std::size_t>(u)] / denom * qkv[static_cast<std::size_t>(u) * 3 * d + vo + i];
                merged[static_cast<std::size_t>(t) * d + hd * dh + i] = acc;
            }
        }
    }
    std::vector<double> out(static_cast<std::size_t>(tokens) * d, 0.0);
    for (int t = 0; t < tokens; ++t)
        for (int o = 0; o < d; ++o) {
            double s = bproj[static_cast<std::size_t>(o)];
            for (int i = 0; i < d; ++i)
                s += merged[static_cast<std::size_t>(t) * d + i] * wproj[static_cast<std::size_t>(o) * d + i];
            out[static_cast<std::size_t>(t) * d + o] = s;
        }
    return out;
}

// Zero-padded bilinear read of one channel at fractional pixel (px, py).
inline double bilinear_at(const double* chan, int h, int w, double px, double py) {
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0, fy = py - y0;
    auto at = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
        return chan[static_cast<std::size_t>(yy) * w + xx];
    };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
           fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

struct DeformRefParams {
    int d = 0;      // token width
    int vd = 0;     // value width
    int heads = 0;
    int points = 0; // K per head per level
    std::vector<double> wq, bq;     // [d x d], [d]
    std::vector<double> woff, boff; // [heads*3*K*2 x d], [...]
    std::vector<double> watt, batt; // [heads*3*K x d], [...]
    std::vector<double> wval, bval; // [vd x d], [vd]
    std::vector<double> wout, bout; // [d x vd], [d]
};

// Multi-scale deformable attention, one explicit loop nest per query, head,
// level and point. Query/value token streams share the pyramid layout given
// by `shapes` (level extents in order 1/8, 1/16, 1/32).
inline std::vector<double> msdeform_ref(const std::vector<double>& q, const std::vector<double>& v, int tokens,
                                        const std::array<std::pair<int, int>, 3>& shapes,
                                        const DeformRefParams& p) {
    const int levels = 3;
    const int d = p.d, vd = p.vd, heads = p.heads, kpts = p.points;
    const int hd = vd / heads;
    std::array<int, 3> start{};
    {
        int off = 0;
        for (int l = 0; l < levels; ++l) {
            start[static_cast<std::size_t>(l)] = off;
            off += shapes[static_cast<std::size_t>(l)].first * shapes[static_cast<std::size_t>(l)].second;
        }
    }
    // value projection, stored per level as [vd x h x w] maps
    std::array<std::vector<double>, 3> vmaps;
    for (int l = 0; l < levels; ++l) {
        const int lh = shapes[static_cast<std::size_t>(l)].first, lw = shapes[static_cast<std::size_t>(l)].second;
        vmaps[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(vd) * lh * lw, 0.0);
        for (int i = 0; i < lh; ++i)
            for (int j = 0; j < lw; ++j) {
                const int tok = start[static_cast<std::size_t>(l)] + i * lw + j;
                for (int c = 0; c < vd; ++c) {
                    double s = p.bval[static_cast<std::size_t>(c)];
                    for (int e = 0; e < d; ++e)
                        s += v[static_cast<std::size_t>(tok) * d + e] * p.wval[static_cast<std::size_t>(c) * d + e];
                    vmaps[static_cast<std::size_t>(l)][(static_cast<std::size_t>(c) * lh + i) * lw + j] = s;
                }
            }
    }
    std::vector<double> out(static_cast<std::size_t>(tokens) * d, 0.0);
    std::vector<double> qt(static_cast<std::size_t>(d));
    std::vector<double> merged(static_cast<std::size_t>(vd));
    std::vector<double> logits(static_cast<std::size_t>(levels) * kpts);
    for (int t = 0; t < tokens; ++t) {
        // locate the token's own level and reference point
        int lt = 0;
        while (lt + 1 < levels && t >= start[static_cast<std::size_t>(lt + 1)]) ++lt;
        const int lh = shapes[static_cast<std::size_t>(lt)].first, lw = shapes[static_cast<std::size_t>(lt)].second;
        const int local = t - start[static_cast<std::size_t>(lt)];
        const double ry = (local / lw + 0.5) / lh;
        const double rx = (local % lw + 0.5) / lw;
        for (int c = 0; c < d; ++c) {
            double s = p.bq[static_cast<std::size_t>(c)];
            for (int e = 0; e < d; ++e)
                s += q[static_cast<std::size_t>(t) * d + e] * p.wq[static_cast<std::size_t>(c) * d + e];
            qt[static_cast<std::size_t>(c)] = s;
        }
        std::fill(merged.begin(), merged.end(), 0.0);
        for (int m = 0; m < heads; ++m) {
            double mx = -1e300;
            for (int l = 0; l < levels; ++l)
                for (int k = 0; k < kpts; ++k) {
                    const int row = (m * levels + l) * kpts + k;
                    double s = p.batt[static_cast<std::size_t>(row)];
                    for (int e = 0; e < d; ++e) s += qt[static_cast<std::size_t>(e)] * p.watt[static_cast<std::size_t>(row) * d + e];
                    logits[static_cast<std::size_t>(l * kpts + k)] = s;
                    mx = std::max(mx, s);
                }
            double denom = 0;
            for (auto& s : logits) {
                s = std::exp(s - mx);
                denom += s;
            }
            for (int l = 0; l < levels; ++l) {
                const int slh = shapes[static_cast<std::size_t>(l)].first, slw = shapes[static_cast<std::size_t>(l)].second;
                for (int k = 0; k < kpts; ++k) {
                    const int row2 = ((m * levels + l) * kpts + k) * 2;
                    double ox = p.boff[static_cast<std::size_t>(row2)];
                    double oy = p.boff[static_cast<std::size_t>(row2 + 1)];
                    for (int e = 0; e < d; ++e) {
                        ox += qt[static_cast<std::size_t>(e)] * p.woff[static_cast<std::size_t>(row2) * d + e];
                        oy += qt[static_cast<std::size_t>(e)] * p.woff[static_cast<std::size_t>(row2 + 1) * d + e];
                    }
                    const double px = rx * slw - 0.5 + ox;
                    const double py = ry * slh - 0.5 + oy;
                    const double wgt = logits[static_cast<std::size_t>(l * kpts + k)] / denom;
                    for (int c = 0; c < hd; ++c) {
                        const double* chan =
                            vmaps[static_cast<std::size_t>(l)].data() + static_cast<std::size_t>(m * hd + c) * slh * slw;
                        merged[static_cast<std::size_t>(m * hd + c)] += wgt * bilinear_at(chan, slh, slw, px, py);
                    }
                }
            }
        }
        for (int c = 0; c < d; ++c) {
            double s = p.bout[static_cast<std::size_t>(c)];
            for (int e = 0; e < vd; ++e)
                s += merged[static_cast<std::size_t>(e)] * p.wout[static_cast<std::size_t>(c) * vd + e];
            out[static_cast<std::size_t>(t) * d + c] = s;
        }
    }
    return out;
}

struct MrfpRefParams {
    int d = 0;                  // token width
    int dr = 0;                 // reduced width
    std::vector<int> kernels;   // one odd kernel size per channel group
    std::vector<double> wdown, bdown; // [dr x d], [dr]
    std::vector<double> dw_kernels;   // concatenated per-channel k*k taps, group order
    std::vector<double> dw_bias;      // [dr]
    std::vector<double> wup, bup;     // [d x dr], [d]
};

// FC-down, per-level grouped depthwise convs, FC-up, all in explicit loops.
inline std::vector<double> mrfp_ref(const std::vector<double>& tokens, int total,
                                    const std::array<std::pair<int, int>, 3>& shapes, const MrfpRefParams& p) {
    const int d = p.d, dr = p.dr;
    const int groups = static_cast<int>(p.kernels.size());
    const int cg = dr / groups;
    std::vector<double> red(static_cast<std::size_t>(total) * dr, 0.0);
    for (int t = 0; t < total; ++t)
        for (int c = 0; c < dr; ++c) {
            double s = p.bdown[static_cast<std::size_t>(c)];
            for (int e = 0; e < d; ++e)
                s += tokens[static_cast<std::size_t>(t) * d + e] * p.wdown[static_cast<std::size_t>(c) * d + e];
            red[static_cast<std::size_t>(t) * dr + c] = s;
        }
    // per-channel kernel tap offsets into dw_kernels
    std::vector<std::size_t> koff(static_cast<std::size_t>(dr));
    {
        std::size_t off = 0;
        for (int c = 0; c < dr; ++c) {
            koff[static_cast<std::size_t>(c)] = off;
            const int k = p.kernels[static_cast<std::size_t>(c / cg)];
            off += static_cast<std::size_t>(k) * k;
        }
    }
    std::vector<double> conved(static_cast<std::size_t>(total) * dr, 0.0);
    int start = 0;
    for (int l = 0; l < 3; ++l) {
        const int lh = shapes[static_cast<std::size_t>(l)].first, lw = shapes[static_cast<std::size_t>(l)].second;
        for (int c = 0; c < dr; ++c) {
            const int k = p.kernels[static_cast<std::size_t>(c / cg)];
            const int pad = k / 2;
            const double* taps = p.dw_kernels.data() + koff[static_cast<std::size_t>(c)];
            for (int i = 0; i < lh; ++i)
                for (int j = 0; j < lw; ++j) {
                    double s = p.dw_bias[static_cast<std::size_t>(c)];
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = i - pad + ky, ix = j - pad + kx;
                            if (iy < 0 || iy >= lh || ix < 0 || ix >= lw) continue;
                            s += red[static_cast<std::size_t>(start + iy * lw + ix) * dr + c] * taps[ky * k + kx];
                        }
                    conved[static_cast<std::size_t>(start + i * lw + j) * dr + c] = s;
                }
        }
        start += lh * lw;
    }
    std::vector<double> out(static_cast<std::size_t>(total) * d, 0.0);
    for (int t = 0; t < total; ++t)
        for (int c = 0; c < d; ++c) {
            double s = p.bup[static_cast<std::size_t>(c)];
            for (int e = 0; e < dr; ++e)
                s += conved[static_cast<std::size_t>(t) * dr + e] * p.wup[static_cast<std::size_t>(c) * dr + e];
            out[static_cast<std::size_t>(t) * d + c] = s;
        }
    return out;
}

} // namespace vitcomer::oracle
