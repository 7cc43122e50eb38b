// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "vitcomer/tensor.hpp"

namespace vitcomer {

// Parameter bundles. Weight layouts:
//   LinearParams.w  [out x in], b [out]
//   ConvParams.kernel [outC x inC/groups x k x k], bias [outC]
template <typename T>
struct LinearParams {
    Tensor<T> w, b;
};

template <typename T>
struct NormParams {
    Tensor<T> gamma, beta;
    double eps = 1e-6;
};

template <typename T>
struct ConvParams {
    Tensor<T> kernel, bias;
    int stride = 1;
    int pad = 0;
    int groups = 1;
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
    return linear(x, p.w, p.b);
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation on a [C x H x W] map, zero padding, square kernel.
// groups == channels gives a depthwise conv.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
    if (x.rank() != 3) throw ShapeError("conv2d: input must be [C x H x W]");
    if (p.kernel.rank() != 4) throw ShapeError("conv2d: kernel must be rank-4");
    const int in_c = x.dims[0], h = x.dims[1], w = x.dims[2];
    const int out_c = p.kernel.dims[0], icg = p.kernel.dims[1], k = p.kernel.dims[2];
    if (p.kernel.dims[3] != k) throw ShapeError("conv2d: kernel must be square");
    const int groups = p.groups;
    if (groups <= 0 || in_c % groups != 0 || out_c % groups != 0)
        throw ShapeError("conv2d: groups must divide both channel counts");
    if (icg != in_c / groups) throw ShapeError("conv2d: kernel in-channels do not match input/groups");
    if (p.bias.numel() != out_c) throw ShapeError("conv2d: bias length mismatch");
    const int stride = p.stride, pad = p.pad;
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");
    const int ocg = out_c / groups;

    Tensor<T> out = Tensor<T>::zeros({out_c, oh, ow});
    // per-tap valid output range keeps all bounds checks out of the hot loop:
    // iy = oy*stride - pad + ky must land in [0, h)
    auto valid_range = [](int extent, int out_extent, int stride, int pad, int tap, int& lo, int& hi) {
        lo = tap >= pad ? 0 : (pad - tap + stride - 1) / stride;
        hi = std::min(out_extent - 1, (extent - 1 + pad - tap) / stride);
    };
    for (int oc = 0; oc < out_c; ++oc) {
        const int g = oc / ocg;
        const T bias = p.bias.data[static_cast<std::size_t>(oc)];
        T* obase = out.data.data() + static_cast<std::size_t>(oc) * oh * ow;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) obase[i] = bias;
        for (int ic = 0; ic < icg; ++ic) {
            const T* xbase = x.data.data() + static_cast<std::size_t>(g * icg + ic) * h * w;
            const T* kk = p.kernel.data.data() + (static_cast<std::size_t>(oc) * icg + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                int oy_lo, oy_hi;
                valid_range(h, oh, stride, pad, ky, oy_lo, oy_hi);
                for (int kx = 0; kx < k; ++kx) {
                    const T kv = kk[ky * k + kx];
                    if (kv == T(0)) continue;
                    int ox_lo, ox_hi;
                    valid_range(w, ow, stride, pad, kx, ox_lo, ox_hi);
                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                        const T* xrow = xbase + static_cast<std::size_t>(oy * stride - pad + ky) * w - pad + kx;
                        T* orow = obase + static_cast<std::size_t>(oy) * ow;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += kv * xrow[ox];
                        } else {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += kv * xrow[static_cast<std::size_t>(ox) * stride];
                        }
                    }
                }
            }
        }
    }

    Tape<T>* tp = detail::joint_tape(x, p.kernel, p.bias);
    if (tp) {
        const int px = x.node, pk = p.kernel.node, pb = p.bias.node;
        auto xdata = x.data;
        auto kdata = p.kernel.data;
        out.tape = tp;
        out.node = tp->record(
            out.dims, [px, pk, pb, xdata, kdata, in_c, h, w, out_c, icg, ocg, k, stride, pad, oh, ow](
                          Tape<T>& t, const std::vector<T>& g) {
                std::vector<T> gx, gk, gb;
                if (px >= 0) gx.assign(static_cast<std::size_t>(in_c) * h * w, T(0));
                if (pk >= 0) gk.assign(static_cast<std::size_t>(out_c) * icg * k * k, T(0));
                if (pb >= 0) gb.assign(static_cast<std::size_t>(out_c), T(0));
                for (int oc = 0; oc < out_c; ++oc) {
                    const int grp = oc / ocg;
                    const T* kbase = kdata.data() + static_cast<std::size_t>(oc) * icg * k * k;
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            const T gv = g[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
                            if (gv == T(0)) continue;
                            if (pb >= 0) gb[static_cast<std::size_t>(oc)] += gv;
                            for (int ic = 0; ic < icg; ++ic) {
                                const std::size_t xoff = static_cast<std::size_t>(grp * icg + ic) * h * w;
                                for (int ky = 0; ky < k; ++ky) {
                                    const int iy = oy * stride - pad + ky;
                                    if (iy < 0 || iy >= h) continue;
                                    for (int kx = 0; kx < k; ++kx) {
                                        const int ix = ox * stride - pad + kx;
                                        if (ix < 0 || ix >= w) continue;
                                        const std::size_t xi = xoff + static_cast<std::size_t>(iy) * w + ix;
                                        const std::size_t ki =
                                            (static_cast<std::size_t>(oc) * icg + ic) * k * k + ky * k + kx;
                                        if (px >= 0) gx[xi] += gv * kbase[static_cast<std::size_t>(ic) * k * k + ky * k + kx];
                                        if (pk >= 0) gk[ki] += gv * xdata[xi];
                                    }
                                }
                            }
                        }
                }
                if (px >= 0) t.accumulate(px, gx);
                if (pk >= 0) t.accumulate(pk, gk);
                if (pb >= 0) t.accumulate(pb, gb);
            });
    }
    detail::check_finite("conv2d", out);
    return out;
}

// Transposed conv used by the optional quarter-scale output. Output size is
// (H-1)*stride + k, no padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const ConvParams<T>& p) {
    if (x.rank() != 3) throw ShapeError("conv_transpose2d: input must be [C x H x W]");
    const int in_c = x.dims[0], h = x.dims[1], w = x.dims[2];
    const int kin = p.kernel.dims[0], out_c = p.kernel.dims[1], k = p.kernel.dims[2];
    if (kin != in_c) throw ShapeError("conv_transpose2d: kernel in-channels mismatch");
    if (p.groups != 1) throw ShapeError("conv_transpose2d: groups unsupported");
    const int stride = p.stride;
    const int oh = (h - 1) * stride + k, ow = (w - 1) * stride + k;
    Tensor<T> out = Tensor<T>::zeros({out_c, oh, ow});
    for (int oc = 0; oc < out_c; ++oc) {
        T* obase = out.data.data() + static_cast<std::size_t>(oc) * oh * ow;
        const T bias = p.bias.data[static_cast<std::size_t>(oc)];
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) obase[i] = bias;
    }
    for (int ic = 0; ic < in_c; ++ic) {
        const T* xbase = x.data.data() + static_cast<std::size_t>(ic) * h * w;
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix) {
                const T xv = xbase[static_cast<std::size_t>(iy) * w + ix];
                if (xv == T(0)) continue;
                for (int oc = 0; oc < out_c; ++oc) {
                    const T* kk = p.kernel.data.data() + (static_cast<std::size_t>(ic) * out_c + oc) * k * k;
                    T* obase = out.data.data() + static_cast<std::size_t>(oc) * oh * ow;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            obase[static_cast<std::size_t>(iy * stride + ky) * ow + ix * stride + kx] +=
                                xv * kk[ky * k + kx];
                }
            }
    }
    Tape<T>* tp = detail::joint_tape(x, p.kernel, p.bias);
    if (tp) {
        const int px = x.node, pk = p.kernel.node, pb = p.bias.node;
        auto xdata = x.data;
        auto kdata = p.kernel.data;
        out.tape = tp;
        out.node = tp->record(out.dims, [px, pk, pb, xdata, kdata, in_c, h, w, out_c, k, stride, oh, ow](
                                            Tape<T>& t, const std::vector<T>& g) {
            std::vector<T> gx, gk, gb;
            if (px >= 0) gx.assign(static_cast<std::size_t>(in_c) * h * w, T(0));
            if (pk >= 0) gk.assign(static_cast<std::size_t>(in_c) * out_c * k * k, T(0));
            if (pb >= 0) {
                gb.assign(static_cast<std::size_t>(out_c), T(0));
                for (int oc = 0; oc < out_c; ++oc)
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i)
                        gb[static_cast<std::size_t>(oc)] += g[static_cast<std::size_t>(oc) * oh * ow + i];
            }
            for (int ic = 0; ic < in_c; ++ic)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix) {
                        const std::size_t xi = static_cast<std::size_t>(ic) * h * w + static_cast<std::size_t>(iy) * w + ix;
                        for (int oc = 0; oc < out_c; ++oc) {
                            const T* kk = kdata.data() + (static_cast<std::size_t>(ic) * out_c + oc) * k * k;
                            const T* gbase = g.data() + static_cast<std::size_t>(oc) * oh * ow;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const T gv = gbase[static_cast<std::size_t>(iy * stride + ky) * ow + ix * stride + kx];
                                    if (px >= 0) gx[xi] += gv * kk[ky * k + kx];
                                    if (pk >= 0)
                                        gk[(static_cast<std::size_t>(ic) * out_c + oc) * k * k + ky * k + kx] +=
                                            gv * xdata[xi];
                                }
                        }
                    }
            if (px >= 0) t.accumulate(px, gx);
            if (pk >= 0) t.accumulate(pk, gk);
            if (pb >= 0) t.accumulate(pb, gb);
        });
    }
    detail::check_finite("conv_transpose2d", out);
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis of a [tokens x D] tensor.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const NormParams<T>& p) {
    if (x.rank() != 2) throw ShapeError("layer_norm: input must be [tokens x D]");
    const int n = x.dims[0], d = x.dims[1];
    if (p.gamma.numel() != d || p.beta.numel() != d)
        throw ShapeError("layer_norm: gamma/beta length must equal feature dim");
    Tensor<T> out = Tensor<T>::zeros(x.dims);
    std::vector<T> xhat(static_cast<std::size_t>(n) * d);
    std::vector<T> inv_std(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const T* row = x.data.data() + static_cast<std::size_t>(i) * d;
        T mean = 0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (int j = 0; j < d; ++j) {
            T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T istd = T(1) / std::sqrt(var + static_cast<T>(p.eps));
        inv_std[static_cast<std::size_t>(i)] = istd;
        for (int j = 0; j < d; ++j) {
            const T xh = (row[j] - mean) * istd;
            xhat[static_cast<std::size_t>(i) * d + j] = xh;
            out[static_cast<std::size_t>(i) * d + j] = p.gamma[j] * xh + p.beta[j];
        }
    }
    Tape<T>* tp = detail::joint_tape(x, p.gamma, p.beta);
    if (tp) {
        const int px = x.node, pg = p.gamma.node, pb = p.beta.node;
        auto gamma = p.gamma.data;
        out.tape = tp;
        out.node = tp->record(out.dims, [px, pg, pb, gamma, xhat, inv_std, n, d](Tape<T>& t,
                                                                                 const std::vector<T>& g) {
            if (pg >= 0) {
                std::vector<T> gg(static_cast<std::size_t>(d), T(0));
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j)
                        gg[static_cast<std::size_t>(j)] +=
                            g[static_cast<std::size_t>(i) * d + j] * xhat[static_cast<std::size_t>(i) * d + j];
                t.accumulate(pg, gg);
            }
            if (pb >= 0) {
                std::vector<T> gb(static_cast<std::size_t>(d), T(0));
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * d + j];
                t.accumulate(pb, gb);
            }
            if (px >= 0) {
                std::vector<T> gx(static_cast<std::size_t>(n) * d);
                for (int i = 0; i < n; ++i) {
                    T m1 = 0, m2 = 0;
                    for (int j = 0; j < d; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(i) * d + j;
                        const T gy = g[idx] * gamma[static_cast<std::size_t>(j)];
                        m1 += gy;
                        m2 += gy * xhat[idx];
                    }
                    m1 /= static_cast<T>(d);
                    m2 /= static_cast<T>(d);
                    for (int j = 0; j < d; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(i) * d + j;
                        const T gy = g[idx] * gamma[static_cast<std::size_t>(j)];
                        gx[idx] = (gy - m1 - xhat[idx] * m2) * inv_std[static_cast<std::size_t>(i)];
                    }
                }
                t.accumulate(px, gx);
            }
        });
    }
    detail::check_finite("layer_norm", out);
    return out;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention over [tokens x D], composed from tape primitives.
// ---------------------------------------------------------------------------

template <typename T>
struct MhsaParams {
    LinearParams<T> qkv;  // D -> 3D, column layout [q | k | v]
    LinearParams<T> proj; // D -> D
};

template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const MhsaParams<T>& p, int heads) {
    if (x.rank() != 2) throw ShapeError("mhsa: input must be [tokens x D]");
    const int d = x.dims[1];
    if (d % heads != 0) throw ShapeError("mhsa: dim must be divisible by heads");
    const int dh = d / heads;
    Tensor<T> qkv = linear(x, p.qkv);
    std::vector<Tensor<T>> outs;
    for (int h = 0; h < heads; ++h) {
        Tensor<T> q = slice(qkv, 1, h * dh, dh);
        Tensor<T> k = slice(qkv, 1, d + h * dh, dh);
        Tensor<T> v = slice(qkv, 1, 2 * d + h * dh, dh);
        Tensor<T> scores = scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
        Tensor<T> attn = softmax(scores, 1);
        outs.push_back(matmul(attn, v));
    }
    Tensor<T> cat = heads == 1 ? outs[0] : concat(1, outs);
    return linear(cat, p.proj);
}

// ---------------------------------------------------------------------------
// Bilinear resize of a [C x H x W] map, align-corners-false, border clamp.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
    if (x.rank() != 3) throw ShapeError("bilinear_resize: input must be [C x H x W]");
    if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output extents must be >= 1");
    const int c = x.dims[0], h = x.dims[1], w = x.dims[2];

    auto make_axis = [](int in, int out, std::vector<int>& lo, std::vector<int>& hi, std::vector<T>& frac) {
        lo.resize(static_cast<std::size_t>(out));
        hi.resize(static_cast<std::size_t>(out));
        frac.resize(static_cast<std::size_t>(out));
        const double sc = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double s = (o + 0.5) * sc - 0.5;
            if (s < 0) s = 0;
            if (s > in - 1) s = in - 1;
            int l = static_cast<int>(std::floor(s));
            if (l > in - 1) l = in - 1;
            lo[static_cast<std::size_t>(o)] = l;
            hi[static_cast<std::size_t>(o)] = std::min(l + 1, in - 1);
            frac[static_cast<std::size_t>(o)] = static_cast<T>(s - l);
        }
    };
    std::vector<int> y0, y1, x0, x1;
    std::vector<T> fy, fx;
    make_axis(h, out_h, y0, y1, fy);
    make_axis(w, out_w, x0, x1, fx);

    Tensor<T> out = Tensor<T>::zeros({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch) {
        const T* src = x.data.data() + static_cast<std::size_t>(ch) * h * w;
        T* dst = out.data.data() + static_cast<std::size_t>(ch) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                const T a = fy[static_cast<std::size_t>(oy)], b = fx[static_cast<std::size_t>(ox)];
                const T v00 = src[static_cast<std::size_t>(y0[oy]) * w + x0[ox]];
                const T v01 = src[static_cast<std::size_t>(y0[oy]) * w + x1[ox]];
                const T v10 = src[static_cast<std::size_t>(y1[oy]) * w + x0[ox]];
                const T v11 = src[static_cast<std::size_t>(y1[oy]) * w + x1[ox]];
                dst[static_cast<std::size_t>(oy) * out_w + ox] =
                    (T(1) - a) * ((T(1) - b) * v00 + b * v01) + a * ((T(1) - b) * v10 + b * v11);
            }
    }
    if (x.tape) {
        const int px = x.node;
        out.tape = x.tape;
        out.node = x.tape->record(out.dims, [px, y0, y1, x0, x1, fy, fx, c, h, w, out_h, out_w](
                                                Tape<T>& t, const std::vector<T>& g) {
            if (px < 0) return;
            std::vector<T> gx(static_cast<std::size_t>(c) * h * w, T(0));
            for (int ch = 0; ch < c; ++ch) {
                T* dst = gx.data() + static_cast<std::size_t>(ch) * h * w;
                const T* src = g.data() + static_cast<std::size_t>(ch) * out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy)
                    for (int ox = 0; ox < out_w; ++ox) {
                        const T gv = src[static_cast<std::size_t>(oy) * out_w + ox];
                        if (gv == T(0)) continue;
                        const T a = fy[static_cast<std::size_t>(oy)], b = fx[static_cast<std::size_t>(ox)];
                        dst[static_cast<std::size_t>(y0[oy]) * w + x0[ox]] += (T(1) - a) * (T(1) - b) * gv;
                        dst[static_cast<std::size_t>(y0[oy]) * w + x1[ox]] += (T(1) - a) * b * gv;
                        dst[static_cast<std::size_t>(y1[oy]) * w + x0[ox]] += a * (T(1) - b) * gv;
                        dst[static_cast<std::size_t>(y1[oy]) * w + x1[ox]] += a * b * gv;
                    }
            }
            t.accumulate(px, gx);
        });
    }
    detail::check_finite("bilinear_resize", out);
    return out;
}

// ---------------------------------------------------------------------------
// Bilinear point sampling on a [C x H x W] map with zero padding outside.
// points is [P x 2] holding (px, py) pixel coordinates; the result is [P x C].
// Differentiable w.r.t. both the map and the point coordinates.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& x, const Tensor<T>& points) {
    if (x.rank() != 3) throw ShapeError("bilinear_sample: map must be [C x H x W]");
    if (points.rank() != 2 || points.dims[1] != 2) throw ShapeError("bilinear_sample: points must be [P x 2]");
    const int c = x.dims[0], h = x.dims[1], w = x.dims[2];
    const int np = points.dims[0];
    Tensor<T> out = Tensor<T>::zeros({np, c});
    for (int p = 0; p < np; ++p) {
        const T px = points[static_cast<std::size_t>(p) * 2];
        const T py = points[static_cast<std::size_t>(p) * 2 + 1];
        const int x0 = static_cast<int>(std::floor(static_cast<double>(px)));
        const int y0 = static_cast<int>(std::floor(static_cast<double>(py)));
        const T fx = px - static_cast<T>(x0);
        const T fy = py - static_cast<T>(y0);
        const bool in_x0 = x0 >= 0 && x0 < w, in_x1 = x0 + 1 >= 0 && x0 + 1 < w;
        const bool in_y0 = y0 >= 0 && y0 < h, in_y1 = y0 + 1 >= 0 && y0 + 1 < h;
        for (int ch = 0; ch < c; ++ch) {
            const T* src = x.data.data() + static_cast<std::size_t>(ch) * h * w;
            const T v00 = (in_y0 && in_x0) ? src[static_cast<std::size_t>(y0) * w + x0] : T(0);
            const T v01 = (in_y0 && in_x1) ? src[static_cast<std::size_t>(y0) * w + x0 + 1] : T(0);
            const T v10 = (in_y1 && in_x0) ? src[static_cast<std::size_t>(y0 + 1) * w + x0] : T(0);
            const T v11 = (in_y1 && in_x1) ? src[static_cast<std::size_t>(y0 + 1) * w + x0 + 1] : T(0);
            out[static_cast<std::size_t>(p) * c + ch] =
                (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) + fy * ((T(1) - fx) * v10 + fx * v11);
        }
    }
    Tape<T>* tp = detail::joint_tape(x, points);
    if (tp) {
        const int pxn = x.node, ppts = points.node;
        auto xdata = x.data;
        auto pts = points.data;
        out.tape = tp;
        out.node = tp->record(out.dims, [pxn, ppts, xdata, pts, c, h, w, np](Tape<T>& t, const std::vector<T>& g) {
            std::vector<T> gx, gp;
            if (pxn >= 0) gx.assign(static_cast<std::size_t>(c) * h * w, T(0));
            if (ppts >= 0) gp.assign(static_cast<std::size_t>(np) * 2, T(0));
            for (int p = 0; p < np; ++p) {
                const T px = pts[static_cast<std::size_t>(p) * 2];
                const T py = pts[static_cast<std::size_t>(p) * 2 + 1];
                const int x0 = static_cast<int>(std::floor(static_cast<double>(px)));
                const int y0 = static_cast<int>(std::floor(static_cast<double>(py)));
                const T fx = px - static_cast<T>(x0);
                const T fy = py - static_cast<T>(y0);
                const bool in_x0 = x0 >= 0 && x0 < w, in_x1 = x0 + 1 >= 0 && x0 + 1 < w;
                const bool in_y0 = y0 >= 0 && y0 < h, in_y1 = y0 + 1 >= 0 && y0 + 1 < h;
                T gfx = 0, gfy = 0;
                for (int ch = 0; ch < c; ++ch) {
                    const T gv = g[static_cast<std::size_t>(p) * c + ch];
                    if (gv == T(0)) continue;
                    const T* src = xdata.data() + static_cast<std::size_t>(ch) * h * w;
                    const T v00 = (in_y0 && in_x0) ? src[static_cast<std::size_t>(y0) * w + x0] : T(0);
                    const T v01 = (in_y0 && in_x1) ? src[static_cast<std::size_t>(y0) * w + x0 + 1] : T(0);
                    const T v10 = (in_y1 && in_x0) ? src[static_cast<std::size_t>(y0 + 1) * w + x0] : T(0);
                    const T v11 = (in_y1 && in_x1) ? src[static_cast<std::size_t>(y0 + 1) * w + x0 + 1] : T(0);
                    if (pxn >= 0) {
                        T* dst = gx.data() + static_cast<std::size_t>(ch) * h * w;
                        if (in_y0 && in_x0) dst[static_cast<std::size_t>(y0) * w + x0] += (T(1) - fy) * (T(1) - fx) * gv;
                        if (in_y0 && in_x1) dst[static_cast<std::size_t>(y0) * w + x0 + 1] += (T(1) - fy) * fx * gv;
                        if (in_y1 && in_x0) dst[static_cast<std::size_t>(y0 + 1) * w + x0] += fy * (T(1) - fx) * gv;
                        if (in_y1 && in_x1) dst[static_cast<std::size_t>(y0 + 1) * w + x0 + 1] += fy * fx * gv;
                    }
                    gfx += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                    gfy += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
                }
                if (ppts >= 0) {
                    gp[static_cast<std::size_t>(p) * 2] += gfx;
                    gp[static_cast<std::size_t>(p) * 2 + 1] += gfy;
                }
            }
            if (pxn >= 0) t.accumulate(pxn, gx);
            if (ppts >= 0) t.accumulate(ppts, gp);
        });
    }
    detail::check_finite("bilinear_sample", out);
    return out;
}

// ---------------------------------------------------------------------------
// Feed-forward block: Linear(D -> hidden) -> GELU -> Linear(hidden -> D).
// ---------------------------------------------------------------------------

template <typename T>
struct FfnParams {
    LinearParams<T> fc1, fc2;
};

template <typename T>
Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& p) {
    return linear(gelu(linear(x, p.fc1)), p.fc2);
}

inline int ffn_hidden_dim(int d, double ratio) {
    int hd = static_cast<int>(std::ceil(static_cast<double>(d) * ratio));
    return std::max(hd, 1);
}

// Tokens [h*w x D] (row-major over the grid) <-> map [D x h x w].
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, int h, int w) {
    if (tokens.rank() != 2 || tokens.dims[0] != h * w)
        throw ShapeError("tokens_to_map: token count does not match grid");
    return reshape(transpose2d(tokens), {tokens.dims[1], h, w});
}

template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map) {
    if (map.rank() != 3) throw ShapeError("map_to_tokens: input must be [C x H x W]");
    return transpose2d(reshape(map, {map.dims[0], map.dims[1] * map.dims[2]}));
}

} // namespace vitcomer
