// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vitcomer/config.hpp"
#include "vitcomer/cti.hpp"
#include "vitcomer/mrfp.hpp"
#include "vitcomer/rng.hpp"
#include "vitcomer/tensor.hpp"
#include "vitcomer/vit.hpp"

namespace vitcomer {

template <typename T>
struct HeadParams {
    std::array<ConvParams<T>, kLevels> level; // 1x1, D -> classes, zero-initialized
};

// The assembled two-branch model. Disabled modules own no parameters at all,
// which is what makes the ablation ladder's parameter accounting exact.
template <typename T>
struct Model {
    CoMerConfig cfg;
    VitParams<T> vit;
    StemParams<T> stem;
    std::vector<MrfpParams<T>> mrfp;  // one per stage when enabled
    std::vector<CtiParams<T>> cti_v;  // begin-of-stage, gated injection into ViT
    std::vector<CtiParams<T>> cti_c;  // end-of-stage, ungated injection into CNN
    std::optional<ConvParams<T>> quarter; // stride-2 transposed conv for the optional 1/4 level
    HeadParams<T> head;

    template <typename F>
    void for_each_param(F&& f);

    void attach(Tape<T>& tape) {
        for_each_param([&](const std::string&, Tensor<T>& t) { tape.watch(t); });
    }
    void detach() {
        for_each_param([](const std::string&, Tensor<T>& t) {
            t.tape = nullptr;
            t.node = -1;
        });
    }

    std::int64_t allocated_param_count() {
        std::int64_t n = 0;
        for_each_param([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
        return n;
    }
};

namespace detail {

template <typename T>
LinearParams<T> init_linear(int out, int in, Rng& rng, bool zero = false) {
    LinearParams<T> p;
    p.w = Tensor<T>::zeros({out, in});
    p.b = Tensor<T>::zeros({out});
    if (!zero) rng.fill_trunc_normal(p.w.data, 0.02);
    return p;
}

template <typename T>
NormParams<T> init_norm(int d) {
    NormParams<T> p;
    p.gamma = Tensor<T>::full({d}, T(1));
    p.beta = Tensor<T>::zeros({d});
    return p;
}

// He-style fan-in scaling for conv kernels.
template <typename T>
ConvParams<T> init_conv(int out_c, int in_c, int k, int stride, int pad, int groups, Rng& rng, bool zero = false) {
    ConvParams<T> p;
    p.kernel = Tensor<T>::zeros({out_c, in_c / groups, k, k});
    p.bias = Tensor<T>::zeros({out_c});
    if (!zero) rng.fill_normal(p.kernel.data, std::sqrt(2.0 / (static_cast<double>(in_c / groups) * k * k)));
    p.stride = stride;
    p.pad = pad;
    p.groups = groups;
    return p;
}

template <typename T>
CtiParams<T> init_cti(const CoMerConfig& cfg, bool with_alpha, Rng& rng) {
    const int d = cfg.vit.dim;
    const int vd = cfg.cti_value_dim();
    const int heads = cfg.cti.heads, kpts = cfg.cti.points;
    CtiParams<T> p;
    p.norm1 = init_norm<T>(d);
    p.attn.query = init_linear<T>(d, d, rng);
    p.attn.offset = init_linear<T>(heads * kLevels * kpts * 2, d, rng, /*zero=*/true);
    p.attn.attw = init_linear<T>(heads * kLevels * kpts, d, rng, /*zero=*/true);
    p.attn.value = init_linear<T>(vd, d, rng);
    p.attn.output = init_linear<T>(d, vd, rng);
    p.norm2 = init_norm<T>(d);
    const int hid = ffn_hidden_dim(d, cfg.cti.ffn_ratio);
    p.ffn.fc1 = init_linear<T>(hid, d, rng);
    p.ffn.fc2 = init_linear<T>(d, hid, rng);
    if (with_alpha) {
        p.alpha = Tensor<T>::zeros({1});
        p.has_alpha = true;
    }
    return p;
}

} // namespace detail

// Fresh model with the standard initialization: truncated-normal linear
// weights, fan-in-scaled conv kernels, zero biases and gates, zero offset and
// attention-weight projections, zero segmentation head.
template <typename T>
Model<T> init_model(const CoMerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Model<T> m;
    m.cfg = cfg;

    const int d = cfg.vit.dim;
    m.vit.patch = detail::init_conv<T>(d, 3, cfg.vit.patch, cfg.vit.patch, 0, 1, rng);
    // patch projection follows the linear-layer init convention
    rng.fill_trunc_normal(m.vit.patch.kernel.data, 0.02);
    int gh, gw;
    vit_grid(cfg.vit, cfg.vit.img_h, cfg.vit.img_w, gh, gw);
    m.vit.pos = Tensor<T>::zeros({gh * gw, d});
    rng.fill_trunc_normal(m.vit.pos.data, 0.02);
    const int mlp_hid = ffn_hidden_dim(d, cfg.vit.mlp_ratio);
    for (int b = 0; b < cfg.vit.depth; ++b) {
        VitBlockParams<T> blk;
        blk.ln1 = detail::init_norm<T>(d);
        blk.attn.qkv = detail::init_linear<T>(3 * d, d, rng);
        blk.attn.proj = detail::init_linear<T>(d, d, rng);
        blk.ln2 = detail::init_norm<T>(d);
        blk.mlp.fc1 = detail::init_linear<T>(mlp_hid, d, rng);
        blk.mlp.fc2 = detail::init_linear<T>(d, mlp_hid, rng);
        m.vit.blocks.push_back(std::move(blk));
    }

    const int w = cfg.stem_width;
    m.stem.conv1 = detail::init_conv<T>(w / 2, 3, 3, 2, 1, 1, rng);
    m.stem.conv2 = detail::init_conv<T>(w, w / 2, 3, 2, 1, 1, rng);
    m.stem.conv3 = detail::init_conv<T>(w, w, 3, 2, 1, 1, rng);
    m.stem.conv4 = detail::init_conv<T>(w, w, 3, 2, 1, 1, rng);
    m.stem.conv5 = detail::init_conv<T>(w, w, 3, 2, 1, 1, rng);
    for (int l = 0; l < kLevels; ++l) m.stem.proj[static_cast<std::size_t>(l)] = detail::init_conv<T>(d, w, 1, 1, 0, 1, rng);

    if (cfg.mrfp_enabled) {
        const int dr = cfg.mrfp_dim();
        const int cg = dr / cfg.mrfp.groups();
        for (int s = 0; s < cfg.stages; ++s) {
            MrfpParams<T> p;
            p.down = detail::init_linear<T>(dr, d, rng);
            for (int g = 0; g < cfg.mrfp.groups(); ++g) {
                const int k = cfg.mrfp.kernels[static_cast<std::size_t>(g)];
                p.group_convs.push_back(detail::init_conv<T>(cg, cg, k, 1, k / 2, cg, rng));
            }
            p.up = detail::init_linear<T>(d, dr, rng);
            m.mrfp.push_back(std::move(p));
        }
    }
    if (cfg.cti_to_vit_enabled)
        for (int s = 0; s < cfg.stages; ++s) m.cti_v.push_back(detail::init_cti<T>(cfg, /*with_alpha=*/true, rng));
    if (cfg.cti_to_cnn_enabled)
        for (int s = 0; s < cfg.stages; ++s) m.cti_c.push_back(detail::init_cti<T>(cfg, /*with_alpha=*/false, rng));

    if (cfg.extra_quarter_level) {
        ConvParams<T> q;
        q.kernel = Tensor<T>::zeros({d, d, 2, 2});
        rng.fill_normal(q.kernel.data, std::sqrt(2.0 / (d * 4.0)));
        q.bias = Tensor<T>::zeros({d});
        q.stride = 2;
        m.quarter = std::move(q);
    }

    for (int l = 0; l < kLevels; ++l)
        m.head.level[static_cast<std::size_t>(l)] = detail::init_conv<T>(cfg.toy_classes, d, 1, 1, 0, 1, rng, /*zero=*/true);
    return m;
}

template <typename T>
template <typename F>
void Model<T>::for_each_param(F&& f) {
    auto lin = [&](const std::string& base, LinearParams<T>& p) {
        f(base + ".weight", p.w);
        f(base + ".bias", p.b);
    };
    auto norm = [&](const std::string& base, NormParams<T>& p) {
        f(base + ".gamma", p.gamma);
        f(base + ".beta", p.beta);
    };
    auto conv = [&](const std::string& base, ConvParams<T>& p) {
        f(base + ".weight", p.kernel);
        f(base + ".bias", p.bias);
    };

    conv("vit.patch", vit.patch);
    f("vit.pos_embed", vit.pos);
    for (std::size_t b = 0; b < vit.blocks.size(); ++b) {
        const std::string base = "vit.block" + std::to_string(b);
        norm(base + ".ln1", vit.blocks[b].ln1);
        lin(base + ".attn.qkv", vit.blocks[b].attn.qkv);
        lin(base + ".attn.proj", vit.blocks[b].attn.proj);
        norm(base + ".ln2", vit.blocks[b].ln2);
        lin(base + ".mlp.fc1", vit.blocks[b].mlp.fc1);
        lin(base + ".mlp.fc2", vit.blocks[b].mlp.fc2);
    }
    conv("stem.conv1", stem.conv1);
    conv("stem.conv2", stem.conv2);
    conv("stem.conv3", stem.conv3);
    conv("stem.conv4", stem.conv4);
    conv("stem.conv5", stem.conv5);
    for (int l = 0; l < kLevels; ++l)
        conv("stem.proj" + std::to_string(kStrides[static_cast<std::size_t>(l)]), stem.proj[static_cast<std::size_t>(l)]);
    for (std::size_t s = 0; s < mrfp.size(); ++s) {
        const std::string base = "mrfp" + std::to_string(s + 1);
        lin(base + ".down", mrfp[s].down);
        for (std::size_t g = 0; g < mrfp[s].group_convs.size(); ++g)
            conv(base + ".conv" + std::to_string(g + 1), mrfp[s].group_convs[g]);
        lin(base + ".up", mrfp[s].up);
    }
    auto cti = [&](const std::string& base, CtiParams<T>& p) {
        norm(base + ".norm1", p.norm1);
        lin(base + ".attn.query", p.attn.query);
        lin(base + ".attn.offset", p.attn.offset);
        lin(base + ".attn.attw", p.attn.attw);
        lin(base + ".attn.value", p.attn.value);
        lin(base + ".attn.output", p.attn.output);
        norm(base + ".norm2", p.norm2);
        lin(base + ".ffn.fc1", p.ffn.fc1);
        lin(base + ".ffn.fc2", p.ffn.fc2);
        if (p.has_alpha) f(base + ".alpha", p.alpha);
    };
    for (std::size_t s = 0; s < cti_v.size(); ++s) cti("cti_v" + std::to_string(s + 1), cti_v[s]);
    for (std::size_t s = 0; s < cti_c.size(); ++s) cti("cti_c" + std::to_string(s + 1), cti_c[s]);
    if (quarter) conv("quarter", *quarter);
    for (int l = 0; l < kLevels; ++l)
        conv("head.level" + std::to_string(kStrides[static_cast<std::size_t>(l)]), head.level[static_cast<std::size_t>(l)]);
}

// ---------------------------------------------------------------------------
// Forward pass.
// ---------------------------------------------------------------------------

template <typename T>
struct ForwardResult {
    std::array<Tensor<T>, kLevels> out; // fused pyramid, [D x h x w] per level
    std::array<LevelShape, kLevels> shapes{};
    Tensor<T> vit_tokens;               // final ViT tokens
    Tensor<T> vit_map;                  // final tokens as a [D x H/16 x W/16] map
    TokenSeq<T> cnn;                    // final CNN-branch token sequence
    std::optional<Tensor<T>> quarter;   // optional 1/4 level
    std::vector<Tensor<T>> vit_trace;   // per-layer tokens when requested
};

template <typename T>
ForwardResult<T> forward(const Model<T>& m, const Tensor<T>& image, bool trace_vit = false) {
    const CoMerConfig& cfg = m.cfg;
    if (image.rank() != 3 || image.dims[0] != 3) throw ShapeError("forward: image must be [3 x H x W]");
    const int h = image.dims[1], w = image.dims[2];

    ForwardResult<T> res;
    Tensor<T> x = patch_embed(m.vit, cfg.vit, image);
    if (trace_vit) res.vit_trace.push_back(x.detached());
    Pyramid<T> c = conv_stem(m.stem, image);
    TokenSeq<T> f = flatten(c);

    for (int stage = 1; stage <= cfg.stages; ++stage) {
        if (cfg.mrfp_enabled) f = mrfp(f, m.mrfp[static_cast<std::size_t>(stage - 1)], cfg.mrfp);
        if (cfg.cti_to_vit_enabled) {
            const auto& cti = m.cti_v[static_cast<std::size_t>(stage - 1)];
            TokenSeq<T> fused = fuse(x, f);
            TokenSeq<T> o = cti_core(fused, cti, cfg.cti);
            x = inject_to_vit(x, o, cti.alpha);
        }
        int first, last;
        stage_bounds(cfg.vit.depth, cfg.stages, stage, first, last);
        for (int b = first; b < last; ++b) {
            x = vit_block(m.vit.blocks[static_cast<std::size_t>(b)], x, cfg.vit.heads);
            if (trace_vit) res.vit_trace.push_back(x.detached());
        }
        if (cfg.cti_to_cnn_enabled) {
            const auto& cti = m.cti_c[static_cast<std::size_t>(stage - 1)];
            TokenSeq<T> fused = fuse(x, f);
            TokenSeq<T> o = cti_core(fused, cti, cfg.cti);
            f = inject_to_cnn(fused, o);
        }
    }

    res.shapes = f.shapes;
    res.cnn = f;
    res.vit_tokens = x;
    res.vit_map = tokens_to_map(x, h / cfg.vit.patch, w / cfg.vit.patch);
    Pyramid<T> cnn_maps = unflatten(f);
    for (int l = 0; l < kLevels; ++l) {
        const LevelShape sh = f.shapes[static_cast<std::size_t>(l)];
        res.out[static_cast<std::size_t>(l)] = add(cnn_maps.levels[static_cast<std::size_t>(l)],
                                                   bilinear_resize(res.vit_map, sh.h, sh.w));
    }
    if (m.quarter) res.quarter = conv_transpose2d(res.out[0], *m.quarter);
    return res;
}

// ---------------------------------------------------------------------------
// Analytic parameter accounting: closed-form counts per module, no tensors.
// ---------------------------------------------------------------------------

struct ParamBreakdown {
    std::vector<std::pair<std::string, std::int64_t>> modules;
    std::int64_t total = 0;
    std::int64_t vit_baseline = 0; // plain ViT with the same L, D
    std::int64_t overhead = 0;     // stem + MRFP + CTI additions

    std::int64_t module_count(const std::string& name) const {
        for (const auto& [n, c] : modules)
            if (n == name) return c;
        return 0;
    }
};

inline ParamBreakdown param_count(const CoMerConfig& cfg) {
    cfg.validate();
    const std::int64_t d = cfg.vit.dim;
    auto lin = [](std::int64_t out, std::int64_t in) { return out * in + out; };
    auto convn = [](std::int64_t out, std::int64_t in_per_group, std::int64_t k) {
        return out * in_per_group * k * k + out;
    };

    ParamBreakdown pb;
    const std::int64_t gh = cfg.vit.img_h / cfg.vit.patch, gw = cfg.vit.img_w / cfg.vit.patch;
    const std::int64_t mlp_hid = ffn_hidden_dim(cfg.vit.dim, cfg.vit.mlp_ratio);
    std::int64_t vit = convn(d, 3, cfg.vit.patch) + gh * gw * d;
    vit += cfg.vit.depth * (2 * d       // ln1
                            + lin(3 * d, d) + lin(d, d) // attention
                            + 2 * d     // ln2
                            + lin(mlp_hid, d) + lin(d, mlp_hid));
    pb.modules.emplace_back("vit", vit);
    pb.vit_baseline = vit;

    const std::int64_t w = cfg.stem_width;
    std::int64_t stem = convn(w / 2, 3, 3) + convn(w, w / 2, 3) + 3 * convn(w, w, 3) + kLevels * convn(d, w, 1);
    pb.modules.emplace_back("stem", stem);

    std::int64_t mrfp_total = 0;
    if (cfg.mrfp_enabled) {
        const std::int64_t dr = cfg.mrfp_dim();
        const std::int64_t cg = dr / cfg.mrfp.groups();
        std::int64_t one = lin(dr, d) + lin(d, dr);
        for (int k : cfg.mrfp.kernels) one += convn(cg, 1, k);
        mrfp_total = one * cfg.stages;
    }
    pb.modules.emplace_back("mrfp", mrfp_total);

    const std::int64_t vd = cfg.cti_value_dim();
    const std::int64_t cti_hid = ffn_hidden_dim(cfg.vit.dim, cfg.cti.ffn_ratio);
    const std::int64_t cti_one = 2 * d // norm1
                                 + lin(d, d)                                     // query
                                 + lin(static_cast<std::int64_t>(cfg.cti.heads) * kLevels * cfg.cti.points * 2, d)
                                 + lin(static_cast<std::int64_t>(cfg.cti.heads) * kLevels * cfg.cti.points, d)
                                 + lin(vd, d) + lin(d, vd)                       // value, output
                                 + 2 * d                                         // norm2
                                 + lin(cti_hid, d) + lin(d, cti_hid);
    const std::int64_t cti_v_total = cfg.cti_to_vit_enabled ? cfg.stages * (cti_one + 1) : 0; // + alpha
    const std::int64_t cti_c_total = cfg.cti_to_cnn_enabled ? cfg.stages * cti_one : 0;
    pb.modules.emplace_back("cti_to_vit", cti_v_total);
    pb.modules.emplace_back("cti_to_cnn", cti_c_total);

    const std::int64_t quarter = cfg.extra_quarter_level ? d * d * 4 + d : 0;
    pb.modules.emplace_back("quarter", quarter);

    const std::int64_t head = kLevels * convn(cfg.toy_classes, d, 1);
    pb.modules.emplace_back("head", head);

    pb.overhead = stem + mrfp_total + cti_v_total + cti_c_total;
    pb.total = vit + pb.overhead + quarter + head;
    return pb;
}

} // namespace vitcomer
