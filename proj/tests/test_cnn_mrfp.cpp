// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vitcomer/model.hpp"
#include "vitcomer/mrfp.hpp"
#include "vitcomer/oracles.hpp"
#include "vitcomer/rng.hpp"

using namespace vitcomer;

namespace {

CoMerConfig toy_cfg() { return variant_config("toy"); }

Tensor<double> random_image(int h, int w, Rng& rng) {
    Tensor<double> img = Tensor<double>::zeros({3, h, w});
    rng.fill_uniform(img.data, 0, 1);
    return img;
}

Pyramid<double> random_pyramid(int img_h, int img_w, int d, Rng& rng) {
    Pyramid<double> p;
    p.shapes = pyramid_shapes(img_h, img_w);
    for (int l = 0; l < kLevels; ++l) {
        p.levels[l] = Tensor<double>::zeros({d, p.shapes[l].h, p.shapes[l].w});
        rng.fill_uniform(p.levels[l].data, -1, 1);
    }
    return p;
}

// Collects the depthwise taps of an MRFP instance in the oracle's layout.
oracle::MrfpRefParams mrfp_ref_params(const MrfpParams<double>& p, const CoMerConfig& cfg) {
    oracle::MrfpRefParams rp;
    rp.d = cfg.vit.dim;
    rp.dr = cfg.mrfp_dim();
    rp.kernels = cfg.mrfp.kernels;
    rp.wdown = p.down.w.data;
    rp.bdown = p.down.b.data;
    rp.wup = p.up.w.data;
    rp.bup = p.up.b.data;
    for (int g = 0; g < cfg.mrfp.groups(); ++g) {
        const auto& cv = p.group_convs[g];
        rp.dw_kernels.insert(rp.dw_kernels.end(), cv.kernel.data.begin(), cv.kernel.data.end());
        rp.dw_bias.insert(rp.dw_bias.end(), cv.bias.data.begin(), cv.bias.data.end());
    }
    return rp;
}

} // namespace

TEST_CASE("conv_stem level shapes follow the stride contract") {
    auto m = init_model<double>(toy_cfg(), 1);
    Rng rng(1);
    auto p = conv_stem(m.stem, random_image(64, 64, rng));
    CHECK(p.levels[0].dims == Dims{16, 8, 8});
    CHECK(p.levels[1].dims == Dims{16, 4, 4});
    CHECK(p.levels[2].dims == Dims{16, 2, 2});
    CHECK_THROWS_AS(conv_stem(m.stem, Tensor<double>::zeros({3, 60, 64})), ShapeError);
}

TEST_CASE("conv_stem of a zero image is a zero pyramid (zero biases, no norm)") {
    auto m = init_model<double>(toy_cfg(), 2);
    auto p = conv_stem(m.stem, Tensor<double>::zeros({3, 64, 64}));
    for (int l = 0; l < kLevels; ++l)
        for (auto v : p.levels[l].data) CHECK(v == 0.0);
}

TEST_CASE("flatten/unflatten round trip with the documented offsets") {
    Rng rng(3);
    auto p = random_pyramid(64, 64, 16, rng);
    auto t = flatten(p);
    CHECK(t.total == 84); // 64 + 16 + 4
    CHECK(t.offsets == std::array<int, 3>{0, 64, 80});
    CHECK(t.tokens.dims == Dims{84, 16});

    auto back = unflatten(t);
    for (int l = 0; l < kLevels; ++l) {
        CHECK(back.levels[l].dims == p.levels[l].dims);
        CHECK(back.levels[l].data == p.levels[l].data);
    }
}

TEST_CASE("flatten layout is level-major, row-major per level, channels across") {
    Rng rng(4);
    auto p = random_pyramid(64, 64, 4, rng);
    auto t = flatten(p);
    // token 65 is the second token of the 1/16 level, i.e. grid (0,1)
    for (int c = 0; c < 4; ++c) CHECK(t.tokens[65 * 4 + c] == p.levels[1][(c * 4 + 0) * 4 + 1]);
}

TEST_CASE("mrfp with identity FCs and delta kernels is the identity") {
    CoMerConfig cfg = toy_cfg();
    cfg.mrfp.reduce = 1.0; // square FCs so identity is expressible
    cfg.validate();
    Rng rng(5);
    MrfpParams<double> p;
    const int d = cfg.vit.dim;
    p.down.w = Tensor<double>::zeros({d, d});
    p.down.b = Tensor<double>::zeros({d});
    p.up.w = Tensor<double>::zeros({d, d});
    p.up.b = Tensor<double>::zeros({d});
    for (int i = 0; i < d; ++i) {
        p.down.w[i * d + i] = 1.0;
        p.up.w[i * d + i] = 1.0;
    }
    const int cg = d / cfg.mrfp.groups();
    for (int g = 0; g < cfg.mrfp.groups(); ++g) {
        const int k = cfg.mrfp.kernels[g];
        ConvParams<double> cv;
        cv.kernel = Tensor<double>::zeros({cg, 1, k, k});
        for (int c = 0; c < cg; ++c) cv.kernel[c * k * k + (k / 2) * k + (k / 2)] = 1.0;
        cv.bias = Tensor<double>::zeros({cg});
        cv.stride = 1;
        cv.pad = k / 2;
        cv.groups = cg;
        p.group_convs.push_back(cv);
    }
    auto t = flatten(random_pyramid(64, 64, d, rng));
    auto out = mrfp(t, p, cfg.mrfp);
    CHECK(out.tokens.data == t.tokens.data);
}

TEST_CASE("mrfp preserves token count and width for assorted configs") {
    Rng rng(6);
    for (auto kernels : {std::vector<int>{3}, std::vector<int>{3, 5}, std::vector<int>{3, 5, 7, 9}}) {
        CoMerConfig cfg = toy_cfg();
        cfg.mrfp.kernels = kernels;
        cfg.validate();
        auto m = init_model<double>(cfg, 7);
        auto t = flatten(random_pyramid(64, 64, cfg.vit.dim, rng));
        auto out = mrfp(t, m.mrfp[0], cfg.mrfp);
        CHECK(out.tokens.dims == t.tokens.dims);
        CHECK(out.offsets == t.offsets);
    }
}

TEST_CASE("mrfp matches the brute-force composition oracle") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        CoMerConfig cfg = toy_cfg();
        auto m = init_model<double>(cfg, 100 + trial);
        // randomize the conv taps (init is small); keep structure
        for (auto& cv : m.mrfp[0].group_convs) {
            rng.fill_uniform(cv.kernel.data, -1, 1);
            rng.fill_uniform(cv.bias.data, -1, 1);
        }
        rng.fill_uniform(m.mrfp[0].down.w.data, -1, 1);
        rng.fill_uniform(m.mrfp[0].up.w.data, -1, 1);
        auto t = flatten(random_pyramid(64, 64, cfg.vit.dim, rng));
        auto out = mrfp(t, m.mrfp[0], cfg.mrfp);
        auto rp = mrfp_ref_params(m.mrfp[0], cfg);
        std::array<std::pair<int, int>, 3> shapes;
        for (int l = 0; l < kLevels; ++l) shapes[l] = {t.shapes[l].h, t.shapes[l].w};
        auto ref = oracle::mrfp_ref(t.tokens.data, t.total, shapes, rp);
        double worst = 0;
        for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - out.tokens.data[i]));
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("each mrfp group only touches its own channels") {
    CoMerConfig cfg = toy_cfg(); // D' = 8, two groups of 4
    auto m = init_model<double>(cfg, 9);
    Rng rng(10);
    for (auto& cv : m.mrfp[0].group_convs) rng.fill_uniform(cv.kernel.data, -1, 1);
    rng.fill_uniform(m.mrfp[0].down.w.data, -1, 1);

    auto t = flatten(random_pyramid(64, 64, cfg.vit.dim, rng));
    // run the reduced/conv stage manually on tokens with group-1 channels zeroed
    TokenSeq<double> reduced = t;
    reduced.tokens = linear(t.tokens, m.mrfp[0].down);
    const int dr = cfg.mrfp_dim(), cg = dr / 2;
    TokenSeq<double> zeroed = reduced;
    for (int tok = 0; tok < t.total; ++tok)
        for (int c = 0; c < cg; ++c) zeroed.tokens[tok * dr + c] = 0.0;

    auto conv_group = [&](const TokenSeq<double>& seq, int g) {
        auto maps = unflatten(seq);
        std::vector<double> out;
        for (int l = 0; l < kLevels; ++l) {
            auto part = conv2d(slice(maps.levels[l], 0, g * cg, cg), m.mrfp[0].group_convs[g]);
            out.insert(out.end(), part.data.begin(), part.data.end());
        }
        return out;
    };
    // group 0 (zeroed input channels): pre-concat output collapses to its bias response
    auto g0 = conv_group(zeroed, 0);
    auto g0_zero_in = conv_group(reduced, 0);
    bool differs = false;
    for (std::size_t i = 0; i < g0.size(); ++i)
        if (std::abs(g0[i] - g0_zero_in[i]) > 1e-12) differs = true;
    CHECK(differs); // zeroing group-0 channels changes group-0 output...
    auto g1 = conv_group(zeroed, 1);
    auto g1_ref = conv_group(reduced, 1);
    CHECK(g1 == g1_ref); // ...but never group 1
}

TEST_CASE("mrfp locality: perturbing the 1/32 level leaves other levels' tokens unchanged") {
    CoMerConfig cfg = toy_cfg();
    auto m = init_model<double>(cfg, 11);
    Rng rng(12);
    auto p = random_pyramid(64, 64, cfg.vit.dim, rng);
    auto t = flatten(p);
    auto out1 = mrfp(t, m.mrfp[0], cfg.mrfp);

    // perturb only the 1/32 level
    auto p2 = p;
    for (auto& v : p2.levels[2].data) v += 0.37;
    auto out2 = mrfp(flatten(p2), m.mrfp[0], cfg.mrfp);

    const int d = cfg.vit.dim;
    for (int tok = 0; tok < t.offsets[2]; ++tok)
        for (int c = 0; c < d; ++c)
            CHECK(out1.tokens[tok * d + c] == doctest::Approx(out2.tokens[tok * d + c]).epsilon(1e-15));
    // and the 1/32 tokens do change
    double delta = 0;
    for (int tok = t.offsets[2]; tok < t.total; ++tok)
        for (int c = 0; c < d; ++c) delta += std::abs(out1.tokens[tok * d + c] - out2.tokens[tok * d + c]);
    CHECK(delta > 1e-6);
}

TEST_CASE("mrfp config validation rejects indivisible group splits") {
    CoMerConfig cfg = toy_cfg();
    cfg.mrfp.kernels = {3, 5, 7}; // D' = 8 not divisible by 3
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
