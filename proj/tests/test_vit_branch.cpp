// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vitcomer/model.hpp"
#include "vitcomer/rng.hpp"
#include "vitcomer/vit.hpp"

using namespace vitcomer;

namespace {

CoMerConfig toy_cfg() {
    CoMerConfig c = variant_config("toy");
    c.validate();
    return c;
}

Tensor<double> random_image(int h, int w, Rng& rng) {
    Tensor<double> img = Tensor<double>::zeros({3, h, w});
    rng.fill_uniform(img.data, 0, 1);
    return img;
}

} // namespace

TEST_CASE("patch_embed produces one token per 16x16 patch") {
    auto m = init_model<double>(toy_cfg(), 5);
    Rng rng(1);
    auto tokens = patch_embed(m.vit, m.cfg.vit, random_image(64, 64, rng));
    CHECK(tokens.dims == Dims{16, 16}); // 4x4 grid, width D = 16
    CHECK_THROWS_AS(patch_embed(m.vit, m.cfg.vit, Tensor<double>::zeros({3, 65, 64})), ShapeError);
}

TEST_CASE("patch_embed of a zero image is the positional embedding (zero bias)") {
    auto m = init_model<double>(toy_cfg(), 6);
    auto tokens = patch_embed(m.vit, m.cfg.vit, Tensor<double>::zeros({3, 64, 64}));
    for (std::int64_t i = 0; i < tokens.numel(); ++i) CHECK(tokens[i] == doctest::Approx(m.vit.pos[i]).epsilon(1e-15));

    // zero positional embedding too -> exactly zero tokens
    for (auto& v : m.vit.pos.data) v = 0.0;
    auto t2 = patch_embed(m.vit, m.cfg.vit, Tensor<double>::zeros({3, 64, 64}));
    for (std::int64_t i = 0; i < t2.numel(); ++i) CHECK(t2[i] == 0.0);
}

TEST_CASE("patch_embed resizes the stored positional grid for other image sizes") {
    auto m = init_model<double>(toy_cfg(), 7);
    Rng rng(2);
    auto tokens = patch_embed(m.vit, m.cfg.vit, random_image(96, 96, rng));
    CHECK(tokens.dims == Dims{36, 16}); // 6x6 grid

    // constant positional embedding stays constant through the 4x4 -> 6x6 resize
    auto m2 = init_model<double>(toy_cfg(), 8);
    for (auto& v : m2.vit.pos.data) v = 0.25;
    auto zero_img = Tensor<double>::zeros({3, 96, 96});
    auto t2 = patch_embed(m2.vit, m2.cfg.vit, zero_img);
    for (std::int64_t i = 0; i < t2.numel(); ++i) CHECK(t2[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("vit_block with zero weights is the identity (residuals only)") {
    auto m = init_model<double>(toy_cfg(), 9);
    auto& blk = m.vit.blocks[0];
    for (Tensor<double>* t : {&blk.attn.qkv.w, &blk.attn.qkv.b, &blk.attn.proj.w, &blk.attn.proj.b, &blk.mlp.fc1.w,
                              &blk.mlp.fc1.b, &blk.mlp.fc2.w, &blk.mlp.fc2.b})
        for (auto& v : t->data) v = 0.0;
    Rng rng(3);
    Tensor<double> x = Tensor<double>::zeros({5, 16});
    rng.fill_uniform(x.data, -1, 1);
    auto y = vit_block(blk, x, m.cfg.vit.heads);
    CHECK(y.data == x.data);
}

TEST_CASE("vit_block keeps token count and width") {
    auto m = init_model<double>(toy_cfg(), 10);
    Rng rng(4);
    Tensor<double> x = Tensor<double>::zeros({7, 16});
    rng.fill_uniform(x.data, -1, 1);
    auto y = vit_block(m.vit.blocks[1], x, m.cfg.vit.heads);
    CHECK(y.dims == x.dims);
}

TEST_CASE("vit_block equals the hand-composed primitive chain") {
    auto m = init_model<double>(toy_cfg(), 11);
    const auto& blk = m.vit.blocks[0];
    Rng rng(5);
    Tensor<double> x = Tensor<double>::zeros({2, 16});
    rng.fill_uniform(x.data, -1, 1);
    auto y = vit_block(blk, x, 2);
    auto mid = add(x, mhsa(layer_norm(x, blk.ln1), blk.attn, 2));
    auto ref = add(mid, ffn(layer_norm(mid, blk.ln2), blk.mlp));
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("stage boundaries partition the depth evenly") {
    int first, last;
    // L=8, N=4: stage 2 covers blocks 2 and 3
    stage_bounds(8, 4, 2, first, last);
    CHECK(first == 2);
    CHECK(last == 4);
    // L=12, N=4 boundaries {0,3,6,9,12}
    for (int s = 1; s <= 4; ++s) {
        stage_bounds(12, 4, s, first, last);
        CHECK(first == 3 * (s - 1));
        CHECK(last == 3 * s);
    }
    CHECK_THROWS_AS(stage_bounds(8, 4, 0, first, last), ShapeError);
    CHECK_THROWS_AS(stage_bounds(8, 4, 5, first, last), ShapeError);
}

TEST_CASE("running all stages equals running all blocks sequentially") {
    auto m = init_model<double>(toy_cfg(), 12);
    Rng rng(6);
    Tensor<double> x = Tensor<double>::zeros({16, 16});
    rng.fill_uniform(x.data, -1, 1);

    Tensor<double> staged = x;
    for (int s = 1; s <= m.cfg.stages; ++s) staged = run_stage(m.vit, m.cfg.vit, m.cfg.stages, staged, s);

    Tensor<double> direct = x;
    for (const auto& blk : m.vit.blocks) direct = vit_block(blk, direct, m.cfg.vit.heads);

    CHECK(staged.data == direct.data);
}

TEST_CASE("plain ViT forward traces L+1 token snapshots of constant shape") {
    auto m = init_model<double>(toy_cfg(), 13);
    Rng rng(7);
    std::vector<Tensor<double>> trace;
    auto out = plain_vit_forward(m.vit, m.cfg.vit, random_image(64, 64, rng), &trace);
    CHECK(trace.size() == static_cast<std::size_t>(m.cfg.vit.depth) + 1);
    for (const auto& t : trace) CHECK(t.dims == Dims{16, 16});
    CHECK(out.dims == Dims{16, 16});
}
