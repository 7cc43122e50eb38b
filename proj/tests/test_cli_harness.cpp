// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vitcomer/checkpoint.hpp"
#include "vitcomer/cli.hpp"
#include "vitcomer/image_io.hpp"

using namespace vitcomer;

namespace {

int run_cmd(std::vector<std::string> args) {
    args.insert(args.begin(), "vitcomer");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string write_tmp(const std::string& name, const std::string& content) {
    const std::string path = "tmp_cli_" + name;
    std::ofstream out(path);
    out << content;
    return path;
}

struct CaptureStdout {
    std::stringstream buffer;
    std::streambuf* old;
    CaptureStdout() : old(std::cout.rdbuf(buffer.rdbuf())) {}
    ~CaptureStdout() { std::cout.rdbuf(old); }
    std::string str() const { return buffer.str(); }
};

} // namespace

TEST_CASE("config parser: comments, lists, overrides") {
    std::istringstream in(
        "# comment line\n"
        "vit_dim = 24   # inline comment\n"
        "vit_heads = 3\n"
        "mrfp_kernels = 3,5,7\n"
        "seed = 99\n"
        "dtype = f32\n");
    auto rc = parse_run_config(in);
    CHECK(rc.model.vit.dim == 24);
    CHECK(rc.model.mrfp.kernels == std::vector<int>{3, 5, 7});
    CHECK(rc.seed == 99);
    CHECK(rc.dtype == Dtype::f32);
}

TEST_CASE("config parser: hard errors") {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return parse_run_config(in);
    };
    CHECK_THROWS_AS(parse("unknown_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("vit_dim = twelve\n"), ConfigError);
    CHECK_THROWS_AS(parse("vit_dim = 16\nvit_dim = 32\n"), ConfigError);
    CHECK_THROWS_AS(parse("vit_dim\n"), ConfigError);
    CHECK_THROWS_AS(parse("img_h = 65\n"), ConfigError);               // divisibility
    CHECK_THROWS_AS(parse("variant = S\nvit_dim = 128\n"), ConfigError); // variant pins the structure
    CHECK_THROWS_AS(parse("variant = Q\n"), ConfigError);
    CHECK_THROWS_AS(parse("mrfp_kernels = 3,4\n"), ConfigError);        // even kernel
    CHECK_NOTHROW(parse("variant = T\nseed = 3\n"));
}

TEST_CASE("model config serialization round-trips") {
    CoMerConfig cfg = variant_config("toy");
    cfg.mrfp.kernels = {3, 5, 7, 9};
    cfg.mrfp.reduce = 0.75;
    cfg.vit.dim = 32;
    cfg.cti_to_cnn_enabled = false;
    cfg.validate();
    auto back = parse_model_config(serialize_model_config(cfg));
    CHECK(back.vit.dim == 32);
    CHECK(back.mrfp.kernels == cfg.mrfp.kernels);
    CHECK(back.mrfp.reduce == cfg.mrfp.reduce);
    CHECK(back.cti_to_cnn_enabled == false);
    CHECK(serialize_model_config(back) == serialize_model_config(cfg));
}

TEST_CASE("shapes command: pass, token counts at 96x96, bad config") {
    {
        CaptureStdout cap;
        CHECK(run_cmd({"shapes"}) == 0);
        CHECK(cap.str().find("token_total: PASS: 84") != std::string::npos);
    }
    {
        const std::string cfg = write_tmp("s96.cfg", "img_h = 96\nimg_w = 96\n");
        CaptureStdout cap;
        CHECK(run_cmd({"shapes", "--config", cfg}) == 0);
        const std::string out = cap.str();
        CHECK(out.find("level8_tokens: PASS: 144") != std::string::npos);
        CHECK(out.find("level16_tokens: PASS: 36") != std::string::npos);
        CHECK(out.find("level32_tokens: PASS: 9") != std::string::npos);
        std::remove(cfg.c_str());
    }
    {
        const std::string cfg = write_tmp("bad.cfg", "img_h = 65\n");
        CHECK(run_cmd({"shapes", "--config", cfg}) == 2);
        std::remove(cfg.c_str());
    }
    CHECK(run_cmd({"shapes", "--config", "missing_file.cfg"}) == 2);
    CHECK(run_cmd({"bogus-subcommand"}) == 2);
}

TEST_CASE("gradcheck command: sampled run passes, tol 0 is a guaranteed failure") {
    const std::string cfg = write_tmp(
        "small.cfg", "img_h = 32\nimg_w = 32\nvit_dim = 8\nvit_heads = 2\ncti_heads = 2\ncti_points = 2\n");
    {
        CaptureStdout cap;
        CHECK(run_cmd({"gradcheck", "--config", cfg, "--max-per-group", "4"}) == 0);
        CHECK(cap.str().find("PASS") != std::string::npos);
    }
    {
        CaptureStdout cap;
        CHECK(run_cmd({"gradcheck", "--config", cfg, "--max-per-group", "2", "--tol", "0"}) == 1);
    }
    std::remove(cfg.c_str());
}

TEST_CASE("equiv-init command: pass, negative control, disabled branch") {
    {
        CaptureStdout cap;
        CHECK(run_cmd({"equiv-init"}) == 0);
        CHECK(cap.str().find("vit_layer0: PASS: 0: exact") != std::string::npos);
    }
    {
        CaptureStdout cap;
        CHECK(run_cmd({"equiv-init", "--set-alpha", "0.1"}) == 1);
        CHECK(cap.str().find("# first differing layer:") != std::string::npos);
    }
    {
        const std::string cfg = write_tmp("nov.cfg", "cti_to_vit_enabled = false\n");
        CHECK(run_cmd({"equiv-init", "--config", cfg, "--set-alpha", "0.5"}) == 0);
        std::remove(cfg.c_str());
    }
}

TEST_CASE("oracle command passes on a couple of trials") {
    CaptureStdout cap;
    CHECK(run_cmd({"oracle", "--trials", "2"}) == 0);
    const std::string out = cap.str();
    for (const char* line : {"oracle_conv2d: PASS", "oracle_mhsa: PASS", "oracle_msdeform_attn: PASS",
                             "oracle_zero_offset_init: PASS", "oracle_mrfp: PASS"})
        CHECK(out.find(line) != std::string::npos);
}

TEST_CASE("params command covers every variant") {
    for (const char* v : {"toy", "T", "S", "B", "L"}) {
        CaptureStdout cap;
        CHECK(run_cmd({"params", "--variant", v}) == 0);
    }
    {
        CaptureStdout cap;
        CHECK(run_cmd({"params", "--variant", "toy"}) == 0);
        CHECK(cap.str().find("analytic_vs_allocated: PASS") != std::string::npos);
    }
    CHECK(run_cmd({"params", "--variant", "XL"}) == 2);
}

TEST_CASE("train-toy with lr 0 keeps the loss flat at ln 4") {
    std::filesystem::create_directories("tmp_cli_train0");
    CaptureStdout cap;
    // final loss stays at ln 4, so the command reports the failed bound
    CHECK(run_cmd({"train-toy", "--steps", "4", "--lr", "0", "--out", "tmp_cli_train0"}) == 1);
    std::ifstream csv("tmp_cli_train0/loss.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "step,loss");
    int rows = 0;
    while (std::getline(csv, line)) {
        const double v = std::stod(line.substr(line.find(',') + 1));
        CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-4));
        ++rows;
    }
    CHECK(rows == 4);
    std::filesystem::remove_all("tmp_cli_train0");
}

TEST_CASE("train-toy is deterministic for a fixed seed") {
    auto run_once = [](const std::string& dir) {
        std::filesystem::create_directories(dir);
        CaptureStdout cap;
        run_cmd({"train-toy", "--steps", "6", "--seed", "5", "--out", dir});
        std::ifstream csv(dir + "/loss.csv");
        std::stringstream ss;
        ss << csv.rdbuf();
        return ss.str();
    };
    const std::string a = run_once("tmp_cli_det_a");
    const std::string b = run_once("tmp_cli_det_b");
    CHECK(a == b);
    CHECK(a.find("step,loss") == 0);
    // checkpoints byte-identical as well
    const std::string ca = read_file_bytes("tmp_cli_det_a/toy_final.vcmr");
    const std::string cb = read_file_bytes("tmp_cli_det_b/toy_final.vcmr");
    CHECK(ca == cb);
    std::filesystem::remove_all("tmp_cli_det_a");
    std::filesystem::remove_all("tmp_cli_det_b");
}

TEST_CASE("export-features writes nine PGM maps with exact headers") {
    auto model = init_model<float>(variant_config("toy"), 3);
    save_checkpoint(model, "tmp_cli_export.vcmr");
    std::filesystem::create_directories("tmp_cli_export");
    {
        CaptureStdout cap;
        CHECK(run_cmd({"export-features", "--checkpoint", "tmp_cli_export.vcmr", "--image", "shapes", "--out",
                   "tmp_cli_export"}) == 0);
    }
    int files = 0;
    for (const char* branch : {"cnn", "vit", "fused"})
        for (int stride : {8, 16, 32}) {
            const std::string path = "tmp_cli_export/" + std::string(branch) + "_" + std::to_string(stride) + ".pgm";
            REQUIRE(std::filesystem::exists(path));
            ++files;
            std::ifstream in(path, std::ios::binary);
            std::string header(3, '\0');
            in.read(header.data(), 3);
            CHECK(header == "P5\n");
            const int side = 64 / stride;
            std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            const std::string want = std::to_string(side) + " " + std::to_string(side) + "\n255\n";
            CHECK(rest.substr(0, want.size()) == want);
            CHECK(rest.size() == want.size() + static_cast<std::size_t>(side) * side);
        }
    CHECK(files == 9);

    // unreadable inputs are usage errors
    CHECK(run_cmd({"export-features", "--checkpoint", "no_such.vcmr", "--image", "shapes"}) == 2);
    CHECK(run_cmd({"export-features", "--checkpoint", "tmp_cli_export.vcmr", "--image", "no_such.pgm"}) == 2);
    std::filesystem::remove_all("tmp_cli_export");
    std::remove("tmp_cli_export.vcmr");
}

TEST_CASE("PGM round trip through the reader and zero-range gray rule") {
    // writer/reader agreement on a tiny ramp
    std::vector<std::uint8_t> bytes{0, 64, 128, 255};
    write_pgm("tmp_cli_rt.pgm", 2, 2, bytes);
    auto img = read_pnm<double>("tmp_cli_rt.pgm");
    CHECK(img.dims == Dims{3, 2, 2});
    CHECK(img[0] == doctest::Approx(0.0));
    CHECK(img[3] == doctest::Approx(1.0));
    std::remove("tmp_cli_rt.pgm");

    auto gray = map_to_gray(Tensor<double>::full({4, 3, 3}, 1.25));
    for (auto b : gray) CHECK(b == 128);

    CHECK_THROWS_AS(read_pnm<double>("missing.pgm"), IoError);
    CHECK_THROWS_AS(make_pattern<double>("nope", 64, 64, 1), IoError);
}

TEST_CASE("procedural patterns are well-formed") {
    for (const char* name : {"checker", "ramp", "shapes"}) {
        auto img = make_pattern<double>(name, 64, 64, 9);
        CHECK(img.dims == Dims{3, 64, 64});
        for (auto v : img.data) {
            CHECK(v >= -0.1);
            CHECK(v <= 1.1);
        }
    }
}
