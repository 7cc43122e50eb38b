// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "vitcomer/checkpoint.hpp"
#include "vitcomer/config.hpp"
#include "vitcomer/gradcheck.hpp"
#include "vitcomer/image_io.hpp"
#include "vitcomer/model.hpp"
#include "vitcomer/oracles.hpp"
#include "vitcomer/report.hpp"
#include "vitcomer/toy_task.hpp"
#include "vitcomer/verify.hpp"

namespace vitcomer {

// Exit codes: 0 every check passed, 1 a check failed, 2 usage/config error.

namespace cli {

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string dtype;
    std::string out_dir;
};

inline RunConfig load_run_config(const CommonArgs& c) {
    RunConfig rc = c.config_path.empty() ? RunConfig{} : parse_run_config_file(c.config_path);
    if (c.seed_set) rc.seed = c.seed;
    if (!c.dtype.empty()) {
        rc.dtype = dtype_from_name(c.dtype);
        rc.dtype_explicit = true;
    }
    if (!c.out_dir.empty()) rc.out_dir = c.out_dir;
    rc.model.validate();
    return rc;
}

inline void add_common(CLI::App* cmd, CommonArgs& c) {
    cmd->add_option("--config", c.config_path, "run configuration file (key = value lines)");
    cmd->add_option("--seed", c.seed, "random seed")->each([&](const std::string&) { c.seed_set = true; });
    cmd->add_option("--dtype", c.dtype, "scalar type")->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--out", c.out_dir, "output directory");
}

template <typename T>
Tensor<T> random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<T> img = Tensor<T>::zeros({3, h, w});
    rng.fill_uniform(img.data, 0, 1);
    return img;
}

// ---------------------------------------------------------------------------
// shapes: forward on a random input, assert every level/token shape invariant.
// ---------------------------------------------------------------------------

template <typename T>
int run_shapes(const RunConfig& rc) {
    const CoMerConfig& cfg = rc.model;
    Report rep;
    finite_checks() = true;
    auto model = init_model<T>(cfg, rc.seed);
    auto fwd = forward(model, random_image<T>(cfg.vit.img_h, cfg.vit.img_w, rc.seed + 1));
    finite_checks() = false;

    const auto shapes = pyramid_shapes(cfg.vit.img_h, cfg.vit.img_w);
    int total = 0;
    for (int l = 0; l < kLevels; ++l) {
        const auto& lvl = fwd.out[static_cast<std::size_t>(l)];
        const auto sh = shapes[static_cast<std::size_t>(l)];
        const std::string got =
            std::to_string(lvl.dims[0]) + "x" + std::to_string(lvl.dims[1]) + "x" + std::to_string(lvl.dims[2]);
        const std::string want = std::to_string(cfg.vit.dim) + "x" + std::to_string(sh.h) + "x" + std::to_string(sh.w);
        rep.add("level" + std::to_string(kStrides[static_cast<std::size_t>(l)]) + "_shape", got == want, got, want);
        rep.add("level" + std::to_string(kStrides[static_cast<std::size_t>(l)]) + "_tokens",
                fwd.cnn.level_tokens(l) == sh.h * sh.w, std::to_string(fwd.cnn.level_tokens(l)),
                std::to_string(sh.h * sh.w));
        total += sh.h * sh.w;
    }
    rep.add("token_total", fwd.cnn.total == total, std::to_string(fwd.cnn.total), std::to_string(total));
    const int vit_tokens = (cfg.vit.img_h / cfg.vit.patch) * (cfg.vit.img_w / cfg.vit.patch);
    rep.add("vit_tokens", fwd.vit_tokens.dims[0] == vit_tokens, std::to_string(fwd.vit_tokens.dims[0]),
            std::to_string(vit_tokens));
    if (cfg.extra_quarter_level)
        rep.add("quarter_shape", fwd.quarter && fwd.quarter->dims == Dims{cfg.vit.dim, cfg.vit.img_h / 4, cfg.vit.img_w / 4},
                "present", "present");
    rep.print();
    return rep.exit_code();
}

// ---------------------------------------------------------------------------
// gradcheck: per-parameter-group central-difference errors, float64 forced.
// ---------------------------------------------------------------------------

inline int run_gradcheck(const RunConfig& rc, double eps, double tol, int max_per_group, int threads) {
    GradcheckOptions opt;
    opt.eps = eps;
    opt.max_per_group = max_per_group;
    opt.threads = threads;
    finite_checks() = true; // non-finite intermediates abort with the op name
    const auto results = gradcheck_model(rc.model, rc.seed, opt);
    finite_checks() = false;
    Report rep;
    for (const auto& r : results)
        rep.add(r.name, r.max_rel_err < tol, fmt_double(r.max_rel_err), "< " + fmt_double(tol));
    rep.print();
    std::int64_t checked = 0;
    for (const auto& r : results) checked += r.checked;
    std::cout << "# groups=" << results.size() << " entries=" << checked << " eps=" << fmt_double(eps) << "\n";
    return rep.exit_code();
}

// ---------------------------------------------------------------------------
// equiv-init: CoMer's per-layer ViT tokens vs the standalone plain ViT.
// ---------------------------------------------------------------------------

inline int run_equiv_init(const RunConfig& rc, double set_alpha, bool alpha_given) {
    const CoMerConfig& cfg = rc.model;
    auto model = init_model<double>(cfg, rc.seed);
    if (alpha_given)
        for (auto& cti : model.cti_v) cti.alpha[0] = set_alpha;

    auto img = random_image<double>(cfg.vit.img_h, cfg.vit.img_w, rc.seed + 1);
    auto fwd = forward(model, img, /*trace_vit=*/true);
    std::vector<Tensor<double>> plain;
    plain_vit_forward(model.vit, cfg.vit, img, &plain);

    Report rep;
    int first_diff = -1;
    for (std::size_t l = 0; l < plain.size(); ++l) {
        double worst = 0;
        for (std::int64_t i = 0; i < plain[l].numel(); ++i)
            worst = std::max(worst, std::abs(fwd.vit_trace[l][i] - plain[l][i]));
        if (worst != 0.0 && first_diff < 0) first_diff = static_cast<int>(l);
        rep.add("vit_layer" + std::to_string(l), worst == 0.0, fmt_double(worst), "exact");
    }
    rep.print();
    if (first_diff >= 0) std::cout << "# first differing layer: " << first_diff << "\n";
    return rep.exit_code();
}

// ---------------------------------------------------------------------------
// oracle: brute-force loop references for the composite kernels.
// ---------------------------------------------------------------------------

inline int run_oracle(const RunConfig& rc, int trials) {
    const double tol = 1e-10;
    const OracleErrors err = oracle_sweep(rc.model, rc.seed, trials);
    Report rep;
    rep.add("oracle_conv2d", err.conv2d < tol, fmt_double(err.conv2d), "< " + fmt_double(tol));
    rep.add("oracle_mhsa", err.mhsa < tol, fmt_double(err.mhsa), "< " + fmt_double(tol));
    rep.add("oracle_msdeform_attn", err.msdeform < tol, fmt_double(err.msdeform), "< " + fmt_double(tol));
    rep.add("oracle_zero_offset_init", err.zero_offset < tol, fmt_double(err.zero_offset), "< " + fmt_double(tol));
    rep.add("oracle_mrfp", err.mrfp < tol, fmt_double(err.mrfp), "< " + fmt_double(tol));
    rep.print();
    std::cout << "# trials=" << trials << "\n";
    return rep.exit_code();
}

// ---------------------------------------------------------------------------
// params: analytic counts, plain-ViT baseline, overhead deltas.
// ---------------------------------------------------------------------------

inline int run_params(const std::string& variant) {
    CoMerConfig cfg = variant_config(variant);
    auto pb = param_count(cfg);
    Report rep;
    for (const auto& [name, count] : pb.modules) rep.add("params_" + name, true, std::to_string(count), "info");
    rep.add("params_total", true, std::to_string(pb.total), "info");
    rep.add("params_vit_baseline", true, std::to_string(pb.vit_baseline), "info");

    if (variant == "toy") {
        auto model = init_model<double>(cfg, 1);
        const auto allocated = model.allocated_param_count();
        rep.add("analytic_vs_allocated", allocated == pb.total, std::to_string(pb.total) + " vs " + std::to_string(allocated),
                "exact");
    }
    const double targets[3] = {3e6, 6e6, 15e6};
    const std::string names[3] = {"T", "S", "B"};
    for (int i = 0; i < 3; ++i)
        if (variant == names[i]) {
            const bool ok = pb.overhead > 0.75 * targets[i] && pb.overhead < 1.25 * targets[i];
            rep.add("overhead_delta", ok, std::to_string(pb.overhead), fmt_double(targets[i]) + " +/-25%");
        }
    if (variant == "L") rep.add("overhead_delta", true, std::to_string(pb.overhead), "info");
    rep.print();
    return rep.exit_code();
}

// ---------------------------------------------------------------------------
// train-toy: deterministic overfit run with CSV loss log and checkpoint.
// ---------------------------------------------------------------------------

template <typename T>
int run_train_toy(const RunConfig& rc, int steps, double lr, double threshold) {
    const CoMerConfig& cfg = rc.model;
    auto model = init_model<T>(cfg, rc.seed);
    auto ds = make_toy_dataset<T>(rc.seed + 1, rc.train_images, cfg.vit.img_h, cfg.vit.img_w, cfg.toy_classes);
    SgdState<T> opt;
    opt.lr = lr;
    opt.momentum = rc.train_momentum;

    std::filesystem::create_directories(rc.out_dir);
    const std::string csv_path = rc.out_dir + "/loss.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot open " + csv_path);
    csv << "step,loss\n";

    const int batch = std::min(rc.train_batch, rc.train_images);
    double initial = -1, last = -1;
    std::vector<double> history;
    for (int s = 0; s < steps; ++s) {
        std::vector<int> idx;
        for (int b = 0; b < batch; ++b) idx.push_back((s * batch + b) % rc.train_images);
        last = train_step(model, opt, ds, idx);
        if (s == 0) initial = last;
        history.push_back(last);
        csv << s << "," << fmt_double(last) << "\n";
        if (last > 10.0 * initial) {
            std::cout << "diverged: FAIL: " << fmt_double(last) << ": <= " << fmt_double(10.0 * initial) << "\n";
            return 1;
        }
    }
    csv.close();

    const std::string ckpt_path = rc.out_dir + "/toy_final.vcmr";
    save_checkpoint(model, ckpt_path);

    // final loss: mean over the last full pass through the dataset
    const int epoch_steps = std::min<int>(static_cast<int>(history.size()), (rc.train_images + batch - 1) / batch);
    double final_loss = 0;
    for (int i = 0; i < epoch_steps; ++i) final_loss += history[history.size() - 1 - static_cast<std::size_t>(i)];
    final_loss /= std::max(1, epoch_steps);

    Report rep;
    rep.add("initial_loss", std::abs(initial - std::log(static_cast<double>(cfg.toy_classes))) < 1e-3,
            fmt_double(initial), "ln " + std::to_string(cfg.toy_classes));
    rep.add("final_loss", final_loss < threshold, fmt_double(final_loss), "< " + fmt_double(threshold));
    rep.print();
    std::cout << "# loss log: " << csv_path << "\n# checkpoint: " << ckpt_path << "\n";
    return rep.exit_code();
}

// ---------------------------------------------------------------------------
// export-features: channel-mean PGM maps of both branches and the fusion.
// ---------------------------------------------------------------------------

template <typename T>
int run_export_features(const std::string& ckpt_path, const std::string& image_arg, const std::string& out_dir,
                        int img_h, int img_w, std::uint64_t seed) {
    auto model = load_checkpoint<T>(ckpt_path);
    const int h = img_h > 0 ? img_h : model.cfg.vit.img_h;
    const int w = img_w > 0 ? img_w : model.cfg.vit.img_w;

    Tensor<T> img;
    if (image_arg == "checker" || image_arg == "ramp" || image_arg == "shapes") {
        img = make_pattern<T>(image_arg, h, w, seed);
    } else {
        img = read_pnm<T>(image_arg);
    }
    if (img.dims[1] % 32 != 0 || img.dims[2] % 32 != 0)
        throw ConfigError("input image extents must be divisible by 32");

    auto fwd = forward(model, img);
    std::filesystem::create_directories(out_dir);
    Pyramid<T> cnn = unflatten(fwd.cnn);

    Report rep;
    for (int l = 0; l < kLevels; ++l) {
        const auto sh = fwd.shapes[static_cast<std::size_t>(l)];
        const std::string stride = std::to_string(kStrides[static_cast<std::size_t>(l)]);
        const struct {
            const char* branch;
            Tensor<T> map;
        } outs[3] = {
            {"cnn", cnn.levels[static_cast<std::size_t>(l)]},
            {"vit", bilinear_resize(fwd.vit_map, sh.h, sh.w)},
            {"fused", fwd.out[static_cast<std::size_t>(l)]},
        };
        for (const auto& o : outs) {
            const std::string path = out_dir + "/" + o.branch + "_" + stride + ".pgm";
            write_pgm(path, sh.w, sh.h, map_to_gray(o.map));
            rep.add(std::string(o.branch) + "_" + stride, true, path, "written");
        }
    }
    rep.print();
    return rep.exit_code();
}

} // namespace cli

inline int run_cli(int argc, char** argv) {
    CLI::App app{"ViT-CoMer dense-prediction backbone: verification and toy-training harness"};
    app.require_subcommand(1);

    cli::CommonArgs shapes_args, grad_args, equiv_args, oracle_args, train_args;

    auto* cmd_shapes = app.add_subcommand("shapes", "forward-pass shape invariants");
    cli::add_common(cmd_shapes, shapes_args);

    auto* cmd_grad = app.add_subcommand("gradcheck", "central-difference check of every parameter group (float64)");
    cli::add_common(cmd_grad, grad_args);
    double gc_eps = 1e-4, gc_tol = 1e-4;
    int gc_max = -1, gc_threads = 0;
    cmd_grad->add_option("--eps", gc_eps, "finite-difference step");
    cmd_grad->add_option("--tol", gc_tol, "max relative error per group");
    cmd_grad->add_option("--max-per-group", gc_max, "entries checked per group (-1 = all)");
    cmd_grad->add_option("--threads", gc_threads, "worker threads (0 = hardware)");

    auto* cmd_equiv = app.add_subcommand("equiv-init", "zero-gate ViT equivalence at initialization (float64)");
    cli::add_common(cmd_equiv, equiv_args);
    double set_alpha = 0.0;
    bool alpha_given = false;
    cmd_equiv->add_option("--set-alpha", set_alpha, "override every gate for a negative control")
        ->each([&](const std::string&) { alpha_given = true; });

    auto* cmd_oracle = app.add_subcommand("oracle", "brute-force oracle equivalence for the composite kernels (float64)");
    cli::add_common(cmd_oracle, oracle_args);
    int trials = 20;
    cmd_oracle->add_option("--trials", trials, "random seeds per oracle");

    auto* cmd_params = app.add_subcommand("params", "parameter accounting and overhead deltas");
    std::string variant = "toy";
    cmd_params->add_option("--variant", variant, "model variant")->check(CLI::IsMember({"toy", "T", "S", "B", "L"}));

    auto* cmd_train = app.add_subcommand("train-toy", "deterministic toy segmentation training run");
    cli::add_common(cmd_train, train_args);
    int steps = -1;
    double lr = -1, loss_threshold = 0.05;
    cmd_train->add_option("--steps", steps, "optimization steps (default from config)");
    cmd_train->add_option("--lr", lr, "learning rate (default from config)");
    cmd_train->add_option("--loss-threshold", loss_threshold, "final-loss acceptance bound");

    auto* cmd_export = app.add_subcommand("export-features", "write per-level branch feature maps as PGM images");
    std::string ckpt_path, image_arg = "shapes", export_out = ".";
    int ex_h = 0, ex_w = 0;
    std::uint64_t ex_seed = 1;
    cmd_export->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    cmd_export->add_option("--image", image_arg, "PGM/PPM file or pattern name (checker, ramp, shapes)");
    cmd_export->add_option("--out", export_out, "output directory");
    cmd_export->add_option("--img-h", ex_h, "pattern height (default: config)");
    cmd_export->add_option("--img-w", ex_w, "pattern width (default: config)");
    cmd_export->add_option("--seed", ex_seed, "pattern seed");

    try {
        app.parse(argc, argv);

        if (cmd_shapes->parsed()) {
            RunConfig rc = cli::load_run_config(shapes_args);
            return rc.dtype == Dtype::f32 ? cli::run_shapes<float>(rc) : cli::run_shapes<double>(rc);
        }
        if (cmd_grad->parsed()) {
            RunConfig rc = cli::load_run_config(grad_args); // float64 regardless of dtype key
            return cli::run_gradcheck(rc, gc_eps, gc_tol, gc_max, gc_threads);
        }
        if (cmd_equiv->parsed()) {
            RunConfig rc = cli::load_run_config(equiv_args);
            return cli::run_equiv_init(rc, set_alpha, alpha_given);
        }
        if (cmd_oracle->parsed()) {
            RunConfig rc = cli::load_run_config(oracle_args);
            return cli::run_oracle(rc, trials);
        }
        if (cmd_params->parsed()) return cli::run_params(variant);
        if (cmd_train->parsed()) {
            RunConfig rc = cli::load_run_config(train_args);
            if (!rc.dtype_explicit) rc.dtype = Dtype::f32; // training defaults to single precision
            const int run_steps = steps >= 0 ? steps : rc.train_steps;
            const double run_lr = lr >= 0 ? lr : rc.train_lr;
            return rc.dtype == Dtype::f32 ? cli::run_train_toy<float>(rc, run_steps, run_lr, loss_threshold)
                                          : cli::run_train_toy<double>(rc, run_steps, run_lr, loss_threshold);
        }
        if (cmd_export->parsed()) {
            const Dtype dt = checkpoint_dtype(read_file_bytes(ckpt_path));
            return dt == Dtype::f32
                       ? cli::run_export_features<float>(ckpt_path, image_arg, export_out, ex_h, ex_w, ex_seed)
                       : cli::run_export_features<double>(ckpt_path, image_arg, export_out, ex_h, ex_w, ex_seed);
        }
        return 2;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "check failed: " << e.what() << "\n";
        return 1;
    }
}

} // namespace vitcomer
