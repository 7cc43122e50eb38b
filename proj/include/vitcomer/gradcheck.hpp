// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "vitcomer/tensor.hpp"
#include "vitcomer/toy_task.hpp"

namespace vitcomer {

// Relative error with a floor so that two near-zero values agree.
inline double rel_err(double a, double b, double floor = 1e-8) {
    const double denom = std::max(std::abs(a), std::abs(b));
    if (denom < floor) return 0.0;
    return std::abs(a - b) / denom;
}

// Central finite differences of a scalar-valued function w.r.t. one tensor.
// `f` must re-read `x` on every call; `x` is restored afterwards.
template <typename T>
std::vector<double> finite_diff(Tensor<T>& x, const std::function<double()>& f, double eps = 1e-4) {
    std::vector<double> g(static_cast<std::size_t>(x.numel()));
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const T saved = x[i];
        x[i] = saved + static_cast<T>(eps);
        const double up = f();
        x[i] = saved - static_cast<T>(eps);
        const double dn = f();
        x[i] = saved;
        g[static_cast<std::size_t>(i)] = (up - dn) / (2.0 * eps);
    }
    return g;
}

// Max elementwise relative error between an analytic gradient and central
// differences. The workhorse of the op-level gradient tests.
template <typename T>
double max_grad_rel_err(Tensor<T>& x, const Tensor<T>& analytic_grad, const std::function<double()>& f,
                        double eps = 1e-4) {
    const auto fd = finite_diff(x, f, eps);
    double worst = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i)
        worst = std::max(worst, rel_err(static_cast<double>(analytic_grad[i]), fd[static_cast<std::size_t>(i)]));
    return worst;
}

struct GroupResult {
    std::string name;
    double max_rel_err = 0.0;
    std::int64_t checked = 0;
};

struct GradcheckOptions {
    double eps = 1e-4;
    double jitter = 0.05;    // uniform noise added to every parameter, gates included
    int max_per_group = -1;  // < 0 checks every entry; otherwise a strided sample
    int threads = 0;         // 0 = hardware concurrency
    // relative-error denominator floor: entries whose gradients sit below this
    // scale are compared absolutely (central differences of a ~O(1) loss carry
    // ~1e-9 of rounding noise, which would read as O(1) relative error on a
    // 1e-8 gradient)
    double floor = 1e-4;
};

namespace detail {

// Scalar verification loss: segmentation cross-entropy plus a fixed random
// projection of the output pyramid (and quarter level when present), so every
// parameter group influences the value through a generic direction.
template <typename T>
double verification_loss(const Model<T>& m, const Tensor<T>& image, const std::vector<int>& labels,
                         const std::vector<Tensor<T>>& projections) {
    ForwardResult<T> fwd = forward(m, image);
    Tensor<T> loss = cross_entropy_mean(seg_logits(m, fwd, image.dims[1], image.dims[2]), labels);
    for (int l = 0; l < kLevels; ++l)
        loss = add(loss, reduce_sum(mul(fwd.out[static_cast<std::size_t>(l)], projections[static_cast<std::size_t>(l)])));
    if (fwd.quarter) loss = add(loss, reduce_sum(mul(*fwd.quarter, projections[kLevels])));
    return static_cast<double>(loss.item());
}

template <typename T>
Tensor<T> taped_verification_loss(const Model<T>& m, const Tensor<T>& image, const std::vector<int>& labels,
                                  const std::vector<Tensor<T>>& projections) {
    ForwardResult<T> fwd = forward(m, image);
    Tensor<T> loss = cross_entropy_mean(seg_logits(m, fwd, image.dims[1], image.dims[2]), labels);
    for (int l = 0; l < kLevels; ++l)
        loss = add(loss, reduce_sum(mul(fwd.out[static_cast<std::size_t>(l)], projections[static_cast<std::size_t>(l)])));
    if (fwd.quarter) loss = add(loss, reduce_sum(mul(*fwd.quarter, projections[kLevels])));
    return loss;
}

} // namespace detail

// Central-difference check of every parameter group of a freshly built model.
// Parameters are jittered around the initialization so that zero-initialized
// gates and projections see generic gradients. FD evaluations run on frozen
// model clones, one per worker thread.
inline std::vector<GroupResult> gradcheck_model(const CoMerConfig& cfg, std::uint64_t seed,
                                                const GradcheckOptions& opt = {}) {
    Model<double> model = init_model<double>(cfg, seed);
    Rng jitter_rng(seed ^ 0x9e3779b97f4a7c15ull);
    model.for_each_param([&](const std::string& name, Tensor<double>& t) {
        // Sampling coordinates are piecewise-linear in the offset path, with
        // derivative breaks at integer pixel coordinates. Reference points sit
        // on multiples of 1/8 of a pixel, so bias the sampling offsets into a
        // band away from those breakpoints and keep the coordinate-feeding
        // weight jitter small; otherwise central differences straddle a kink.
        if (name.find("attn.offset.bias") != std::string::npos) {
            for (auto& v : t.data) {
                const double sign = jitter_rng.below(2) == 0 ? -1.0 : 1.0;
                v += sign * jitter_rng.uniform(0.4 * opt.jitter, opt.jitter);
            }
        } else if (name.find("attn.offset.weight") != std::string::npos ||
                   name.find("attn.query") != std::string::npos) {
            for (auto& v : t.data) v += jitter_rng.uniform(-0.2 * opt.jitter, 0.2 * opt.jitter);
        } else {
            for (auto& v : t.data) v += jitter_rng.uniform(-opt.jitter, opt.jitter);
        }
    });

    Rng data_rng(seed ^ 0xd1b54a32d192ed03ull);
    Tensor<double> image = Tensor<double>::zeros({3, cfg.vit.img_h, cfg.vit.img_w});
    data_rng.fill_uniform(image.data, 0, 1);
    std::vector<int> labels(static_cast<std::size_t>(cfg.vit.img_h) * cfg.vit.img_w);
    for (auto& l : labels) l = static_cast<int>(data_rng.below(static_cast<std::uint64_t>(cfg.toy_classes)));
    std::vector<Tensor<double>> projections;
    const auto shapes = pyramid_shapes(cfg.vit.img_h, cfg.vit.img_w);
    for (int l = 0; l < kLevels; ++l) {
        Tensor<double> r = Tensor<double>::zeros({cfg.vit.dim, shapes[static_cast<std::size_t>(l)].h,
                                                  shapes[static_cast<std::size_t>(l)].w});
        data_rng.fill_uniform(r.data, -1, 1);
        projections.push_back(std::move(r));
    }
    {
        Tensor<double> rq = Tensor<double>::zeros({cfg.vit.dim, cfg.vit.img_h / 4, cfg.vit.img_w / 4});
        data_rng.fill_uniform(rq.data, -1, 1);
        projections.push_back(std::move(rq));
    }

    // analytic gradients
    Tape<double> tape;
    model.attach(tape);
    tape.backward(detail::taped_verification_loss(model, image, labels, projections));
    std::vector<std::string> names;
    std::vector<std::vector<double>> analytic;
    std::vector<std::vector<std::int64_t>> picked; // entry indices checked per group
    model.for_each_param([&](const std::string& name, Tensor<double>& t) {
        names.push_back(name);
        analytic.push_back(tape.grad_of(t).data);
        std::vector<std::int64_t> idx;
        const std::int64_t n = t.numel();
        if (opt.max_per_group < 0 || n <= opt.max_per_group) {
            idx.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        } else {
            // deterministic strided sample across the tensor
            for (int i = 0; i < opt.max_per_group; ++i)
                idx.push_back(static_cast<std::int64_t>((static_cast<double>(i) + 0.5) / opt.max_per_group * n));
        }
        picked.push_back(std::move(idx));
    });
    model.detach();

    // flatten work items
    struct Item {
        int group;
        std::int64_t entry;
    };
    std::vector<Item> items;
    for (std::size_t g = 0; g < picked.size(); ++g)
        for (std::int64_t e : picked[g]) items.push_back({static_cast<int>(g), e});
    std::vector<double> fd(items.size(), 0.0);

    int nthreads = opt.threads > 0 ? opt.threads : static_cast<int>(std::thread::hardware_concurrency());
    if (nthreads < 1) nthreads = 1;
    std::atomic<std::size_t> cursor{0};
    std::mutex error_mu;
    std::string error_msg;
    auto worker = [&] {
        try {
            Model<double> local = model; // frozen clone, perturbed in place
            std::vector<Tensor<double>*> params;
            local.for_each_param([&](const std::string&, Tensor<double>& t) { params.push_back(&t); });
            for (;;) {
                const std::size_t i = cursor.fetch_add(1);
                if (i >= items.size()) break;
                Tensor<double>& t = *params[static_cast<std::size_t>(items[i].group)];
                const std::int64_t e = items[i].entry;
                const double saved = t[e];
                t[e] = saved + opt.eps;
                const double up = detail::verification_loss(local, image, labels, projections);
                t[e] = saved - opt.eps;
                const double dn = detail::verification_loss(local, image, labels, projections);
                t[e] = saved;
                fd[i] = (up - dn) / (2.0 * opt.eps);
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (error_msg.empty()) error_msg = e.what();
            cursor.store(items.size());
        }
    };
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (!error_msg.empty()) throw NumericError("gradcheck aborted: " + error_msg);

    std::vector<GroupResult> results(names.size());
    for (std::size_t g = 0; g < names.size(); ++g) results[g].name = names[g];
    for (std::size_t i = 0; i < items.size(); ++i) {
        GroupResult& r = results[static_cast<std::size_t>(items[i].group)];
        const double ad = analytic[static_cast<std::size_t>(items[i].group)][static_cast<std::size_t>(items[i].entry)];
        r.max_rel_err = std::max(r.max_rel_err, rel_err(ad, fd[i], opt.floor));
        ++r.checked;
    }
    return results;
}

} // namespace vitcomer
