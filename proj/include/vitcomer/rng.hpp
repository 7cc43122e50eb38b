// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace vitcomer {

// Deterministic random source. mt19937_64 has a fixed algorithm, and the
// distributions below are hand-rolled so that a given seed produces the same
// stream on every platform (std::normal_distribution is not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of randomness.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // modulo bias is irrelevant for the small n used here
        return gen_() % n;
    }

    // Box-Muller. Two draws per call, no cached spare.
    double normal() {
        double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Normal(0, std) truncated to [-2 std, 2 std] by rejection.
    double trunc_normal(double stddev) {
        for (;;) {
            double v = normal();
            if (v >= -2.0 && v <= 2.0) return v * stddev;
        }
    }

    template <typename T>
    void fill_uniform(std::vector<T>& v, double lo, double hi) {
        for (auto& x : v) x = static_cast<T>(uniform(lo, hi));
    }

    template <typename T>
    void fill_normal(std::vector<T>& v, double stddev) {
        for (auto& x : v) x = static_cast<T>(normal() * stddev);
    }

    template <typename T>
    void fill_trunc_normal(std::vector<T>& v, double stddev) {
        for (auto& x : v) x = static_cast<T>(trunc_normal(stddev));
    }

private:
    std::mt19937_64 gen_;
};

} // namespace vitcomer
