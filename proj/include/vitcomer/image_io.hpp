// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vitcomer/tensor.hpp"
#include "vitcomer/toy_task.hpp"

namespace vitcomer {

// Binary PGM (P5), maxval 255. Header layout is pinned: "P5\n<w> <h>\n255\n".
inline void write_pgm(const std::string& path, int w, int h, const std::vector<std::uint8_t>& bytes) {
    if (static_cast<std::size_t>(w) * h != bytes.size()) throw IoError("write_pgm: byte count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

// Channel-mean of a [C x H x W] map, min-max normalized to 8 bits.
// Zero-range maps render mid-gray (128).
template <typename T>
std::vector<std::uint8_t> map_to_gray(const Tensor<T>& map) {
    if (map.rank() != 3) throw ShapeError("map_to_gray: input must be [C x H x W]");
    const int c = map.dims[0], h = map.dims[1], w = map.dims[2];
    std::vector<double> mean(static_cast<std::size_t>(h) * w, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i)
            mean[static_cast<std::size_t>(i)] += static_cast<double>(map[static_cast<std::int64_t>(ch) * h * w + i]) / c;
    double lo = mean[0], hi = mean[0];
    for (double v : mean) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<std::uint8_t> bytes(mean.size());
    if (hi - lo <= 0.0) {
        for (auto& b : bytes) b = 128;
        return bytes;
    }
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double t = (mean[i] - lo) / (hi - lo);
        bytes[i] = static_cast<std::uint8_t>(std::lround(t * 255.0));
    }
    return bytes;
}

namespace detail {

inline int pnm_token(std::istream& in) {
    // skips whitespace and '#' comments, reads one unsigned decimal
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string dummy;
            std::getline(in, dummy);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            in.get();
        } else {
            break;
        }
    }
    int v = 0;
    if (!(in >> v)) throw IoError("malformed PNM header");
    return v;
}

} // namespace detail

// Reads binary P5 (gray, replicated to 3 channels) or P6 (RGB), maxval 255.
// Returns [3 x H x W] values in [0, 1].
template <typename T>
Tensor<T> read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || (m1 != '5' && m1 != '6')) throw IoError("unsupported image format (want binary PGM/PPM): " + path);
    const bool rgb = m1 == '6';
    const int w = detail::pnm_token(in);
    const int h = detail::pnm_token(in);
    const int maxval = detail::pnm_token(in);
    if (maxval != 255) throw IoError("unsupported PNM maxval (want 255): " + path);
    in.get(); // single whitespace after maxval
    const std::size_t n = static_cast<std::size_t>(w) * h * (rgb ? 3 : 1);
    std::vector<char> raw(n);
    in.read(raw.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw IoError("truncated image data: " + path);

    Tensor<T> img = Tensor<T>::zeros({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const std::size_t src = rgb ? (static_cast<std::size_t>(y) * w + x) * 3 + c
                                            : static_cast<std::size_t>(y) * w + x;
                img[(static_cast<std::int64_t>(c) * h + y) * w + x] =
                    static_cast<T>(static_cast<std::uint8_t>(raw[src]) / 255.0);
            }
        }
    return img;
}

// Built-in procedural inputs: "checker", "ramp", and "shapes" (one toy-task
// image rendered from the seed).
template <typename T>
Tensor<T> make_pattern(const std::string& name, int h, int w, std::uint64_t seed) {
    if (name == "shapes") return make_toy_dataset<T>(seed, 1, h, w).samples[0].image;
    Tensor<T> img = Tensor<T>::zeros({3, h, w});
    if (name == "checker") {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = ((x / 8 + y / 8) % 2 == 0) ? 0.9 : 0.1;
                for (int c = 0; c < 3; ++c) img[(static_cast<std::int64_t>(c) * h + y) * w + x] = static_cast<T>(v);
            }
        return img;
    }
    if (name == "ramp") {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                img[(0 * static_cast<std::int64_t>(h) + y) * w + x] = static_cast<T>(x / std::max(1.0, w - 1.0));
                img[(1 * static_cast<std::int64_t>(h) + y) * w + x] = static_cast<T>(y / std::max(1.0, h - 1.0));
                img[(2 * static_cast<std::int64_t>(h) + y) * w + x] = static_cast<T>(0.5);
            }
        return img;
    }
    throw IoError("unknown pattern '" + name + "' (expected checker, ramp or shapes)");
}

} // namespace vitcomer
