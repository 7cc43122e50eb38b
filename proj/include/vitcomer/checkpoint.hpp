// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vitcomer/config.hpp"
#include "vitcomer/model.hpp"

namespace vitcomer {

// Checkpoint container:
//   magic "VCMR", u16 version (= 1), u32 config-text length + UTF-8 config
//   text, u32 tensor count; per tensor: u16 name length + UTF-8 name,
//   u8 dtype (0 = f32, 1 = f64), u8 rank, rank x u32 dims, payload.
// All integers little-endian.

namespace detail {

inline void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

template <typename T>
constexpr std::uint8_t dtype_tag() {
    return sizeof(T) == 4 ? 0 : 1;
}

template <typename T>
void put_scalar(std::string& buf, T v) {
    if constexpr (sizeof(T) == 4) {
        put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
        put_u64(buf, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
    }
}

template <typename T>
T get_scalar(ByteReader& r) {
    if constexpr (sizeof(T) == 4) {
        return std::bit_cast<float>(r.u32());
    } else {
        return std::bit_cast<double>(r.u64());
    }
}

} // namespace detail

template <typename T>
std::string serialize_checkpoint(Model<T>& model) {
    std::string buf;
    buf += "VCMR";
    detail::put_u16(buf, 1);
    const std::string cfg_text = serialize_model_config(model.cfg);
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg_text.size()));
    buf += cfg_text;

    std::uint32_t count = 0;
    model.for_each_param([&](const std::string&, Tensor<T>&) { ++count; });
    detail::put_u32(buf, count);
    model.for_each_param([&](const std::string& name, Tensor<T>& t) {
        detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
        buf += name;
        buf.push_back(static_cast<char>(detail::dtype_tag<T>()));
        buf.push_back(static_cast<char>(t.rank()));
        for (int d : t.dims) detail::put_u32(buf, static_cast<std::uint32_t>(d));
        for (const T& v : t.data) detail::put_scalar<T>(buf, v);
    });
    return buf;
}

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    const std::string buf = serialize_checkpoint(model);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

// Dtype of the first tensor record; drives the f32/f64 dispatch of loaders.
inline Dtype checkpoint_dtype(const std::string& bytes) {
    detail::ByteReader r{bytes};
    if (r.bytes(4) != "VCMR") throw IoError("bad checkpoint magic");
    if (r.u16() != 1) throw IoError("unsupported checkpoint version");
    const std::uint32_t cfg_len = r.u32();
    r.bytes(cfg_len);
    const std::uint32_t count = r.u32();
    if (count == 0) throw IoError("checkpoint holds no tensors");
    const std::uint16_t name_len = r.u16();
    r.bytes(name_len);
    const std::uint8_t tag = r.u8();
    if (tag > 1) throw IoError("unknown tensor dtype tag");
    return tag == 0 ? Dtype::f32 : Dtype::f64;
}

template <typename T>
Model<T> load_checkpoint_bytes(const std::string& bytes) {
    detail::ByteReader r{bytes};
    if (r.bytes(4) != "VCMR") throw IoError("bad checkpoint magic");
    const std::uint16_t version = r.u16();
    if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t cfg_len = r.u32();
    const CoMerConfig cfg = parse_model_config(r.bytes(cfg_len));

    Model<T> model = init_model<T>(cfg, 0);
    const std::uint32_t count = r.u32();
    std::uint32_t expected = 0;
    model.for_each_param([&](const std::string&, Tensor<T>&) { ++expected; });
    if (count != expected)
        throw IoError("checkpoint tensor count " + std::to_string(count) + " does not match config (" +
                      std::to_string(expected) + " expected)");

    // records arrive in the model's canonical order
    std::vector<std::pair<std::string, Tensor<T>*>> slots;
    model.for_each_param([&](const std::string& name, Tensor<T>& t) { slots.emplace_back(name, &t); });
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        const std::string name = r.bytes(name_len);
        if (name != slots[i].first)
            throw IoError("checkpoint tensor '" + name + "' out of order (expected '" + slots[i].first + "')");
        const std::uint8_t tag = r.u8();
        if (tag != detail::dtype_tag<T>()) throw IoError("tensor '" + name + "' has mismatched dtype");
        const std::uint8_t rank = r.u8();
        Dims dims;
        for (int d = 0; d < rank; ++d) dims.push_back(static_cast<int>(r.u32()));
        Tensor<T>* dst = slots[i].second;
        if (dims != dst->dims)
            throw IoError("tensor '" + name + "' shape " + dims_str(dims) + " does not match config " +
                          dims_str(dst->dims));
        for (auto& v : dst->data) v = detail::get_scalar<T>(r);
    }
    if (r.pos != bytes.size()) throw IoError("trailing bytes after checkpoint payload");
    return model;
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
    return load_checkpoint_bytes<T>(read_file_bytes(path));
}

} // namespace vitcomer
