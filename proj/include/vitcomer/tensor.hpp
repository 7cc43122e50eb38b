// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vitcomer/errors.hpp"

namespace vitcomer {

using Dims = std::vector<int>;

inline std::int64_t numel_of(const Dims& d) {
    std::int64_t n = 1;
    for (int x : d) n *= x;
    return n;
}

inline std::string dims_str(const Dims& d) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "x" : "") << d[i];
    os << ']';
    return os.str();
}

// Global switch for output validation. Verification commands and tests turn it
// on; the training loop leaves it off and only checks the loss.
inline bool& finite_checks() {
    static bool enabled = false;
    return enabled;
}

template <typename T>
class Tape;

// Dense row-major tensor. `tape`/`node` tie the value into a recording tape;
// a null tape means a frozen value that participates in no gradient flow.
template <typename T>
struct Tensor {
    Dims dims;
    std::vector<T> data;
    Tape<T>* tape = nullptr;
    int node = -1;

    Tensor() = default;
    Tensor(Dims d, std::vector<T> v) : dims(std::move(d)), data(std::move(v)) {
        if (numel_of(dims) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor data size does not match dims " + dims_str(dims));
        for (int x : dims)
            if (x <= 0) throw ShapeError("tensor dims must be positive, got " + dims_str(dims));
    }

    static Tensor zeros(Dims d) {
        auto n = numel_of(d);
        return Tensor(std::move(d), std::vector<T>(static_cast<std::size_t>(n), T(0)));
    }
    static Tensor full(Dims d, T v) {
        auto n = numel_of(d);
        return Tensor(std::move(d), std::vector<T>(static_cast<std::size_t>(n), v));
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(dims.size()); }
    bool on_tape() const { return tape != nullptr && node >= 0; }

    // Copy of the value with no tape membership.
    Tensor detached() const {
        Tensor t;
        t.dims = dims;
        t.data = data;
        return t;
    }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() requires a one-element tensor, got " + dims_str(dims));
        return data[0];
    }
};

// Reverse-mode tape. Nodes are appended in execution order, so parents always
// precede children; backward() walks the list once in reverse.
template <typename T>
class Tape {
public:
    using BackFn = std::function<void(Tape&, const std::vector<T>&)>;

    int record(Dims dims, BackFn back) {
        nodes_.push_back(Node{std::move(dims), std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Register an existing tensor as a leaf (typically a parameter).
    void watch(Tensor<T>& t) {
        if (t.on_tape()) {
            if (t.tape != this) throw ShapeError("tensor already belongs to a different tape");
            return;
        }
        t.tape = this;
        t.node = record(t.dims, nullptr);
    }

    // Propagates d(loss)/d(node) to every ancestor. Per-call flow buffers are
    // summed into persistent gradients, so repeated calls accumulate.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) throw ShapeError("backward() requires a scalar loss, got " + dims_str(loss.dims));
        if (!loss.on_tape() || loss.tape != this) throw ShapeError("loss tensor is not on this tape");
        flow_.assign(nodes_.size(), {});
        flow_[static_cast<std::size_t>(loss.node)].assign(1, T(1));
        for (int i = loss.node; i >= 0; --i) {
            auto& f = flow_[static_cast<std::size_t>(i)];
            if (f.empty()) continue;
            if (nodes_[static_cast<std::size_t>(i)].back) nodes_[static_cast<std::size_t>(i)].back(*this, f);
        }
        if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (flow_[i].empty()) continue;
            auto& g = grads_[i];
            if (g.empty()) {
                g = std::move(flow_[i]);
            } else {
                for (std::size_t k = 0; k < g.size(); ++k) g[k] += flow_[i][k];
            }
        }
        flow_.clear();
    }

    // Called by backward rules to push a contribution to a parent node.
    void accumulate(int node, const T* g, std::int64_t n) {
        if (node < 0 || node >= static_cast<int>(nodes_.size()))
            throw ShapeError("gradient accumulation for a node not on this tape");
        auto& f = flow_[static_cast<std::size_t>(node)];
        if (f.empty()) f.assign(static_cast<std::size_t>(n), T(0));
        for (std::int64_t k = 0; k < n; ++k) f[static_cast<std::size_t>(k)] += g[k];
    }
    void accumulate(int node, const std::vector<T>& g) {
        accumulate(node, g.data(), static_cast<std::int64_t>(g.size()));
    }

    bool has_grad(const Tensor<T>& t) const {
        return t.on_tape() && static_cast<std::size_t>(t.node) < grads_.size() &&
               !grads_[static_cast<std::size_t>(t.node)].empty();
    }

    // Gradient with the same dims as `t`; zeros when nothing reached it.
    Tensor<T> grad_of(const Tensor<T>& t) const {
        if (!t.on_tape() || t.tape != this) throw ShapeError("grad_of: tensor is not on this tape");
        Tensor<T> g = Tensor<T>::zeros(t.dims);
        if (has_grad(t)) g.data = grads_[static_cast<std::size_t>(t.node)];
        return g;
    }

    void clear_grads() { grads_.clear(); }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Dims dims;
        BackFn back;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
    std::vector<std::vector<T>> flow_;
};

namespace detail {

template <typename T>
Tape<T>* joint_tape(const Tensor<T>& a) {
    return a.tape;
}

template <typename T>
Tape<T>* joint_tape(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.tape && b.tape && a.tape != b.tape)
        throw ShapeError("operands belong to different tapes");
    return a.tape ? a.tape : b.tape;
}

template <typename T>
Tape<T>* joint_tape(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
    Tape<T>* t = joint_tape(a, b);
    if (t && c.tape && t != c.tape) throw ShapeError("operands belong to different tapes");
    return t ? t : c.tape;
}

template <typename T>
void check_finite(const char* op, const Tensor<T>& t) {
    if (!finite_checks()) return;
    for (const T& x : t.data)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
}

// GELU, tanh approximation.
template <typename T>
T gelu_fwd(T x) {
    const T c = T(0.7978845608028653558798921198687); // sqrt(2/pi)
    T x3 = x * x * x;
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x3)));
}

template <typename T>
T gelu_grad(T x) {
    const T c = T(0.7978845608028653558798921198687);
    T x2 = x * x;
    T u = c * (x + T(0.044715) * x2 * x);
    T t = std::tanh(u);
    T du = c * (T(1) + T(3) * T(0.044715) * x2);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops. Broadcasting is exact-shape or one-element-scalar only.
// ---------------------------------------------------------------------------

enum class EwKind { Add, Sub, Mul };

template <typename T>
Tensor<T> elementwise(EwKind kind, const Tensor<T>& a, const Tensor<T>& b) {
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!(a.dims == b.dims || a_scalar || b_scalar))
        throw ShapeError("elementwise: incompatible dims " + dims_str(a.dims) + " vs " + dims_str(b.dims));

    const Tensor<T>& big = (b_scalar || a.dims == b.dims) ? a : b;
    Tensor<T> out = Tensor<T>::zeros(big.dims);
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        T av = a_scalar ? a.data[0] : a.data[static_cast<std::size_t>(i)];
        T bv = b_scalar ? b.data[0] : b.data[static_cast<std::size_t>(i)];
        switch (kind) {
            case EwKind::Add: out[i] = av + bv; break;
            case EwKind::Sub: out[i] = av - bv; break;
            case EwKind::Mul: out[i] = av * bv; break;
        }
    }

    Tape<T>* tp = detail::joint_tape(a, b);
    if (tp) {
        const int pa = a.node, pb = b.node;
        auto adata = a.data, bdata = b.data;
        out.tape = tp;
        out.node = tp->record(out.dims, [kind, pa, pb, a_scalar, b_scalar, adata, bdata, n](Tape<T>& t,
                                                                                           const std::vector<T>& g) {
            if (pa >= 0) {
                if (a_scalar && n > 1) {
                    T s = 0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        T bv = b_scalar ? bdata[0] : bdata[static_cast<std::size_t>(i)];
                        s += kind == EwKind::Mul ? g[static_cast<std::size_t>(i)] * bv : g[static_cast<std::size_t>(i)];
                    }
                    t.accumulate(pa, &s, 1);
                } else {
                    std::vector<T> ga(static_cast<std::size_t>(n));
                    for (std::int64_t i = 0; i < n; ++i) {
                        T bv = b_scalar ? bdata[0] : bdata[static_cast<std::size_t>(i)];
                        ga[static_cast<std::size_t>(i)] =
                            kind == EwKind::Mul ? g[static_cast<std::size_t>(i)] * bv : g[static_cast<std::size_t>(i)];
                    }
                    t.accumulate(pa, ga);
                }
            }
            if (pb >= 0) {
                const T sign = kind == EwKind::Sub ? T(-1) : T(1);
                if (b_scalar && n > 1) {
                    T s = 0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        T av = a_scalar ? adata[0] : adata[static_cast<std::size_t>(i)];
                        s += kind == EwKind::Mul ? g[static_cast<std::size_t>(i)] * av
                                                 : sign * g[static_cast<std::size_t>(i)];
                    }
                    t.accumulate(pb, &s, 1);
                } else {
                    std::vector<T> gb(static_cast<std::size_t>(n));
                    for (std::int64_t i = 0; i < n; ++i) {
                        T av = a_scalar ? adata[0] : adata[static_cast<std::size_t>(i)];
                        gb[static_cast<std::size_t>(i)] = kind == EwKind::Mul
                                                              ? g[static_cast<std::size_t>(i)] * av
                                                              : sign * g[static_cast<std::size_t>(i)];
                    }
                    t.accumulate(pb, gb);
                }
            }
        });
    }
    detail::check_finite(kind == EwKind::Add ? "add" : kind == EwKind::Sub ? "sub" : "mul", out);
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(EwKind::Add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(EwKind::Sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(EwKind::Mul, a, b);
}

// x * c for a plain (non-learnable) scalar.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
    Tensor<T> out = Tensor<T>::zeros(x.dims);
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] * static_cast<T>(c);
    if (x.tape) {
        const int px = x.node;
        out.tape = x.tape;
        out.node = x.tape->record(out.dims, [px, c, n](Tape<T>& t, const std::vector<T>& g) {
            if (px < 0) return;
            std::vector<T> gx(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] = g[static_cast<std::size_t>(i)] * static_cast<T>(c);
            t.accumulate(px, gx);
        });
    }
    detail::check_finite("scale", out);
    return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.dims);
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = detail::gelu_fwd(x[i]);
    if (x.tape) {
        const int px = x.node;
        auto xdata = x.data;
        out.tape = x.tape;
        out.node = x.tape->record(out.dims, [px, xdata, n](Tape<T>& t, const std::vector<T>& g) {
            if (px < 0) return;
            std::vector<T> gx(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i)
                gx[static_cast<std::size_t>(i)] = g[static_cast<std::size_t>(i)] * detail::gelu_grad(xdata[static_cast<std::size_t>(i)]);
            t.accumulate(px, gx);
        });
    }
    detail::check_finite("gelu", out);
    return out;
}

// ---------------------------------------------------------------------------
// matmul / linear / row_scale
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul requires rank-2 tensors");
    const int m = a.dims[0], k = a.dims[1], k2 = b.dims[0], n = b.dims[1];
    if (k != k2)
        throw ShapeError("matmul inner dims mismatch " + dims_str(a.dims) + " x " + dims_str(b.dims));
    Tensor<T> out = Tensor<T>::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        const T* arow = a.data.data() + static_cast<std::size_t>(i) * k;
        T* orow = out.data.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = b.data.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Tape<T>* tp = detail::joint_tape(a, b);
    if (tp) {
        const int pa = a.node, pb = b.node;
        auto adata = a.data, bdata = b.data;
        out.tape = tp;
        out.node = tp->record(out.dims, [pa, pb, adata, bdata, m, k, n](Tape<T>& t, const std::vector<T>& g) {
            if (pa >= 0) {
                std::vector<T> ga(static_cast<std::size_t>(m) * k, T(0));
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        T s = 0;
                        const T* grow = g.data() + static_cast<std::size_t>(i) * n;
                        const T* brow = bdata.data() + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                        ga[static_cast<std::size_t>(i) * k + kk] = s;
                    }
                t.accumulate(pa, ga);
            }
            if (pb >= 0) {
                std::vector<T> gb(static_cast<std::size_t>(k) * n, T(0));
                for (int i = 0; i < m; ++i) {
                    const T* arow = adata.data() + static_cast<std::size_t>(i) * k;
                    const T* grow = g.data() + static_cast<std::size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const T av = arow[kk];
                        if (av == T(0)) continue;
                        T* gbrow = gb.data() + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
                t.accumulate(pb, gb);
            }
        });
    }
    detail::check_finite("matmul", out);
    return out;
}

// y = x W^T + b with W stored [out x in]. The FC building block.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) throw ShapeError("linear: bad ranks");
    const int m = x.dims[0], in = x.dims[1], outd = w.dims[0];
    if (w.dims[1] != in || b.dims[0] != outd)
        throw ShapeError("linear: dims mismatch x" + dims_str(x.dims) + " w" + dims_str(w.dims));
    Tensor<T> out = Tensor<T>::zeros({m, outd});
    for (int i = 0; i < m; ++i) {
        const T* xrow = x.data.data() + static_cast<std::size_t>(i) * in;
        T* orow = out.data.data() + static_cast<std::size_t>(i) * outd;
        for (int o = 0; o < outd; ++o) {
            const T* wrow = w.data.data() + static_cast<std::size_t>(o) * in;
            T s = b.data[static_cast<std::size_t>(o)];
            for (int kk = 0; kk < in; ++kk) s += xrow[kk] * wrow[kk];
            orow[o] = s;
        }
    }
    Tape<T>* tp = detail::joint_tape(x, w, b);
    if (tp) {
        const int px = x.node, pw = w.node, pbias = b.node;
        auto xdata = x.data, wdata = w.data;
        out.tape = tp;
        out.node = tp->record(out.dims, [px, pw, pbias, xdata, wdata, m, in, outd](Tape<T>& t,
                                                                                   const std::vector<T>& g) {
            if (px >= 0) {
                std::vector<T> gx(static_cast<std::size_t>(m) * in, T(0));
                for (int i = 0; i < m; ++i) {
                    const T* grow = g.data() + static_cast<std::size_t>(i) * outd;
                    T* gxrow = gx.data() + static_cast<std::size_t>(i) * in;
                    for (int o = 0; o < outd; ++o) {
                        const T gv = grow[o];
                        if (gv == T(0)) continue;
                        const T* wrow = wdata.data() + static_cast<std::size_t>(o) * in;
                        for (int kk = 0; kk < in; ++kk) gxrow[kk] += gv * wrow[kk];
                    }
                }
                t.accumulate(px, gx);
            }
            if (pw >= 0) {
                std::vector<T> gw(static_cast<std::size_t>(outd) * in, T(0));
                for (int i = 0; i < m; ++i) {
                    const T* grow = g.data() + static_cast<std::size_t>(i) * outd;
                    const T* xrow = xdata.data() + static_cast<std::size_t>(i) * in;
                    for (int o = 0; o < outd; ++o) {
                        const T gv = grow[o];
                        if (gv == T(0)) continue;
                        T* gwrow = gw.data() + static_cast<std::size_t>(o) * in;
                        for (int kk = 0; kk < in; ++kk) gwrow[kk] += gv * xrow[kk];
                    }
                }
                t.accumulate(pw, gw);
            }
            if (pbias >= 0) {
                std::vector<T> gb(static_cast<std::size_t>(outd), T(0));
                for (int i = 0; i < m; ++i)
                    for (int o = 0; o < outd; ++o) gb[static_cast<std::size_t>(o)] += g[static_cast<std::size_t>(i) * outd + o];
                t.accumulate(pbias, gb);
            }
        });
    }
    detail::check_finite("linear", out);
    return out;
}

// out[i, j] = x[i, j] * s[i]; s has dims [m] or [m, 1].
template <typename T>
Tensor<T> row_scale(const Tensor<T>& x, const Tensor<T>& s) {
    if (x.rank() != 2) throw ShapeError("row_scale: x must be rank-2");
    const int m = x.dims[0], n = x.dims[1];
    if (s.numel() != m) throw ShapeError("row_scale: scale length must equal row count");
    Tensor<T> out = Tensor<T>::zeros(x.dims);
    for (int i = 0; i < m; ++i) {
        const T sv = s.data[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] = x[static_cast<std::size_t>(i) * n + j] * sv;
    }
    Tape<T>* tp = detail::joint_tape(x, s);
    if (tp) {
        const int px = x.node, ps = s.node;
        auto xdata = x.data, sdata = s.data;
        out.tape = tp;
        out.node = tp->record(out.dims, [px, ps, xdata, sdata, m, n](Tape<T>& t, const std::vector<T>& g) {
            if (px >= 0) {
                std::vector<T> gx(static_cast<std::size_t>(m) * n);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        gx[static_cast<std::size_t>(i) * n + j] =
                            g[static_cast<std::size_t>(i) * n + j] * sdata[static_cast<std::size_t>(i)];
                t.accumulate(px, gx);
            }
            if (ps >= 0) {
                std::vector<T> gs(static_cast<std::size_t>(m), T(0));
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        gs[static_cast<std::size_t>(i)] +=
                            g[static_cast<std::size_t>(i) * n + j] * xdata[static_cast<std::size_t>(i) * n + j];
                t.accumulate(ps, gs);
            }
        });
    }
    detail::check_finite("row_scale", out);
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops: reshape, transpose2d, concat, split, slice.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Dims dims) {
    if (numel_of(dims) != x.numel())
        throw ShapeError("reshape: element count mismatch " + dims_str(x.dims) + " -> " + dims_str(dims));
    Tensor<T> out(dims, x.data);
    if (x.tape) {
        const int px = x.node;
        out.tape = x.tape;
        out.node = x.tape->record(out.dims, [px](Tape<T>& t, const std::vector<T>& g) {
            if (px >= 0) t.accumulate(px, g);
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose2d requires a rank-2 tensor");
    const int m = x.dims[0], n = x.dims[1];
    Tensor<T> out = Tensor<T>::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = x[static_cast<std::size_t>(i) * n + j];
    if (x.tape) {
        const int px = x.node;
        out.tape = x.tape;
        out.node = x.tape->record(out.dims, [px, m, n](Tape<T>& t, const std::vector<T>& g) {
            if (px < 0) return;
            std::vector<T> gx(static_cast<std::size_t>(m) * n);
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i)
                    gx[static_cast<std::size_t>(i) * n + j] = g[static_cast<std::size_t>(j) * m + i];
            t.accumulate(px, gx);
        });
    }
    return out;
}

namespace detail {
// Splits dims around `axis` into (outer, axis, inner) extents.
inline void axis_extents(const Dims& d, int axis, std::int64_t& outer, std::int64_t& ax, std::int64_t& inner) {
    if (axis < 0 || axis >= static_cast<int>(d.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + dims_str(d));
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= d[static_cast<std::size_t>(i)];
    ax = d[static_cast<std::size_t>(axis)];
    for (int i = axis + 1; i < static_cast<int>(d.size()); ++i) inner *= d[static_cast<std::size_t>(i)];
}
} // namespace detail

template <typename T>
Tensor<T> concat(int axis, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat of zero parts");
    Dims out_dims = parts[0].dims;
    if (axis < 0 || axis >= static_cast<int>(out_dims.size()))
        throw ShapeError("concat: axis out of range");
    int total = 0;
    for (const auto& p : parts) {
        if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < p.rank(); ++i)
            if (i != axis && p.dims[static_cast<std::size_t>(i)] != out_dims[static_cast<std::size_t>(i)])
                throw ShapeError("concat: off-axis dims mismatch");
        total += p.dims[static_cast<std::size_t>(axis)];
    }
    out_dims[static_cast<std::size_t>(axis)] = total;
    Tensor<T> out = Tensor<T>::zeros(out_dims);

    std::int64_t outer, ax, inner;
    detail::axis_extents(out_dims, axis, outer, ax, inner);
    std::vector<int> axis_sizes;
    std::vector<int> offsets;
    {
        int off = 0;
        for (const auto& p : parts) {
            axis_sizes.push_back(p.dims[static_cast<std::size_t>(axis)]);
            offsets.push_back(off);
            off += axis_sizes.back();
        }
    }
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& p = parts[pi];
        const std::int64_t pax = axis_sizes[pi];
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t a = 0; a < pax; ++a) {
                const T* src = p.data.data() + (o * pax + a) * inner;
                T* dst = out.data.data() + (o * ax + offsets[pi] + a) * inner;
                for (std::int64_t i = 0; i < inner; ++i) dst[i] = src[i];
            }
    }

    Tape<T>* tp = nullptr;
    for (const auto& p : parts) {
        if (p.tape) {
            if (tp && tp != p.tape) throw ShapeError("concat: operands belong to different tapes");
            tp = p.tape;
        }
    }
    if (tp) {
        std::vector<int> pnodes;
        for (const auto& p : parts) pnodes.push_back(p.tape ? p.node : -1);
        out.tape = tp;
        out.node = tp->record(out.dims, [pnodes, axis_sizes, offsets, outer, ax, inner](Tape<T>& t,
                                                                                        const std::vector<T>& g) {
            for (std::size_t pi = 0; pi < pnodes.size(); ++pi) {
                if (pnodes[pi] < 0) continue;
                const std::int64_t pax = axis_sizes[pi];
                std::vector<T> gp(static_cast<std::size_t>(outer * pax * inner));
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t a = 0; a < pax; ++a) {
                        const T* src = g.data() + (o * ax + offsets[pi] + a) * inner;
                        T* dst = gp.data() + (o * pax + a) * inner;
                        for (std::int64_t i = 0; i < inner; ++i) dst[i] = src[i];
                    }
                t.accumulate(pnodes[pi], gp);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
    std::int64_t outer, ax, inner;
    detail::axis_extents(x.dims, axis, outer, ax, inner);
    if (start < 0 || len <= 0 || start + len > ax)
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of bounds for axis size " + std::to_string(ax));
    Dims out_dims = x.dims;
    out_dims[static_cast<std::size_t>(axis)] = len;
    Tensor<T> out = Tensor<T>::zeros(out_dims);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t a = 0; a < len; ++a) {
            const T* src = x.data.data() + (o * ax + start + a) * inner;
            T* dst = out.data.data() + (o * len + a) * inner;
            for (std::int64_t i = 0; i < inner; ++i) dst[i] = src[i];
        }
    if (x.tape) {
        const int px = x.node;
        const std::int64_t xsize = x.numel();
        out.tape = x.tape;
        out.node = x.tape->record(out.dims, [px, outer, ax, inner, start, len, xsize](Tape<T>& t,
                                                                                      const std::vector<T>& g) {
            if (px < 0) return;
            std::vector<T> gx(static_cast<std::size_t>(xsize), T(0));
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t a = 0; a < len; ++a) {
                    const T* src = g.data() + (o * len + a) * inner;
                    T* dst = gx.data() + (o * ax + start + a) * inner;
                    for (std::int64_t i = 0; i < inner; ++i) dst[i] = src[i];
                }
            t.accumulate(px, gx);
        });
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, const std::vector<int>& sizes) {
    std::int64_t outer, ax, inner;
    detail::axis_extents(x.dims, axis, outer, ax, inner);
    std::int64_t sum = 0;
    for (int s : sizes) sum += s;
    if (sum != ax) throw ShapeError("split: sizes must sum to the axis extent");
    std::vector<Tensor<T>> parts;
    int off = 0;
    for (int s : sizes) {
        parts.push_back(slice(x, axis, off, s));
        off += s;
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x) {
    T s = 0;
    for (const T& v : x.data) s += v;
    Tensor<T> out = Tensor<T>::scalar(s);
    if (x.tape) {
        const int px = x.node;
        const std::int64_t n = x.numel();
        out.tape = x.tape;
        out.node = x.tape->record(out.dims, [px, n](Tape<T>& t, const std::vector<T>& g) {
            if (px < 0) return;
            std::vector<T> gx(static_cast<std::size_t>(n), g[0]);
            t.accumulate(px, gx);
        });
    }
    detail::check_finite("reduce_sum", out);
    return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x) {
    return scale(reduce_sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, int axis) {
    std::int64_t outer, ax, inner;
    detail::axis_extents(x.dims, axis, outer, ax, inner);
    Dims out_dims;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) out_dims.push_back(x.dims[static_cast<std::size_t>(i)]);
    if (out_dims.empty()) out_dims = {1};
    Tensor<T> out = Tensor<T>::zeros(out_dims);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t a = 0; a < ax; ++a)
            for (std::int64_t i = 0; i < inner; ++i)
                out[o * inner + i] += x[(o * ax + a) * inner + i];
    if (x.tape) {
        const int px = x.node;
        out.tape = x.tape;
        out.node = x.tape->record(out.dims, [px, outer, ax, inner](Tape<T>& t, const std::vector<T>& g) {
            if (px < 0) return;
            std::vector<T> gx(static_cast<std::size_t>(outer * ax * inner));
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t a = 0; a < ax; ++a)
                    for (std::int64_t i = 0; i < inner; ++i)
                        gx[static_cast<std::size_t>((o * ax + a) * inner + i)] = g[static_cast<std::size_t>(o * inner + i)];
            t.accumulate(px, gx);
        });
    }
    detail::check_finite("reduce_sum", out);
    return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, int axis) {
    std::int64_t outer, ax, inner;
    detail::axis_extents(x.dims, axis, outer, ax, inner);
    return scale(reduce_sum(x, axis), 1.0 / static_cast<double>(ax));
}

// ---------------------------------------------------------------------------
// softmax along an axis, max-subtracted.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    std::int64_t outer, ax, inner;
    detail::axis_extents(x.dims, axis, outer, ax, inner);
    Tensor<T> out = Tensor<T>::zeros(x.dims);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            T mx = x[(o * ax) * inner + i];
            for (std::int64_t a = 1; a < ax; ++a) mx = std::max(mx, x[(o * ax + a) * inner + i]);
            T denom = 0;
            for (std::int64_t a = 0; a < ax; ++a) {
                T e = std::exp(x[(o * ax + a) * inner + i] - mx);
                out[(o * ax + a) * inner + i] = e;
                denom += e;
            }
            for (std::int64_t a = 0; a < ax; ++a) out[(o * ax + a) * inner + i] /= denom;
        }
    if (x.tape) {
        const int px = x.node;
        auto ydata = out.data;
        out.tape = x.tape;
        out.node = x.tape->record(out.dims, [px, ydata, outer, ax, inner](Tape<T>& t, const std::vector<T>& g) {
            if (px < 0) return;
            std::vector<T> gx(ydata.size());
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    T dot = 0;
                    for (std::int64_t a = 0; a < ax; ++a) {
                        const std::size_t idx = static_cast<std::size_t>((o * ax + a) * inner + i);
                        dot += g[idx] * ydata[idx];
                    }
                    for (std::int64_t a = 0; a < ax; ++a) {
                        const std::size_t idx = static_cast<std::size_t>((o * ax + a) * inner + i);
                        gx[idx] = ydata[idx] * (g[idx] - dot);
                    }
                }
            t.accumulate(px, gx);
        });
    }
    detail::check_finite("softmax", out);
    return out;
}

// ---------------------------------------------------------------------------
// Mean cross-entropy over rows of logits [n x c] against integer labels.
// Fused with log-sum-exp for stability; backward is (softmax - onehot)/n.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy_mean: logits must be rank-2");
    const int n = logits.dims[0], c = logits.dims[1];
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("cross_entropy_mean: label count mismatch");
    std::vector<T> probs(static_cast<std::size_t>(n) * c);
    double loss = 0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) throw ShapeError("cross_entropy_mean: label out of range");
        const T* row = logits.data.data() + static_cast<std::size_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0;
        for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
        for (int j = 0; j < c; ++j)
            probs[static_cast<std::size_t>(i) * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / denom);
        loss += std::log(denom) - static_cast<double>(row[y] - mx);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / n));
    if (logits.tape) {
        const int pl = logits.node;
        out.tape = logits.tape;
        out.node = logits.tape->record(out.dims, [pl, probs, labels, n, c](Tape<T>& t, const std::vector<T>& g) {
            if (pl < 0) return;
            std::vector<T> gl(probs.size());
            const T inv = static_cast<T>(1.0 / n) * g[0];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    T p = probs[static_cast<std::size_t>(i) * c + j];
                    if (j == labels[static_cast<std::size_t>(i)]) p -= T(1);
                    gl[static_cast<std::size_t>(i) * c + j] = p * inv;
                }
            t.accumulate(pl, gl);
        });
    }
    detail::check_finite("cross_entropy_mean", out);
    return out;
}

} // namespace vitcomer
