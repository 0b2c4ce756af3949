#pragma once

// Reverse-mode differentiation over row-major 2-D tensors.
//
// A Tape records every operation of one forward pass. Nodes that depend on a
// parameter carry a backward closure; constants do not, so inference and
// data-only subgraphs cost nothing extra. Parameters are registered by
// pointer: their values are read in place and their gradients accumulate
// straight into caller-owned buffers.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "climatellm/errors.hpp"

namespace climatellm {

template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<T> d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != r * c) throw ShapeError("matrix data size mismatch");
    }

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    T operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::size_t size() const { return data.size(); }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

namespace kernels {

// C[n x m] (+)= A[n x k] * B[k x m]
template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m,
            bool accumulate) {
    if (!accumulate) std::fill(c, c + n * m, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        T* crow = c + i * m;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T s = arow[p];
            if (s == T(0)) continue;
            const T* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += s * brow[j];
        }
    }
}

// C[n x m] (+)= A[n x k] * B[m x k]^T
template <typename T>
void matmul_bt(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m,
               bool accumulate) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * m + j] = accumulate ? c[i * m + j] + acc : acc;
        }
    }
}

// C[k x m] += A[n x k]^T * B[n x m]
template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const T s = arow[p];
            if (s == T(0)) continue;
            T* crow = c + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += s * brow[j];
        }
    }
}

}  // namespace kernels

/// Smooth GELU (tanh form) and its derivative.
template <typename T>
inline T gelu(T x) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    const T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad(T x) {
    constexpr T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
class Tape {
public:
    struct Var {
        std::size_t id = static_cast<std::size_t>(-1);
        bool valid() const { return id != static_cast<std::size_t>(-1); }
    };

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves -------------------------------------------------------------

    Var constant(Matrix<T> m) {
        Node n;
        n.rows = m.rows;
        n.cols = m.cols;
        n.value = std::move(m.data);
        return push(std::move(n));
    }

    Var constant(std::size_t rows, std::size_t cols, std::vector<T> values) {
        return constant(Matrix<T>(rows, cols, std::move(values)));
    }

    /// Parameter leaf reading `value` in place. When `grad` is non-null the
    /// gradient is accumulated into it by backward().
    Var parameter(const T* value, T* grad, std::size_t rows, std::size_t cols) {
        Node n;
        n.rows = rows;
        n.cols = cols;
        n.ext_value = value;
        n.ext_grad = grad;
        n.requires_grad = grad != nullptr;
        return push(std::move(n));
    }

    // ---- access -------------------------------------------------------------

    std::size_t rows(Var v) const { return nodes_[v.id].rows; }
    std::size_t cols(Var v) const { return nodes_[v.id].cols; }
    std::size_t size(Var v) const { return rows(v) * cols(v); }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    const T* data(Var v) const {
        const Node& n = nodes_[v.id];
        return n.ext_value ? n.ext_value : n.value.data();
    }
    std::span<const T> values(Var v) const { return {data(v), size(v)}; }
    Matrix<T> matrix(Var v) const {
        return Matrix<T>(rows(v), cols(v), std::vector<T>(data(v), data(v) + size(v)));
    }
    T scalar(Var v) const {
        if (size(v) != 1) throw ShapeError("scalar() on a non-scalar node");
        return data(v)[0];
    }
    /// Gradient of the last backward() target with respect to node v (internal
    /// nodes only; parameters report into their external buffers).
    std::span<const T> grad(Var v) const { return nodes_[v.id].grad; }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- linear algebra ------------------------------------------------------

    Var matmul(Var a, Var b) {
        const std::size_t n = rows(a), k = cols(a), m = cols(b);
        if (rows(b) != k) throw ShapeError(shape_msg("matmul", a, b));
        Node out = make(n, m, {a, b});
        kernels::matmul(data(a), data(b), out.value.data(), n, k, m, false);
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, b, r, n, k, m] {
                const T* g = nodes_[r.id].grad.data();
                if (requires_grad(a)) kernels::matmul_bt(g, data(b), grad_buf(a), n, m, k, true);
                if (requires_grad(b)) kernels::matmul_at_acc(data(a), g, grad_buf(b), n, k, m);
            });
        }
        return r;
    }

    /// a[n x k] * b[m x k]^T
    Var matmul_bt(Var a, Var b) {
        const std::size_t n = rows(a), k = cols(a), m = rows(b);
        if (cols(b) != k) throw ShapeError(shape_msg("matmul_bt", a, b));
        Node out = make(n, m, {a, b});
        kernels::matmul_bt(data(a), data(b), out.value.data(), n, k, m, false);
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, b, r, n, k, m] {
                const T* g = nodes_[r.id].grad.data();
                // dA = G B, dB = G^T A
                if (requires_grad(a)) kernels::matmul(g, data(b), grad_buf(a), n, m, k, true);
                if (requires_grad(b)) kernels::matmul_at_acc(g, data(a), grad_buf(b), n, m, k);
            });
        }
        return r;
    }

    /// x W + b with b a 1 x m row broadcast over rows.
    Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

    // ---- elementwise -----------------------------------------------------------

    Var add(Var a, Var b) {
        require_same(a, b, "add");
        Node out = make(rows(a), cols(a), {a, b});
        const T* pa = data(a);
        const T* pb = data(b);
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] = pa[i] + pb[i];
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, b, r] {
                const auto& g = nodes_[r.id].grad;
                if (requires_grad(a)) axpy(grad_buf(a), g.data(), g.size(), T(1));
                if (requires_grad(b)) axpy(grad_buf(b), g.data(), g.size(), T(1));
            });
        }
        return r;
    }

    Var sub(Var a, Var b) {
        require_same(a, b, "sub");
        Node out = make(rows(a), cols(a), {a, b});
        const T* pa = data(a);
        const T* pb = data(b);
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] = pa[i] - pb[i];
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, b, r] {
                const auto& g = nodes_[r.id].grad;
                if (requires_grad(a)) axpy(grad_buf(a), g.data(), g.size(), T(1));
                if (requires_grad(b)) axpy(grad_buf(b), g.data(), g.size(), T(-1));
            });
        }
        return r;
    }

    Var mul(Var a, Var b) {
        require_same(a, b, "mul");
        Node out = make(rows(a), cols(a), {a, b});
        const T* pa = data(a);
        const T* pb = data(b);
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] = pa[i] * pb[i];
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, b, r] {
                const auto& g = nodes_[r.id].grad;
                if (requires_grad(a)) {
                    T* ga = grad_buf(a);
                    const T* pb2 = data(b);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb2[i];
                }
                if (requires_grad(b)) {
                    T* gb = grad_buf(b);
                    const T* pa2 = data(a);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa2[i];
                }
            });
        }
        return r;
    }

    Var scale(Var a, T s) {
        Node out = make(rows(a), cols(a), {a});
        const T* pa = data(a);
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] = pa[i] * s;
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r, s] {
                const auto& g = nodes_[r.id].grad;
                axpy(grad_buf(a), g.data(), g.size(), s);
            });
        }
        return r;
    }

    /// a[n x m] + b[1 x m] broadcast over rows.
    Var add_row(Var a, Var b) {
        const std::size_t n = rows(a), m = cols(a);
        if (rows(b) != 1 || cols(b) != m) throw ShapeError(shape_msg("add_row", a, b));
        Node out = make(n, m, {a, b});
        const T* pa = data(a);
        const T* pb = data(b);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out.value[i * m + j] = pa[i * m + j] + pb[j];
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, b, r, n, m] {
                const auto& g = nodes_[r.id].grad;
                if (requires_grad(a)) axpy(grad_buf(a), g.data(), g.size(), T(1));
                if (requires_grad(b)) {
                    T* gb = grad_buf(b);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
                }
            });
        }
        return r;
    }

    /// a[n x m] + c[n x 1] broadcast over columns.
    Var add_col(Var a, Var c) {
        const std::size_t n = rows(a), m = cols(a);
        if (rows(c) != n || cols(c) != 1) throw ShapeError(shape_msg("add_col", a, c));
        Node out = make(n, m, {a, c});
        const T* pa = data(a);
        const T* pc = data(c);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out.value[i * m + j] = pa[i * m + j] + pc[i];
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, c, r, n, m] {
                const auto& g = nodes_[r.id].grad;
                if (requires_grad(a)) axpy(grad_buf(a), g.data(), g.size(), T(1));
                if (requires_grad(c)) {
                    T* gc = grad_buf(c);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) gc[i] += g[i * m + j];
                }
            });
        }
        return r;
    }

    /// Row i of a[n x m] scaled by w[i] (w is n x 1).
    Var mul_col(Var a, Var w) {
        const std::size_t n = rows(a), m = cols(a);
        if (rows(w) != n || cols(w) != 1) throw ShapeError(shape_msg("mul_col", a, w));
        Node out = make(n, m, {a, w});
        const T* pa = data(a);
        const T* pw = data(w);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out.value[i * m + j] = pa[i * m + j] * pw[i];
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, w, r, n, m] {
                const auto& g = nodes_[r.id].grad;
                if (requires_grad(a)) {
                    T* ga = grad_buf(a);
                    const T* pw2 = data(w);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i * m + j] * pw2[i];
                }
                if (requires_grad(w)) {
                    T* gw = grad_buf(w);
                    const T* pa2 = data(a);
                    for (std::size_t i = 0; i < n; ++i) {
                        T acc = T(0);
                        for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * pa2[i * m + j];
                        gw[i] += acc;
                    }
                }
            });
        }
        return r;
    }

    Var gelu(Var a) {
        Node out = make(rows(a), cols(a), {a});
        const T* pa = data(a);
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] = climatellm::gelu(pa[i]);
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r] {
                const auto& g = nodes_[r.id].grad;
                T* ga = grad_buf(a);
                const T* pa2 = data(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad(pa2[i]);
            });
        }
        return r;
    }

    Var sqrt(Var a) {
        Node out = make(rows(a), cols(a), {a});
        const T* pa = data(a);
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] = std::sqrt(pa[i]);
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r] {
                const auto& node = nodes_[r.id];
                T* ga = grad_buf(a);
                for (std::size_t i = 0; i < node.grad.size(); ++i) {
                    // Zero at the kink: sqrt(0) has no finite derivative.
                    if (node.value[i] > T(0)) ga[i] += node.grad[i] / (T(2) * node.value[i]);
                }
            });
        }
        return r;
    }

    // ---- reductions ------------------------------------------------------------

    /// n x 1 column of row sums.
    Var row_sums(Var a) {
        const std::size_t n = rows(a), m = cols(a);
        Node out = make(n, 1, {a});
        const T* pa = data(a);
        for (std::size_t i = 0; i < n; ++i) {
            T acc = T(0);
            for (std::size_t j = 0; j < m; ++j) acc += pa[i * m + j];
            out.value[i] = acc;
        }
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r, n, m] {
                const auto& g = nodes_[r.id].grad;
                T* ga = grad_buf(a);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i];
            });
        }
        return r;
    }

    /// 1 x m row of column means.
    Var mean_rows(Var a) {
        const std::size_t n = rows(a), m = cols(a);
        if (n == 0) throw InvalidInput("mean over an empty axis");
        Node out = make(1, m, {a});
        const T* pa = data(a);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out.value[j] += pa[i * m + j];
        const T inv = T(1) / static_cast<T>(n);
        for (T& x : out.value) x *= inv;
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r, n, m, inv] {
                const auto& g = nodes_[r.id].grad;
                T* ga = grad_buf(a);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j] * inv;
            });
        }
        return r;
    }

    /// 1 x 1 mean of every entry.
    Var mean_all(Var a) {
        const std::size_t count = size(a);
        if (count == 0) throw InvalidInput("mean of an empty tensor");
        Node out = make(1, 1, {a});
        const T* pa = data(a);
        T acc = T(0);
        for (std::size_t i = 0; i < count; ++i) acc += pa[i];
        out.value[0] = acc / static_cast<T>(count);
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r, count] {
                const T g = nodes_[r.id].grad[0] / static_cast<T>(count);
                T* ga = grad_buf(a);
                for (std::size_t i = 0; i < count; ++i) ga[i] += g;
            });
        }
        return r;
    }

    /// Elementwise mean of equally shaped tensors.
    Var mean_of(const std::vector<Var>& xs) {
        if (xs.empty()) throw InvalidInput("mean over an empty axis");
        for (Var x : xs) require_same(xs[0], x, "mean_of");
        Node out = make(rows(xs[0]), cols(xs[0]), xs);
        const T inv = T(1) / static_cast<T>(xs.size());
        for (Var x : xs) {
            const T* px = data(x);
            for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] += px[i];
        }
        for (T& x : out.value) x *= inv;
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, xs, r, inv] {
                const auto& g = nodes_[r.id].grad;
                for (Var x : xs) {
                    if (requires_grad(x)) axpy(grad_buf(x), g.data(), g.size(), inv);
                }
            });
        }
        return r;
    }

    // ---- normalization -----------------------------------------------------------

    /// Softmax of each row. `mask`, when given, is rows x cols with nonzero
    /// meaning "allowed"; every row must allow at least one entry.
    Var softmax_rows(Var a, const std::vector<unsigned char>* mask = nullptr) {
        const std::size_t n = rows(a), m = cols(a);
        if (mask && mask->size() != n * m) throw ShapeError("softmax mask size mismatch");
        Node out = make(n, m, {a});
        const T* pa = data(a);
        for (std::size_t i = 0; i < n; ++i) {
            T hi = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < m; ++j) {
                if (!mask || (*mask)[i * m + j]) hi = std::max(hi, pa[i * m + j]);
            }
            if (!std::isfinite(hi)) throw InvalidInput("softmax row has no admissible entry");
            T total = T(0);
            for (std::size_t j = 0; j < m; ++j) {
                T e = (!mask || (*mask)[i * m + j]) ? std::exp(pa[i * m + j] - hi) : T(0);
                out.value[i * m + j] = e;
                total += e;
            }
            for (std::size_t j = 0; j < m; ++j) out.value[i * m + j] /= total;
        }
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r, n, m] {
                const auto& node = nodes_[r.id];
                T* ga = grad_buf(a);
                for (std::size_t i = 0; i < n; ++i) {
                    T dot = T(0);
                    for (std::size_t j = 0; j < m; ++j)
                        dot += node.grad[i * m + j] * node.value[i * m + j];
                    for (std::size_t j = 0; j < m; ++j)
                        ga[i * m + j] += node.value[i * m + j] * (node.grad[i * m + j] - dot);
                }
            });
        }
        return r;
    }

    /// Per-row layer normalization with affine gamma/beta (both 1 x m).
    Var layer_norm(Var a, Var gamma, Var beta, T eps) {
        const std::size_t n = rows(a), m = cols(a);
        if (rows(gamma) != 1 || cols(gamma) != m || rows(beta) != 1 || cols(beta) != m) {
            throw ShapeError(shape_msg("layer_norm", a, gamma));
        }
        Node out = make(n, m, {a, gamma, beta});
        std::vector<T> xhat(n * m), inv_std(n);
        const T* pa = data(a);
        const T* pg = data(gamma);
        const T* pb = data(beta);
        for (std::size_t i = 0; i < n; ++i) {
            T mean = T(0);
            for (std::size_t j = 0; j < m; ++j) mean += pa[i * m + j];
            mean /= static_cast<T>(m);
            T var = T(0);
            for (std::size_t j = 0; j < m; ++j) {
                const T d = pa[i * m + j] - mean;
                var += d * d;
            }
            var /= static_cast<T>(m);
            inv_std[i] = T(1) / std::sqrt(var + eps);
            for (std::size_t j = 0; j < m; ++j) {
                xhat[i * m + j] = (pa[i * m + j] - mean) * inv_std[i];
                out.value[i * m + j] = xhat[i * m + j] * pg[j] + pb[j];
            }
        }
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, gamma, beta, r, n, m, xhat = std::move(xhat),
                             inv_std = std::move(inv_std)] {
                const auto& g = nodes_[r.id].grad;
                if (requires_grad(gamma)) {
                    T* gg = grad_buf(gamma);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) gg[j] += g[i * m + j] * xhat[i * m + j];
                }
                if (requires_grad(beta)) {
                    T* gb = grad_buf(beta);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
                }
                if (requires_grad(a)) {
                    T* ga = grad_buf(a);
                    const T* pg2 = data(gamma);
                    const T inv_m = T(1) / static_cast<T>(m);
                    for (std::size_t i = 0; i < n; ++i) {
                        T sum_d = T(0), sum_dx = T(0);
                        for (std::size_t j = 0; j < m; ++j) {
                            const T d = g[i * m + j] * pg2[j];
                            sum_d += d;
                            sum_dx += d * xhat[i * m + j];
                        }
                        for (std::size_t j = 0; j < m; ++j) {
                            const T d = g[i * m + j] * pg2[j];
                            ga[i * m + j] +=
                                inv_std[i] * (d - inv_m * sum_d - xhat[i * m + j] * inv_m * sum_dx);
                        }
                    }
                }
            });
        }
        return r;
    }

    // ---- layout ------------------------------------------------------------------

    Var reshape(Var a, std::size_t r, std::size_t c) {
        if (r * c != size(a)) throw ShapeError(shape_msg("reshape", a, a));
        Node out = make(r, c, {a});
        std::copy(data(a), data(a) + size(a), out.value.begin());
        Var res = push(std::move(out));
        if (requires_grad(res)) {
            set_backward(res, [this, a, res] {
                const auto& g = nodes_[res.id].grad;
                axpy(grad_buf(a), g.data(), g.size(), T(1));
            });
        }
        return res;
    }

    /// Rows listed in `index` (repeats allowed).
    Var gather_rows(Var a, std::vector<std::size_t> index) {
        const std::size_t m = cols(a);
        for (std::size_t i : index) {
            if (i >= rows(a)) throw ShapeError("gather_rows index out of range");
        }
        Node out = make(index.size(), m, {a});
        const T* pa = data(a);
        for (std::size_t i = 0; i < index.size(); ++i)
            std::copy(pa + index[i] * m, pa + (index[i] + 1) * m, out.value.begin() + i * m);
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r, m, index = std::move(index)] {
                const auto& g = nodes_[r.id].grad;
                T* ga = grad_buf(a);
                for (std::size_t i = 0; i < index.size(); ++i)
                    for (std::size_t j = 0; j < m; ++j) ga[index[i] * m + j] += g[i * m + j];
            });
        }
        return r;
    }

    Var slice_rows(Var a, std::size_t first, std::size_t count) {
        if (first + count > rows(a)) throw ShapeError("slice_rows out of range");
        std::vector<std::size_t> index(count);
        for (std::size_t i = 0; i < count; ++i) index[i] = first + i;
        return gather_rows(a, std::move(index));
    }

    Var slice_cols(Var a, std::size_t first, std::size_t count) {
        const std::size_t n = rows(a), m = cols(a);
        if (first + count > m) throw ShapeError("slice_cols out of range");
        Node out = make(n, count, {a});
        const T* pa = data(a);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < count; ++j) out.value[i * count + j] = pa[i * m + first + j];
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r, n, m, first, count] {
                const auto& g = nodes_[r.id].grad;
                T* ga = grad_buf(a);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < count; ++j) ga[i * m + first + j] += g[i * count + j];
            });
        }
        return r;
    }

    Var concat_rows(const std::vector<Var>& xs) {
        if (xs.empty()) throw InvalidInput("concat of nothing");
        const std::size_t m = cols(xs[0]);
        std::size_t n = 0;
        for (Var x : xs) {
            if (cols(x) != m) throw ShapeError("concat_rows column mismatch");
            n += rows(x);
        }
        Node out = make(n, m, xs);
        std::size_t offset = 0;
        for (Var x : xs) {
            std::copy(data(x), data(x) + size(x), out.value.begin() + offset);
            offset += size(x);
        }
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, xs, r] {
                const auto& g = nodes_[r.id].grad;
                std::size_t off = 0;
                for (Var x : xs) {
                    if (requires_grad(x)) axpy(grad_buf(x), g.data() + off, size(x), T(1));
                    off += size(x);
                }
            });
        }
        return r;
    }

    Var concat_cols(const std::vector<Var>& xs) {
        if (xs.empty()) throw InvalidInput("concat of nothing");
        const std::size_t n = rows(xs[0]);
        std::size_t m = 0;
        for (Var x : xs) {
            if (rows(x) != n) throw ShapeError("concat_cols row mismatch");
            m += cols(x);
        }
        Node out = make(n, m, xs);
        std::size_t offset = 0;
        for (Var x : xs) {
            const std::size_t c = cols(x);
            const T* px = data(x);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) out.value[i * m + offset + j] = px[i * c + j];
            offset += c;
        }
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, xs, r, n, m] {
                const auto& g = nodes_[r.id].grad;
                std::size_t off = 0;
                for (Var x : xs) {
                    const std::size_t c = cols(x);
                    if (requires_grad(x)) {
                        T* gx = grad_buf(x);
                        for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * m + off + j];
                    }
                    off += c;
                }
            });
        }
        return r;
    }

    // ---- custom linear maps --------------------------------------------------------

    /// y = F(x) for a linear map F given with its adjoint. `forward` writes
    /// out_rows * out_cols values; `adjoint` accumulates F^T g into the input
    /// gradient buffer.
    using LinearFn = std::function<void(const T* in, T* out)>;
    Var linear_map(Var a, std::size_t out_rows, std::size_t out_cols, const LinearFn& forward,
                   LinearFn adjoint) {
        Node out = make(out_rows, out_cols, {a});
        forward(data(a), out.value.data());
        Var r = push(std::move(out));
        if (requires_grad(r)) {
            set_backward(r, [this, a, r, adjoint = std::move(adjoint)] {
                adjoint(nodes_[r.id].grad.data(), grad_buf(a));
            });
        }
        return r;
    }

    // ---- backward ------------------------------------------------------------------

    /// Propagates d(out)/d(.) with out a 1 x 1 node, scaled by `seed`.
    void backward(Var out, T seed = T(1)) {
        if (size(out) != 1) throw ShapeError("backward() needs a scalar output");
        if (!requires_grad(out)) return;
        grad_buf(out)[0] += seed;
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward();
        }
    }

private:
    struct Node {
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::vector<T> value;
        const T* ext_value = nullptr;
        T* ext_grad = nullptr;
        std::vector<T> grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    Node make(std::size_t r, std::size_t c, const std::vector<Var>& inputs) {
        Node n;
        n.rows = r;
        n.cols = c;
        n.value.assign(r * c, T(0));
        for (Var v : inputs) n.requires_grad = n.requires_grad || requires_grad(v);
        return n;
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    void set_backward(Var v, std::function<void()> fn) { nodes_[v.id].backward = std::move(fn); }

    T* grad_buf(Var v) {
        Node& n = nodes_[v.id];
        if (n.ext_grad) return n.ext_grad;
        if (n.grad.empty()) n.grad.assign(n.rows * n.cols, T(0));
        return n.grad.data();
    }

    static void axpy(T* y, const T* x, std::size_t count, T alpha) {
        for (std::size_t i = 0; i < count; ++i) y[i] += alpha * x[i];
    }

    void require_same(Var a, Var b, const char* op) const {
        if (rows(a) != rows(b) || cols(a) != cols(b)) throw ShapeError(shape_msg(op, a, b));
    }

    std::string shape_msg(const char* op, Var a, Var b) const {
        return std::string(op) + ": incompatible shapes " + std::to_string(rows(a)) + "x" +
               std::to_string(cols(a)) + " and " + std::to_string(rows(b)) + "x" +
               std::to_string(cols(b));
    }

    std::vector<Node> nodes_;
};

}  // namespace climatellm
