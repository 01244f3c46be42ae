#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation.
// Tensors are cheap shared handles; values are immutable after construction
// except for the grad buffer (and explicit in-place weight updates by the
// optimizer, which happen outside any live graph). Gradients accumulate
// additively; the caller zeroes them between steps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cocon/rng.hpp"

namespace cocon {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

struct TensorImpl;

// Counts live tensors; used by tests as a memory proxy for the
// graph-free representation pass.
inline std::atomic<long>& live_tensor_count() {
    static std::atomic<long> count{0};
    return count;
}

struct TensorNode {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Receives the output grad buffer, accumulates into input grads.
    std::function<void(const std::vector<double>&)> backprop;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    std::unique_ptr<TensorNode> node;  // absent when recording was off

    TensorImpl() { live_tensor_count().fetch_add(1, std::memory_order_relaxed); }
    ~TensorImpl() { live_tensor_count().fetch_sub(1, std::memory_order_relaxed); }
    TensorImpl(const TensorImpl&) = delete;
    TensorImpl& operator=(const TensorImpl&) = delete;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

inline bool is_grad_enabled() { return detail::grad_enabled_flag(); }

// RAII switch that disables graph recording on the current thread.
// Forward values are unaffected, bit for bit.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) {
        detail::grad_enabled_flag() = false;
    }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline long live_tensor_count() {
    return detail::live_tensor_count().load(std::memory_order_relaxed);
}

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return from_data(std::move(shape), {});
    }

    static Tensor full(Shape shape, double v) {
        size_t n = shape_numel(shape);
        Tensor t = make_(std::move(shape));
        t.impl_->data.assign(n, v);
        return t;
    }

    static Tensor scalar(double v) { return full({}, v); }

    static Tensor from_data(Shape shape, std::vector<double> data) {
        size_t n = shape_numel(shape);
        if (data.empty()) data.assign(n, 0.0);
        if (data.size() != n) {
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        }
        Tensor t = make_(std::move(shape));
        t.impl_->data = std::move(data);
        return t;
    }

    // Gradient-tracked leaf, the building block of ParameterSet.
    static Tensor param(Shape shape, std::vector<double> data = {}) {
        Tensor t = from_data(std::move(shape), std::move(data));
        t.impl_->requires_grad = true;
        return t;
    }

    static Tensor randn(Shape shape, RngStream& rng, double stddev = 1.0) {
        size_t n = shape_numel(shape);
        std::vector<double> d(n);
        for (double& x : d) x = rng.normal(0.0, stddev);
        return from_data(std::move(shape), std::move(d));
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    size_t ndim() const { return impl_->shape.size(); }
    size_t numel() const { return impl_->data.size(); }
    size_t rows() const { check_2d_(); return impl_->shape[0]; }
    size_t cols() const { check_2d_(); return impl_->shape[1]; }

    const std::vector<double>& data() const { return impl_->data; }
    // In-place access: used by the optimizer and by finite-difference
    // checks only, never while a graph referencing this tensor is live.
    std::vector<double>& data_mut() { return impl_->data; }

    double value() const {
        if (numel() != 1) {
            throw std::invalid_argument("value() on non-scalar tensor " + shape_str(shape()));
        }
        return impl_->data[0];
    }

    double at(size_t i) const { return impl_->data.at(i); }
    double at(size_t r, size_t c) const {
        check_2d_();
        return impl_->data.at(r * impl_->shape[1] + c);
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    bool has_node() const { return impl_ && impl_->node != nullptr; }

    const std::vector<double>& grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() {
        impl_->ensure_grad();
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }

    // Same values, detached from any graph and not gradient-tracked.
    Tensor detach() const {
        Tensor t = make_(impl_->shape);
        t.impl_->data = impl_->data;
        return t;
    }

    detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

    // --- graph construction (used by the op layer) ---
    static Tensor make_result(Shape shape, std::vector<double> data,
                              std::vector<Tensor> inputs,
                              std::function<void(const std::vector<double>&)> backprop) {
        Tensor out = from_data(std::move(shape), std::move(data));
        bool needs = false;
        for (const Tensor& in : inputs) {
            if (in.requires_grad() || in.has_node()) { needs = true; break; }
        }
        if (needs && is_grad_enabled()) {
            out.impl_->requires_grad = true;
            auto node = std::make_unique<detail::TensorNode>();
            node->inputs.reserve(inputs.size());
            for (const Tensor& in : inputs) node->inputs.push_back(in.impl_ptr());
            node->backprop = std::move(backprop);
            out.impl_->node = std::move(node);
        }
        return out;
    }

private:
    static Tensor make_(Shape shape) {
        Tensor t;
        t.impl_ = std::make_shared<detail::TensorImpl>();
        t.impl_->shape = std::move(shape);
        return t;
    }

    void check_2d_() const {
        if (impl_->shape.size() != 2) {
            throw std::invalid_argument("expected 2-d tensor, got " + shape_str(impl_->shape));
        }
    }

    std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

inline void accumulate_grad(const std::shared_ptr<TensorImpl>& t,
                            const double* g, size_t n) {
    if (!t->requires_grad && !t->node) return;
    t->ensure_grad();
    for (size_t i = 0; i < n; ++i) t->grad[i] += g[i];
}

}  // namespace detail

// Reverse-mode sweep from a scalar root. Grad buffers accumulate; repeated
// calls without zeroing add up, which is what sub-batch accumulation needs.
inline void backward(const Tensor& root) {
    if (root.numel() != 1) {
        throw std::invalid_argument("backward() requires a scalar root, got " +
                                    shape_str(root.shape()));
    }
    detail::TensorImpl* r = root.impl();
    if (!r->node && !r->requires_grad) return;  // constant; nothing to do

    // Iterative post-order over the graph.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
    stack.emplace_back(r, 0);
    visited.insert(r);
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (node->node && next_child < node->node->inputs.size()) {
            detail::TensorImpl* child = node->node->inputs[next_child].get();
            ++next_child;
            if (child->node && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    r->ensure_grad();
    r->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* t = *it;
        if (!t->node) continue;
        t->ensure_grad();
        t->node->backprop(t->grad);
    }
}

// ---------------------------------------------------------------------------
// Elementwise and structural operations
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    size_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
        [ai, bi, n](const std::vector<double>& g) {
            detail::accumulate_grad(ai, g.data(), n);
            detail::accumulate_grad(bi, g.data(), n);
        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    size_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
        [ai, bi, n](const std::vector<double>& g) {
            detail::accumulate_grad(ai, g.data(), n);
            if (bi->requires_grad || bi->node) {
                bi->ensure_grad();
                for (size_t i = 0; i < n; ++i) bi->grad[i] -= g[i];
            }
        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    size_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
        [ai, bi, n](const std::vector<double>& g) {
            if (ai->requires_grad || ai->node) {
                ai->ensure_grad();
                for (size_t i = 0; i < n; ++i) ai->grad[i] += g[i] * bi->data[i];
            }
            if (bi->requires_grad || bi->node) {
                bi->ensure_grad();
                for (size_t i = 0; i < n; ++i) bi->grad[i] += g[i] * ai->data[i];
            }
        });
}

inline Tensor scale(const Tensor& a, double c) {
    size_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i) out[i] = av[i] * c;
    auto ai = a.impl_ptr();
    return Tensor::make_result(a.shape(), std::move(out), {a},
        [ai, c, n](const std::vector<double>& g) {
            if (ai->requires_grad || ai->node) {
                ai->ensure_grad();
                for (size_t i = 0; i < n; ++i) ai->grad[i] += g[i] * c;
            }
        });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor exp(const Tensor& a) {
    size_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i) out[i] = std::exp(av[i]);
    auto ai = a.impl_ptr();
    return Tensor::make_result(a.shape(), std::move(out), {a},
        [ai, n](const std::vector<double>& g) {
            if (ai->requires_grad || ai->node) {
                ai->ensure_grad();
                for (size_t i = 0; i < n; ++i) ai->grad[i] += g[i] * std::exp(ai->data[i]);
            }
        });
}

inline Tensor log(const Tensor& a) {
    size_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i) out[i] = std::log(av[i]);
    auto ai = a.impl_ptr();
    return Tensor::make_result(a.shape(), std::move(out), {a},
        [ai, n](const std::vector<double>& g) {
            if (ai->requires_grad || ai->node) {
                ai->ensure_grad();
                for (size_t i = 0; i < n; ++i) ai->grad[i] += g[i] / ai->data[i];
            }
        });
}

// Exact erf-based GELU.
inline Tensor gelu(const Tensor& a) {
    size_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    constexpr double inv_sqrt2 = 0.7071067811865475244008443621048490;
    for (size_t i = 0; i < n; ++i) {
        out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
    }
    auto ai = a.impl_ptr();
    return Tensor::make_result(a.shape(), std::move(out), {a},
        [ai, n](const std::vector<double>& g) {
            if (!(ai->requires_grad || ai->node)) return;
            ai->ensure_grad();
            constexpr double is2 = 0.7071067811865475244008443621048490;
            constexpr double inv_sqrt2pi = 0.3989422804014326779399460599343819;
            for (size_t i = 0; i < n; ++i) {
                double x = ai->data[i];
                double cdf = 0.5 * (1.0 + std::erf(x * is2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                ai->grad[i] += g[i] * (cdf + x * pdf);
            }
        });
}

inline Tensor sum(const Tensor& a) {
    size_t n = a.numel();
    const auto& av = a.data();
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += av[i];
    auto ai = a.impl_ptr();
    return Tensor::make_result({}, {s}, {a},
        [ai, n](const std::vector<double>& g) {
            if (ai->requires_grad || ai->node) {
                ai->ensure_grad();
                for (size_t i = 0; i < n; ++i) ai->grad[i] += g[0];
            }
        });
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 1 || b.ndim() != 1 || a.numel() != b.numel()) {
        throw std::invalid_argument("dot: expected equal-length vectors, got " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    size_t n = a.numel();
    const auto& av = a.data();
    const auto& bv = b.data();
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += av[i] * bv[i];
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    return Tensor::make_result({}, {s}, {a, b},
        [ai, bi, n](const std::vector<double>& g) {
            if (ai->requires_grad || ai->node) {
                ai->ensure_grad();
                for (size_t i = 0; i < n; ++i) ai->grad[i] += g[0] * bi->data[i];
            }
            if (bi->requires_grad || bi->node) {
                bi->ensure_grad();
                for (size_t i = 0; i < n; ++i) bi->grad[i] += g[0] * ai->data[i];
            }
        });
}

// ---------------------------------------------------------------------------
// Matrix operations
// ---------------------------------------------------------------------------

namespace detail {

// C[m×n] += A[m×k] · B[k×n]; ikj order so the inner loop is contiguous.
inline void matmul_acc(const double* a, const double* b, double* c,
                       size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m×k] += A[m×n] · B[k×n]ᵀ
inline void matmul_nt_acc(const double* a, const double* b, double* c,
                          size_t m, size_t n, size_t k) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* crow = c + i * k;
        for (size_t j = 0; j < k; ++j) {
            const double* brow = b + j * n;
            double s = 0.0;
            for (size_t p = 0; p < n; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
inline void matmul_tn_acc(const double* a, const double* b, double* c,
                          size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (size_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: incompatible shapes " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    detail::matmul_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    return Tensor::make_result({m, n}, std::move(out), {a, b},
        [ai, bi, m, k, n](const std::vector<double>& g) {
            if (ai->requires_grad || ai->node) {
                ai->ensure_grad();
                detail::matmul_nt_acc(g.data(), bi->data.data(), ai->grad.data(), m, n, k);
            }
            if (bi->requires_grad || bi->node) {
                bi->ensure_grad();
                detail::matmul_tn_acc(ai->data.data(), g.data(), bi->grad.data(), m, k, n);
            }
        });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " +
                                    shape_str(shape) + " changes element count");
    }
    auto ai = a.impl_ptr();
    size_t n = a.numel();
    return Tensor::make_result(std::move(shape), std::vector<double>(a.data()), {a},
        [ai, n](const std::vector<double>& g) {
            detail::accumulate_grad(ai, g.data(), n);
        });
}

inline Tensor transpose(const Tensor& a) {
    size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    const auto& av = a.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    auto ai = a.impl_ptr();
    return Tensor::make_result({n, m}, std::move(out), {a},
        [ai, m, n](const std::vector<double>& g) {
            if (!(ai->requires_grad || ai->node)) return;
            ai->ensure_grad();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) ai->grad[i * n + j] += g[j * m + i];
        });
}

// X[m×n] + row vector v[n] broadcast over rows.
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    if (x.ndim() != 2 || v.ndim() != 1 || x.cols() != v.numel()) {
        throw std::invalid_argument("add_rowvec: shapes " + shape_str(x.shape()) +
                                    " and " + shape_str(v.shape()));
    }
    size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    const auto& xv = x.data();
    const auto& vv = v.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + vv[j];
    auto xi = x.impl_ptr(), vi = v.impl_ptr();
    return Tensor::make_result({m, n}, std::move(out), {x, v},
        [xi, vi, m, n](const std::vector<double>& g) {
            detail::accumulate_grad(xi, g.data(), m * n);
            if (vi->requires_grad || vi->node) {
                vi->ensure_grad();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j) vi->grad[j] += g[i * n + j];
            }
        });
}

inline Tensor slice_rows(const Tensor& a, size_t r0, size_t r1) {
    size_t m = a.rows(), n = a.cols();
    if (r0 > r1 || r1 > m) {
        throw std::out_of_range("slice_rows: [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ") of " + shape_str(a.shape()));
    }
    size_t rows = r1 - r0;
    std::vector<double> out(rows * n);
    std::copy_n(a.data().begin() + r0 * n, rows * n, out.begin());
    auto ai = a.impl_ptr();
    return Tensor::make_result({rows, n}, std::move(out), {a},
        [ai, r0, rows, n](const std::vector<double>& g) {
            if (!(ai->requires_grad || ai->node)) return;
            ai->ensure_grad();
            for (size_t i = 0; i < rows * n; ++i) ai->grad[r0 * n + i] += g[i];
        });
}

inline Tensor slice_cols(const Tensor& a, size_t c0, size_t c1) {
    size_t m = a.rows(), n = a.cols();
    if (c0 > c1 || c1 > n) {
        throw std::out_of_range("slice_cols: [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") of " + shape_str(a.shape()));
    }
    size_t cols = c1 - c0;
    std::vector<double> out(m * cols);
    const auto& av = a.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < cols; ++j) out[i * cols + j] = av[i * n + c0 + j];
    auto ai = a.impl_ptr();
    return Tensor::make_result({m, cols}, std::move(out), {a},
        [ai, c0, cols, m, n](const std::vector<double>& g) {
            if (!(ai->requires_grad || ai->node)) return;
            ai->ensure_grad();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < cols; ++j) ai->grad[i * n + c0 + j] += g[i * cols + j];
        });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    size_t n = parts[0].cols();
    size_t m = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != n) {
            throw std::invalid_argument("concat_rows: column mismatch " +
                                        shape_str(p.shape()));
        }
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    std::vector<size_t> sizes;
    for (const Tensor& p : parts) {
        impls.push_back(p.impl_ptr());
        sizes.push_back(p.numel());
    }
    return Tensor::make_result({m, n}, std::move(out), parts,
        [impls, sizes](const std::vector<double>& g) {
            size_t off = 0;
            for (size_t p = 0; p < impls.size(); ++p) {
                detail::accumulate_grad(impls[p], g.data() + off, sizes[p]);
                off += sizes[p];
            }
        });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    size_t m = parts[0].rows();
    size_t n = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != m) {
            throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()));
        }
        n += p.cols();
    }
    std::vector<double> out(m * n);
    size_t coff = 0;
    for (const Tensor& p : parts) {
        size_t pc = p.cols();
        const auto& pv = p.data();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < pc; ++j) out[i * n + coff + j] = pv[i * pc + j];
        coff += pc;
    }
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    std::vector<size_t> widths;
    for (const Tensor& p : parts) {
        impls.push_back(p.impl_ptr());
        widths.push_back(p.cols());
    }
    return Tensor::make_result({m, n}, std::move(out), parts,
        [impls, widths, m, n](const std::vector<double>& g) {
            size_t coff = 0;
            for (size_t p = 0; p < impls.size(); ++p) {
                size_t pc = widths[p];
                auto& t = impls[p];
                if (t->requires_grad || t->node) {
                    t->ensure_grad();
                    for (size_t i = 0; i < m; ++i)
                        for (size_t j = 0; j < pc; ++j)
                            t->grad[i * pc + j] += g[i * n + coff + j];
                }
                coff += pc;
            }
        });
}

// Rows of `table` gathered by index; backward scatter-adds. This is the
// embedding lookup.
inline Tensor rows_gather(const Tensor& table, const std::vector<size_t>& ids) {
    size_t v = table.rows(), d = table.cols();
    for (size_t id : ids) {
        if (id >= v) {
            throw std::out_of_range("rows_gather: index " + std::to_string(id) +
                                    " out of " + std::to_string(v) + " rows");
        }
    }
    size_t m = ids.size();
    std::vector<double> out(m * d);
    const auto& tv = table.data();
    for (size_t i = 0; i < m; ++i)
        std::copy_n(tv.begin() + ids[i] * d, d, out.begin() + i * d);
    auto ti = table.impl_ptr();
    return Tensor::make_result({m, d}, std::move(out), {table},
        [ti, ids, d](const std::vector<double>& g) {
            if (!(ti->requires_grad || ti->node)) return;
            ti->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                for (size_t j = 0; j < d; ++j) ti->grad[ids[i] * d + j] += g[i * d + j];
        });
}

// One element per (row, col) pair, as a vector; backward scatter-adds.
inline Tensor select_elements(const Tensor& a,
                              const std::vector<std::pair<size_t, size_t>>& rc) {
    size_t m = a.rows(), n = a.cols();
    for (auto [r, c] : rc) {
        if (r >= m || c >= n) {
            throw std::out_of_range("select_elements: (" + std::to_string(r) + "," +
                                    std::to_string(c) + ") out of " + shape_str(a.shape()));
        }
    }
    std::vector<double> out(rc.size());
    const auto& av = a.data();
    for (size_t i = 0; i < rc.size(); ++i) out[i] = av[rc[i].first * n + rc[i].second];
    auto ai = a.impl_ptr();
    return Tensor::make_result({rc.size()}, std::move(out), {a},
        [ai, rc, n](const std::vector<double>& g) {
            if (!(ai->requires_grad || ai->node)) return;
            ai->ensure_grad();
            for (size_t i = 0; i < rc.size(); ++i)
                ai->grad[rc[i].first * n + rc[i].second] += g[i];
        });
}

// ---------------------------------------------------------------------------
// Reductions along an axis, softmax, layer norm, cross entropy
// ---------------------------------------------------------------------------

namespace detail {

// Views a 1-d or 2-d tensor as rows × cols with the reduction along `axis`.
struct AxisView {
    size_t groups;  // number of independent slices
    size_t len;     // elements reduced per slice
    size_t gstride; // stride between groups
    size_t estride; // stride between elements of a slice
};

inline AxisView axis_view(const Tensor& t, size_t axis) {
    if (t.ndim() == 1) {
        if (axis != 0) throw std::invalid_argument("axis out of range for 1-d tensor");
        return {1, t.numel(), 0, 1};
    }
    if (t.ndim() == 2) {
        size_t m = t.shape()[0], n = t.shape()[1];
        if (axis == 1) return {m, n, n, 1};
        if (axis == 0) return {n, m, 1, n};
        throw std::invalid_argument("axis out of range for 2-d tensor");
    }
    throw std::invalid_argument("softmax/logsumexp support 1-d and 2-d tensors only");
}

}  // namespace detail

// Max-subtracted softmax along `axis`.
inline Tensor softmax(const Tensor& a, size_t axis = 0) {
    auto view = detail::axis_view(a, axis);
    const auto& av = a.data();
    std::vector<double> out(a.numel());
    for (size_t gidx = 0; gidx < view.groups; ++gidx) {
        size_t base = gidx * view.gstride;
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t e = 0; e < view.len; ++e)
            mx = std::max(mx, av[base + e * view.estride]);
        double s = 0.0;
        for (size_t e = 0; e < view.len; ++e) {
            double v = std::exp(av[base + e * view.estride] - mx);
            out[base + e * view.estride] = v;
            s += v;
        }
        double inv = 1.0 / s;
        for (size_t e = 0; e < view.len; ++e) out[base + e * view.estride] *= inv;
    }
    auto ai = a.impl_ptr();
    auto yv = std::make_shared<std::vector<double>>(out);  // softmax values for backward
    return Tensor::make_result(a.shape(), std::move(out), {a},
        [ai, yv, view](const std::vector<double>& g) {
            if (!(ai->requires_grad || ai->node)) return;
            ai->ensure_grad();
            const auto& y = *yv;
            for (size_t gidx = 0; gidx < view.groups; ++gidx) {
                size_t base = gidx * view.gstride;
                double dy_dot_y = 0.0;
                for (size_t e = 0; e < view.len; ++e) {
                    size_t k = base + e * view.estride;
                    dy_dot_y += g[k] * y[k];
                }
                for (size_t e = 0; e < view.len; ++e) {
                    size_t k = base + e * view.estride;
                    ai->grad[k] += y[k] * (g[k] - dy_dot_y);
                }
            }
        });
}

// log Σ exp along `axis`; collapses that axis. Backward is softmax-weighted.
inline Tensor logsumexp(const Tensor& a, size_t axis = 0) {
    auto view = detail::axis_view(a, axis);
    const auto& av = a.data();
    std::vector<double> out(view.groups);
    for (size_t gidx = 0; gidx < view.groups; ++gidx) {
        size_t base = gidx * view.gstride;
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t e = 0; e < view.len; ++e)
            mx = std::max(mx, av[base + e * view.estride]);
        double s = 0.0;
        for (size_t e = 0; e < view.len; ++e)
            s += std::exp(av[base + e * view.estride] - mx);
        out[gidx] = mx + std::log(s);
    }
    Shape out_shape;
    if (a.ndim() == 2) out_shape = {view.groups};
    else out_shape = {};  // 1-d input collapses to scalar
    auto ai = a.impl_ptr();
    return Tensor::make_result(out_shape, std::move(out), {a},
        [ai, view](const std::vector<double>& g) {
            if (!(ai->requires_grad || ai->node)) return;
            ai->ensure_grad();
            const auto& x = ai->data;
            for (size_t gidx = 0; gidx < view.groups; ++gidx) {
                size_t base = gidx * view.gstride;
                double mx = -std::numeric_limits<double>::infinity();
                for (size_t e = 0; e < view.len; ++e)
                    mx = std::max(mx, x[base + e * view.estride]);
                double s = 0.0;
                for (size_t e = 0; e < view.len; ++e)
                    s += std::exp(x[base + e * view.estride] - mx);
                double inv = 1.0 / s;
                for (size_t e = 0; e < view.len; ++e) {
                    size_t k = base + e * view.estride;
                    ai->grad[k] += g[gidx] * std::exp(x[k] - mx) * inv;
                }
            }
        });
}

// Normalizes the last dimension to zero mean, unit variance, then applies
// the affine gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    size_t d = x.ndim() == 1 ? x.numel() : x.cols();
    size_t m = x.ndim() == 1 ? 1 : x.rows();
    if (gain.ndim() != 1 || bias.ndim() != 1 || gain.numel() != d || bias.numel() != d) {
        throw std::invalid_argument("layer_norm: gain/bias must match last dim " +
                                    std::to_string(d) + ", got " + shape_str(gain.shape()) +
                                    " and " + shape_str(bias.shape()));
    }
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    std::vector<double> out(m * d);
    std::vector<double> xhat(m * d);
    std::vector<double> inv_std(m);
    for (size_t i = 0; i < m; ++i) {
        const double* row = xv.data() + i * d;
        double mu = 0.0;
        for (size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (size_t j = 0; j < d; ++j) {
            double h = (row[j] - mu) * is;
            xhat[i * d + j] = h;
            out[i * d + j] = gv[j] * h + bv[j];
        }
    }
    auto xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto istd = std::make_shared<std::vector<double>>(std::move(inv_std));
    return Tensor::make_result(x.shape(), std::move(out), {x, gain, bias},
        [xi, gi, bi, xh, istd, m, d](const std::vector<double>& g) {
            const auto& hat = *xh;
            if (gi->requires_grad || gi->node) {
                gi->ensure_grad();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < d; ++j)
                        gi->grad[j] += g[i * d + j] * hat[i * d + j];
            }
            if (bi->requires_grad || bi->node) {
                bi->ensure_grad();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < d; ++j) bi->grad[j] += g[i * d + j];
            }
            if (xi->requires_grad || xi->node) {
                xi->ensure_grad();
                double dinv = 1.0 / static_cast<double>(d);
                for (size_t i = 0; i < m; ++i) {
                    double mean_dg = 0.0, mean_dgh = 0.0;
                    for (size_t j = 0; j < d; ++j) {
                        double dg = g[i * d + j] * gi->data[j];
                        mean_dg += dg;
                        mean_dgh += dg * hat[i * d + j];
                    }
                    mean_dg *= dinv;
                    mean_dgh *= dinv;
                    double is = (*istd)[i];
                    for (size_t j = 0; j < d; ++j) {
                        double dg = g[i * d + j] * gi->data[j];
                        xi->grad[i * d + j] +=
                            is * (dg - mean_dg - hat[i * d + j] * mean_dgh);
                    }
                }
            }
        });
}

// −log softmax(logits)[target] on a 1-d logit vector.
inline Tensor cross_entropy(const Tensor& logits, size_t target) {
    if (logits.ndim() != 1) {
        throw std::invalid_argument("cross_entropy: logits must be 1-d, got " +
                                    shape_str(logits.shape()));
    }
    if (target >= logits.numel()) {
        throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                                " out of vocabulary " + std::to_string(logits.numel()));
    }
    Tensor lse = logsumexp(logits, 0);
    Tensor as_row = reshape(logits, {1, logits.numel()});
    Tensor picked = select_elements(as_row, {{0, target}});
    return sub(lse, sum(picked));
}

// Mean cross entropy over the rows of a logit matrix.
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<size_t>& targets) {
    if (logits.ndim() != 2 || logits.rows() != targets.size()) {
        throw std::invalid_argument("cross_entropy_rows: need one target per row");
    }
    for (size_t t : targets) {
        if (t >= logits.cols()) {
            throw std::out_of_range("cross_entropy_rows: target " + std::to_string(t) +
                                    " out of vocabulary " + std::to_string(logits.cols()));
        }
    }
    Tensor lse = logsumexp(logits, 1);  // one per row
    std::vector<std::pair<size_t, size_t>> rc(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) rc[i] = {i, targets[i]};
    Tensor picked = select_elements(logits, rc);
    return mean(sub(lse, picked));
}

// ---------------------------------------------------------------------------
// ParameterSet
// ---------------------------------------------------------------------------

// Named collection of gradient-tracked leaves; iteration is sorted by path.
class ParameterSet {
public:
    void add(const std::string& path, Tensor t) {
        if (params_.count(path)) {
            throw std::invalid_argument("duplicate parameter path: " + path);
        }
        if (!t.requires_grad()) {
            throw std::invalid_argument("parameter must be gradient-tracked: " + path);
        }
        params_.emplace(path, std::move(t));
    }

    bool contains(const std::string& path) const { return params_.count(path) != 0; }

    Tensor& get(const std::string& path) {
        auto it = params_.find(path);
        if (it == params_.end()) throw std::out_of_range("no parameter: " + path);
        return it->second;
    }
    const Tensor& get(const std::string& path) const {
        auto it = params_.find(path);
        if (it == params_.end()) throw std::out_of_range("no parameter: " + path);
        return it->second;
    }

    size_t size() const { return params_.size(); }
    size_t total_values() const {
        size_t n = 0;
        for (const auto& [k, v] : params_) n += v.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [k, v] : params_) v.zero_grad();
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::map<std::string, Tensor> params_;
};

}  // namespace cocon
