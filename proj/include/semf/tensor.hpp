#pragma once

// Reverse-mode autodiff over dense double tensors. Define-by-run: each
// forward pass builds a fresh graph of shared_ptr nodes; leaves (parameters
// and constants) outlive the graphs that reference them. Matrix products are
// delegated to Eigen; everything else is plain loops.

#include <Eigen/Core>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "semf/error.hpp"
#include "semf/rng.hpp"

namespace semf::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
public:
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // lazily sized; persists across passes for leaves
    bool requires_grad = false;
    std::uint64_t grad_version = 0;  // bumped when backward deposits into this leaf
    std::vector<NodePtr> parents;
    std::function<void()> backprop;
    const char* op = "leaf";

    bool is_leaf() const { return parents.empty(); }
};

// Side buffer that captures leaf gradients during a backward pass, so that
// several samples can be backpropagated concurrently through shared
// parameters and reduced in a fixed order afterwards.
class GradSink {
public:
    std::vector<double>& buffer(Node* leaf) {
        auto it = index_.find(leaf);
        if (it == index_.end()) {
            index_.emplace(leaf, bufs_.size());
            bufs_.emplace_back(leaf, std::vector<double>(shape_numel(leaf->shape), 0.0));
            return bufs_.back().second;
        }
        return bufs_[it->second].second;
    }

    // Adds captured gradients into the leaves' own buffers. Single-threaded.
    void flush() {
        for (auto& [leaf, buf] : bufs_) {
            if (leaf->grad.size() != buf.size()) leaf->grad.assign(buf.size(), 0.0);
            for (std::size_t i = 0; i < buf.size(); ++i) leaf->grad[i] += buf[i];
            ++leaf->grad_version;
        }
    }

    bool empty() const { return bufs_.empty(); }

private:
    std::vector<std::pair<Node*, std::vector<double>>> bufs_;
    std::unordered_map<const Node*, std::size_t> index_;
};

inline thread_local GradSink* tl_grad_sink = nullptr;
inline thread_local bool tl_grad_enabled = true;

// Disables graph construction in a scope (inference / metric computation).
struct NoGradGuard {
    NoGradGuard() : prev_(tl_grad_enabled) { tl_grad_enabled = false; }
    ~NoGradGuard() { tl_grad_enabled = prev_; }

private:
    bool prev_;
};

inline std::atomic<bool>& nan_check_flag() {
    static std::atomic<bool> f{true};
    return f;
}
inline void set_nan_check(bool on) { nan_check_flag().store(on); }

// Scoped toggle for the per-op finiteness scan. Training loops disable it for
// throughput and instead test the batch loss, which any NaN reaches.
struct NanCheckGuard {
    explicit NanCheckGuard(bool on) : prev_(nan_check_flag().load()) { set_nan_check(on); }
    ~NanCheckGuard() { set_nan_check(prev_); }

private:
    bool prev_;
};

inline std::vector<double>& grad_buf(Node& n) {
    if (tl_grad_sink && n.is_leaf() && n.requires_grad) return tl_grad_sink->buffer(&n);
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.assign(shape_numel(n->shape), 0.0);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            fail(ErrorKind::Shape, "tensor init: " + shape_str(shape) + " needs " +
                                       std::to_string(shape_numel(shape)) + " values, got " +
                                       std::to_string(values.size()));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t numel() const { return n_->value.size(); }

    std::size_t rows() const { return n_->shape.size() == 2 ? n_->shape[0] : 1; }
    std::size_t cols() const { return n_->shape.back(); }

    std::vector<double>& data() { return n_->value; }
    const std::vector<double>& data() const { return n_->value; }

    std::vector<double>& grad() {
        if (n_->grad.size() != n_->value.size()) n_->grad.assign(n_->value.size(), 0.0);
        return n_->grad;
    }

    double item() const {
        if (numel() != 1) fail(ErrorKind::Contract, "item() on non-scalar tensor " + shape_str(shape()));
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }

    void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

    Node* node() const { return n_.get(); }
    const NodePtr& node_ptr() const { return n_; }

    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

private:
    NodePtr n_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<NodePtr> parents, const char* op) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), 0.0);
    n->op = op;
    if (tl_grad_enabled) {
        for (const auto& p : parents)
            if (p->requires_grad) n->requires_grad = true;
        if (n->requires_grad) n->parents = std::move(parents);
    }
    return Tensor(std::move(n));
}

inline void check_finite(const Tensor& t, const char* op) {
    if (!nan_check_flag().load(std::memory_order_relaxed)) return;
    for (double v : t.data())
        if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string(op) + " produced a non-finite value");
}

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<MatRM>;
using CMap = Eigen::Map<const MatRM>;

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) fail(ErrorKind::Shape, std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    // broadcast: b is a length-C vector added to every row of a
    const bool bcast = !same && b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.shape()[0];
    if (!same && !bcast)
        fail(ErrorKind::Shape, "add: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = detail::make_op(a.shape(), {a.node_ptr(), b.node_ptr()}, "add");
    const std::size_t n = a.numel(), c = b.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[same ? i : i % c];
    detail::check_finite(out, "add");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        Node* on = out.node();
        out.node()->backprop = [an, bn, on, same, n, c] {
            const auto& g = on->grad;
            if (an->requires_grad) {
                auto& ga = grad_buf(*an);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(*bn);
                if (same)
                    for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
                else
                    for (std::size_t i = 0; i < n; ++i) gb[i % c] += g[i];
            }
        };
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail(ErrorKind::Shape, "sub: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = detail::make_op(a.shape(), {a.node_ptr(), b.node_ptr()}, "sub");
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    detail::check_finite(out, "sub");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        Node* on = out.node();
        out.node()->backprop = [an, bn, on, n] {
            const auto& g = on->grad;
            if (an->requires_grad) {
                auto& ga = grad_buf(*an);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(*bn);
                for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        };
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    const bool bcast = !same && b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.shape()[0];
    if (!same && !bcast)
        fail(ErrorKind::Shape, "mul: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = detail::make_op(a.shape(), {a.node_ptr(), b.node_ptr()}, "mul");
    const std::size_t n = a.numel(), c = b.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[same ? i : i % c];
    detail::check_finite(out, "mul");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        Node* on = out.node();
        out.node()->backprop = [an, bn, on, same, n, c] {
            const auto& g = on->grad;
            if (an->requires_grad) {
                auto& ga = grad_buf(*an);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->value[same ? i : i % c];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(*bn);
                for (std::size_t i = 0; i < n; ++i) gb[same ? i : i % c] += g[i] * an->value[i];
            }
        };
    }
    return out;
}

inline Tensor scale(const Tensor& a, double k) {
    Tensor out = detail::make_op(a.shape(), {a.node_ptr()}, "scale");
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * k;
    detail::check_finite(out, "scale");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, k, n] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < n; ++i) ga[i] += on->grad[i] * k;
        };
    }
    return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.shape()[1] != b.shape()[0])
        fail(ErrorKind::Shape, "matmul: inner dims differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out = detail::make_op({m, n}, {a.node_ptr(), b.node_ptr()}, "matmul");
    {
        detail::CMap A(a.data().data(), m, k), B(b.data().data(), k, n);
        detail::Map C(out.data().data(), m, n);
        C.noalias() = A * B;
    }
    detail::check_finite(out, "matmul");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* bn = b.node();
        Node* on = out.node();
        out.node()->backprop = [an, bn, on, m, k, n] {
            detail::CMap G(on->grad.data(), m, n);
            if (an->requires_grad) {
                detail::CMap B(bn->value.data(), k, n);
                detail::Map GA(grad_buf(*an).data(), m, k);
                GA.noalias() += G * B.transpose();
            }
            if (bn->requires_grad) {
                detail::CMap A(an->value.data(), m, k);
                detail::Map GB(grad_buf(*bn).data(), k, n);
                GB.noalias() += A.transpose() * G;
            }
        };
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank2(a, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out = detail::make_op({c, r}, {a.node_ptr()}, "transpose");
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data()[j * r + i] = a.data()[i * c + j];
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, r, c] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += on->grad[j * r + i];
        };
    }
    return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        fail(ErrorKind::Shape, "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor out = detail::make_op(std::move(shape), {a.node_ptr()}, "reshape");
    out.data() = a.data();
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
        };
    }
    return out;
}

// axis 0 stacks row blocks, axis 1 stacks column blocks; rank-2 only
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) fail(ErrorKind::Contract, "concat: no inputs");
    if (axis > 1) fail(ErrorKind::Shape, "concat: axis must be 0 or 1");
    for (const auto& p : parts) detail::require_rank2(p, "concat");
    const std::size_t fixed = parts[0].shape()[1 - axis];
    std::size_t total = 0;
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        if (p.shape()[1 - axis] != fixed)
            fail(ErrorKind::Shape, "concat: mismatched shapes " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        total += p.shape()[axis];
        parents.push_back(p.node_ptr());
    }
    Shape os = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    Tensor out = detail::make_op(std::move(os), std::move(parents), "concat");
    const std::size_t oc = out.shape()[1];
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t pr = p.shape()[0], pc = p.shape()[1];
        for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
                const std::size_t oi = axis == 0 ? i + off : i;
                const std::size_t oj = axis == 0 ? j : j + off;
                out.data()[oi * oc + oj] = p.data()[i * pc + j];
            }
        off += p.shape()[axis];
    }
    if (out.requires_grad()) {
        Node* on = out.node();
        std::vector<Node*> srcs;
        for (const auto& p : parts) srcs.push_back(p.node());
        out.node()->backprop = [on, srcs, axis, oc] {
            std::size_t off = 0;
            for (Node* s : srcs) {
                const std::size_t pr = s->shape[0], pc = s->shape[1];
                if (s->requires_grad) {
                    auto& gs = grad_buf(*s);
                    for (std::size_t i = 0; i < pr; ++i)
                        for (std::size_t j = 0; j < pc; ++j) {
                            const std::size_t oi = axis == 0 ? i + off : i;
                            const std::size_t oj = axis == 0 ? j : j + off;
                            gs[i * pc + j] += on->grad[oi * oc + oj];
                        }
                }
                off += s->shape[axis];
            }
        };
    }
    return out;
}

inline Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    detail::require_rank2(a, "slice_rows");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    if (start + count > r)
        fail(ErrorKind::Shape, "slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                   ") out of range for " + shape_str(a.shape()));
    Tensor out = detail::make_op({count, c}, {a.node_ptr()}, "slice_rows");
    std::copy(a.data().begin() + start * c, a.data().begin() + (start + count) * c, out.data().begin());
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, start, count, c] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < count * c; ++i) ga[start * c + i] += on->grad[i];
        };
    }
    return out;
}

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
    detail::require_rank2(a, "slice_cols");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    if (start + count > c)
        fail(ErrorKind::Shape, "slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                   ") out of range for " + shape_str(a.shape()));
    Tensor out = detail::make_op({r, count}, {a.node_ptr()}, "slice_cols");
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) out.data()[i * count + j] = a.data()[i * c + start + j];
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, r, c, start, count] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < count; ++j) ga[i * c + start + j] += on->grad[i * count + j];
        };
    }
    return out;
}

inline Tensor sum_all(const Tensor& a) {
    Tensor out = detail::make_op({1}, {a.node_ptr()}, "sum");
    double s = 0.0;
    for (double v : a.data()) s += v;
    out.data()[0] = s;
    detail::check_finite(out, "sum");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on] {
            auto& ga = grad_buf(*an);
            const double g = on->grad[0];
            for (auto& v : ga) v += g;
        };
    }
    return out;
}

inline Tensor mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    Tensor out = detail::make_op({1}, {a.node_ptr()}, "mean");
    double s = 0.0;
    for (double v : a.data()) s += v;
    out.data()[0] = s * inv;
    detail::check_finite(out, "mean");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, inv] {
            auto& ga = grad_buf(*an);
            const double g = on->grad[0] * inv;
            for (auto& v : ga) v += g;
        };
    }
    return out;
}

// column means: {r, c} -> {1, c}
inline Tensor mean_rows(const Tensor& a) {
    detail::require_rank2(a, "mean_rows");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out = detail::make_op({1, c}, {a.node_ptr()}, "mean_rows");
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < r; ++i) s += a.data()[i * c + j];
        out.data()[j] = s * inv;
    }
    detail::check_finite(out, "mean_rows");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, r, c, inv] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += on->grad[j] * inv;
        };
    }
    return out;
}

inline Tensor softmax_lastdim(const Tensor& a) {
    if (a.rank() == 0) fail(ErrorKind::Shape, "softmax: scalar input");
    const std::size_t d = a.shape().back();
    const std::size_t rows = a.numel() / d;
    Tensor out = detail::make_op(a.shape(), {a.node_ptr()}, "softmax");
    for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.data().data() + i * d;
        double* y = out.data().data() + i * d;
        double mx = x[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (y[j] = std::exp(x[j] - mx));
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < d; ++j) y[j] *= inv;
    }
    detail::check_finite(out, "softmax");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, rows, d] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < rows; ++i) {
                const double* y = on->value.data() + i * d;
                const double* g = on->grad.data() + i * d;
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += y[j] * (g[j] - dot);
            }
        };
    }
    return out;
}

// normalizes the last dim, then applies learned gain/bias (length = last dim)
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-8) {
    const std::size_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d)
        fail(ErrorKind::Shape, "layer_norm: gain/bias must have length " + std::to_string(d));
    const std::size_t rows = x.numel() / d;
    Tensor out = detail::make_op(x.shape(), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()}, "layer_norm");
    std::vector<double> xhat(x.numel()), inv_std(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* v = x.data().data() + i * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += v[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (v[j] - mu) * (v[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (v[j] - mu) * is;
            xhat[i * d + j] = h;
            out.data()[i * d + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    detail::check_finite(out, "layer_norm");
    if (out.requires_grad()) {
        Node* xn = x.node();
        Node* gn = gain.node();
        Node* bn = bias.node();
        Node* on = out.node();
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        auto istd = std::make_shared<std::vector<double>>(std::move(inv_std));
        out.node()->backprop = [xn, gn, bn, on, xh, istd, rows, d] {
            const auto& g = on->grad;
            if (gn->requires_grad) {
                auto& gg = grad_buf(*gn);
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * (*xh)[i * d + j];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(*bn);
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
            }
            if (xn->requires_grad) {
                auto& gx = grad_buf(*xn);
                const double invd = 1.0 / static_cast<double>(d);
                for (std::size_t i = 0; i < rows; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = g[i * d + j] * gn->value[j];
                        m1 += dh;
                        m2 += dh * (*xh)[i * d + j];
                    }
                    m1 *= invd;
                    m2 *= invd;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = g[i * d + j] * gn->value[j];
                        gx[i * d + j] += (*istd)[i] * (dh - m1 - (*xh)[i * d + j] * m2);
                    }
                }
            }
        };
    }
    return out;
}

// tanh approximation; the erf-exact form is kept in tests as an oracle
inline Tensor gelu(const Tensor& a) {
    Tensor out = detail::make_op(a.shape(), {a.node_ptr()}, "gelu");
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a.data()[i];
        out.data()[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
    }
    detail::check_finite(out, "gelu");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, n] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < n; ++i) {
                const double x = an->value[i];
                const double u = kC * (x + kA * x * x * x);
                const double t = std::tanh(u);
                const double du = kC * (1.0 + 3.0 * kA * x * x);
                ga[i] += on->grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
            }
        };
    }
    return out;
}

inline Tensor sin(const Tensor& a) {
    Tensor out = detail::make_op(a.shape(), {a.node_ptr()}, "sin");
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::sin(a.data()[i]);
    detail::check_finite(out, "sin");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, n] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < n; ++i) ga[i] += on->grad[i] * std::cos(an->value[i]);
        };
    }
    return out;
}

// Inverted dropout: train mode scales kept entries by 1/(1-p); eval mode is
// the identity (returns the input tensor, no rng consumed).
inline Tensor dropout(const Tensor& a, double p, bool train, Rng& rng) {
    if (p < 0.0 || p >= 1.0) fail(ErrorKind::Contract, "dropout: p must be in [0, 1)");
    if (!train || p == 0.0) return a;
    Tensor out = detail::make_op(a.shape(), {a.node_ptr()}, "dropout");
    const std::size_t n = a.numel();
    const double keep = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        (*mask)[i] = rng.uniform() < p ? 0.0 : keep;
        out.data()[i] = a.data()[i] * (*mask)[i];
    }
    detail::check_finite(out, "dropout");
    if (out.requires_grad()) {
        Node* an = a.node();
        Node* on = out.node();
        out.node()->backprop = [an, on, mask, n] {
            auto& ga = grad_buf(*an);
            for (std::size_t i = 0; i < n; ++i) ga[i] += on->grad[i] * (*mask)[i];
        };
    }
    return out;
}

inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& indices) {
    detail::require_rank2(table, "embedding_lookup");
    const std::size_t n = table.shape()[0], d = table.shape()[1];
    for (auto i : indices)
        if (i >= n) fail(ErrorKind::Shape, "embedding_lookup: index " + std::to_string(i) + " out of range " + std::to_string(n));
    Tensor out = detail::make_op({indices.size(), d}, {table.node_ptr()}, "embedding_lookup");
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy(table.data().begin() + indices[r] * d, table.data().begin() + (indices[r] + 1) * d,
                  out.data().begin() + r * d);
    if (out.requires_grad()) {
        Node* tn = table.node();
        Node* on = out.node();
        auto idx = std::make_shared<std::vector<std::size_t>>(indices);
        out.node()->backprop = [tn, on, idx, d] {
            auto& gt = grad_buf(*tn);
            for (std::size_t r = 0; r < idx->size(); ++r)
                for (std::size_t j = 0; j < d; ++j) gt[(*idx)[r] * d + j] += on->grad[r * d + j];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss, double seed = 1.0, GradSink* sink = nullptr) {
    if (!loss.defined()) fail(ErrorKind::Contract, "backward: undefined tensor");
    Node* root = loss.node();
    if (shape_numel(root->shape) != 1)
        fail(ErrorKind::Contract, "backward requires a scalar loss, got " + shape_str(root->shape));
    if (!root->requires_grad) return;

    // reverse post-order over the requires_grad subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> seen{root};
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    GradSink* prev = tl_grad_sink;
    tl_grad_sink = sink;
    grad_buf(*root)[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();
    tl_grad_sink = prev;

    if (!sink) {
        for (Node* n : order)
            if (n->is_leaf() && n->requires_grad) ++n->grad_version;
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW-style); applied as lr * wd * w
};

class Adam {
public:
    explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {}) : cfg_(cfg), params_(std::move(params)) {
        for (auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
        seen_versions_ = version_sum();
    }

    // Bias-corrected update; zeroes gradients afterwards.
    void step() {
        if (version_sum() == seen_versions_)
            fail(ErrorKind::Contract, "adam step called before any backward populated gradients");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (std::size_t p = 0; p < params_.size(); ++p) {
            auto& val = params_[p].data();
            auto& g = params_[p].grad();
            auto& m = m_[p];
            auto& v = v_[p];
            for (std::size_t i = 0; i < val.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                val[i] -= cfg_.lr * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps) + cfg_.weight_decay * val[i]);
            }
            params_[p].zero_grad();
        }
        seen_versions_ = version_sum();
    }

    std::size_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    std::uint64_t version_sum() const {
        std::uint64_t s = 0;
        for (const auto& p : params_) s += p.node()->grad_version;
        return s;
    }

    AdamConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t step_count_ = 0;
    std::uint64_t seen_versions_ = 0;
};

// ---------------------------------------------------------------------------
// finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<double> per_param_max;
};

// f must rebuild the forward pass from scratch on every call.
inline GradCheckReport gradcheck(const std::function<Tensor()>& f, std::span<Tensor> params, double fd_step = 1e-5) {
    for (auto& p : params) p.zero_grad();
    Tensor loss = f();
    if (loss.numel() != 1) fail(ErrorKind::Contract, "gradcheck: function must return a scalar");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    GradCheckReport rep;
    rep.per_param_max.assign(params.size(), 0.0);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& val = params[p].data();
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double keep = val[i];
            val[i] = keep + fd_step;
            const double up = f().item();
            val[i] = keep - fd_step;
            const double dn = f().item();
            val[i] = keep;
            const double fd = (up - dn) / (2.0 * fd_step);
            const double an = analytic[p][i];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
            rep.per_param_max[p] = std::max(rep.per_param_max[p], rel);
            rep.max_rel_error = std::max(rep.max_rel_error, rel);
        }
        params[p].zero_grad();
    }
    return rep;
}

// ---------------------------------------------------------------------------
// checkpoint format: "SEMF" magic, u32 version, u64 count, then per entry
// (u32 name length, name bytes, u32 rank, u64 dims..., f64 values), all
// little-endian. See docs/checkpoint_format.md.
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        const int c = is.get();
        if (c == EOF) fail(ErrorKind::Format, "checkpoint truncated");
        v |= static_cast<std::uint32_t>(c & 0xFF) << (8 * i);
    }
    return v;
}
inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        const int c = is.get();
        if (c == EOF) fail(ErrorKind::Format, "checkpoint truncated");
        v |= static_cast<std::uint64_t>(c & 0xFF) << (8 * i);
    }
    return v;
}
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    os.write("SEMF", 4);
    detail::put_u32(os, detail::kCheckpointVersion);
    detail::put_u64(os, entries.size());
    for (const auto& [name, t] : entries) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
        for (auto d : t.shape()) detail::put_u64(os, d);
        for (double v : t.data()) detail::put_f64(os, v);
    }
    if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

inline std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::Io, "cannot open " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::string(magic, 4) != "SEMF")
        fail(ErrorKind::Format, "bad checkpoint magic in " + path);
    const auto version = detail::get_u32(is);
    if (version != detail::kCheckpointVersion)
        fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
    const auto count = detail::get_u64(is);
    std::vector<std::pair<std::string, Tensor>> entries;
    entries.reserve(count);
    for (std::uint64_t e = 0; e < count; ++e) {
        const auto name_len = detail::get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (is.gcount() != static_cast<std::streamsize>(name_len)) fail(ErrorKind::Format, "checkpoint truncated");
        const auto rank = detail::get_u32(is);
        Shape shape(rank);
        for (auto& d : shape) d = detail::get_u64(is);
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = detail::get_f64(is);
        entries.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    }
    return entries;
}

}  // namespace semf::ad
