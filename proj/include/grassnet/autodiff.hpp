#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

#include "grassnet/tensor.hpp"

namespace grassnet::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// tape is alive and has not been cleared.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Append-only record of forward operations. Nodes are stored in creation
/// order, which is a topological order, so backward is a single reverse pass.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) { return push(std::move(value), false, {}, nullptr); }
    Var variable(Tensor value) { return push(std::move(value), true, {}, nullptr); }

    /// Records an op result. The backward closure runs only if some parent
    /// requires a gradient.
    Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
        bool needs = false;
        for (const Var& p : parents) {
            assert(p.tape == this && p.id < nodes_.size());
            needs = needs || nodes_[p.id].requires_grad;
        }
        return push(std::move(value), needs, parents, needs ? std::move(backward) : nullptr);
    }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Upstream gradient of node `id` during backward.
    const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

    /// Gradient buffer of a parent, allocated on first use; nullptr when the
    /// parent does not require a gradient.
    Tensor* grad_sink(Var v) {
        Node& node = nodes_[v.id];
        if (!node.requires_grad) return nullptr;
        if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.shape(), 0.0);
        return &node.grad;
    }

    /// Gradient with respect to a variable after backward(); zeros when the
    /// loss does not depend on it.
    Tensor grad(Var v) const {
        const Node& node = nodes_[v.id];
        return node.grad.empty() ? Tensor(node.value.shape(), 0.0) : node.grad;
    }

    void backward(Var loss) {
        require(loss.tape == this, "tape_mismatch", "loss recorded on a different tape");
        require(nodes_[loss.id].value.size() == 1, "not_scalar",
                "backward needs a scalar loss, got shape " + shape_str(nodes_[loss.id].value.shape()));
        for (Node& n : nodes_) n.grad = Tensor();
        if (!nodes_[loss.id].requires_grad) return;
        nodes_[loss.id].grad = Tensor(nodes_[loss.id].value.shape(), 1.0);
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            Node& node = nodes_[id];
            if (node.backward && !node.grad.empty()) node.backward(*this, id);
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::vector<std::size_t> parents;
        Backward backward;
    };

    Var push(Tensor value, bool requires_grad, std::initializer_list<Var> parents, Backward backward) {
        Node node;
        node.value = std::move(value);
        node.requires_grad = requires_grad;
        for (const Var& p : parents) node.parents.push_back(p.id);
        node.backward = std::move(backward);
        nodes_.push_back(std::move(node));
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {

inline Tensor* sink(Tape& t, Var v) { return t.grad_sink(v); }

/// Broadcast pattern of the right operand of add/mul.
enum class Bcast { same, row, col, scalar };

inline Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::same;
    if (b.size() == 1) return Bcast::scalar;
    if (a.rank() == 2 && b.rank() == 2) {
        if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::row;
        if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::col;
    }
    fail("shape_mismatch", std::string(op) + " " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline std::size_t bindex(Bcast kind, std::size_t flat, std::size_t cols) {
    switch (kind) {
        case Bcast::same: return flat;
        case Bcast::row: return flat % cols;
        case Bcast::col: return flat / cols;
        case Bcast::scalar: return 0;
    }
    return 0;
}

template <class F, class DF>
Var unary(Var a, F f, DF df_from_xy) {
    Tape& t = *a.tape;
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return t.record(std::move(y), {a}, [a, df_from_xy](Tape& tape, std::size_t self) {
        Tensor* ga = sink(tape, a);
        if (!ga) return;
        const Tensor& g = tape.upstream(self);
        const Tensor& x = tape.value(a);
        const Tensor& y = tape.value(self);
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df_from_xy(x[i], y[i]);
    });
}

}  // namespace detail

inline double softplus_value(double x) {
    if (x > 20.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var exp(Var a) {
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var softplus(Var a) {
    return detail::unary(a, softplus_value, [](double x, double) { return sigmoid_value(x); });
}

inline Var relu(Var a) {
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var a) {
    return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var scalar_mul(Var a, double c) {
    return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

/// a + b, where b may also be a 1xm row, an nx1 column or a single element.
inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    const auto kind = detail::broadcast_kind(x, y, "add");
    const std::size_t cols = x.cols();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[detail::bindex(kind, i, cols)];
    return t.record(std::move(out), {a, b}, [a, b, kind, cols](Tape& tape, std::size_t self) {
        const Tensor& g = tape.upstream(self);
        if (Tensor* ga = detail::sink(tape, a))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (Tensor* gb = detail::sink(tape, b))
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[detail::bindex(kind, i, cols)] += g[i];
    });
}

inline Var sub(Var a, Var b) { return add(a, scalar_mul(b, -1.0)); }

/// Elementwise product with the same broadcasting rules as add.
inline Var mul(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    const auto kind = detail::broadcast_kind(x, y, "mul");
    const std::size_t cols = x.cols();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[detail::bindex(kind, i, cols)];
    return t.record(std::move(out), {a, b}, [a, b, kind, cols](Tape& tape, std::size_t self) {
        const Tensor& g = tape.upstream(self);
        const Tensor& x = tape.value(a);
        const Tensor& y = tape.value(b);
        if (Tensor* ga = detail::sink(tape, a))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[detail::bindex(kind, i, cols)];
        if (Tensor* gb = detail::sink(tape, b))
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[detail::bindex(kind, i, cols)] += g[i] * x[i];
    });
}

/// a / s for a single-element s.
inline Var div_scalar(Var a, Var s) {
    Tape& t = *a.tape;
    require(s.value().size() == 1, "shape_mismatch", "div_scalar divisor must be a single element");
    const double d = s.value()[0];
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / d;
    return t.record(std::move(out), {a, s}, [a, s](Tape& tape, std::size_t self) {
        const Tensor& g = tape.upstream(self);
        const double d = tape.value(s)[0];
        if (Tensor* ga = detail::sink(tape, a))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / d;
        if (Tensor* gs = detail::sink(tape, s)) {
            const Tensor& y = tape.value(self);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * y[i];
            (*gs)[0] -= acc / d;
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
    Tape& t = *a.tape;
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return t.record(Tensor::scalar(s), {a}, [a](Tape& tape, std::size_t self) {
        Tensor* ga = detail::sink(tape, a);
        if (!ga) return;
        const double g = tape.upstream(self)[0];
        for (double& v : ga->values()) v += g;
    });
}

inline Var mean(Var a) {
    const auto n = static_cast<double>(a.value().size());
    require(n > 0, "empty", "mean of an empty tensor");
    return scalar_mul(sum(a), 1.0 / n);
}

/// max_i |a_i|. The gradient goes to the first maximizer only.
inline Var max_abs(Var a) {
    Tape& t = *a.tape;
    const Tensor& x = a.value();
    require(!x.empty(), "empty", "max_abs of an empty tensor");
    std::size_t arg = 0;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (std::abs(x[i]) > std::abs(x[arg])) arg = i;
    return t.record(Tensor::scalar(std::abs(x[arg])), {a}, [a, arg](Tape& tape, std::size_t self) {
        Tensor* ga = detail::sink(tape, a);
        if (!ga) return;
        const double xv = tape.value(a)[arg];
        const double sign = xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0);
        (*ga)[arg] += tape.upstream(self)[0] * sign;
    });
}

// ---------------------------------------------------------------------------
// Matrix ops

inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    Tensor out = grassnet::matmul(a.value(), b.value());
    return t.record(std::move(out), {a, b}, [a, b](Tape& tape, std::size_t self) {
        const Tensor& g = tape.upstream(self);
        const Tensor& x = tape.value(a);
        const Tensor& y = tape.value(b);
        const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
        if (Tensor* ga = detail::sink(tape, a)) {
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g(i, j) * y(p, j);
                    (*ga)(i, p) += acc;
                }
        }
        if (Tensor* gb = detail::sink(tape, b)) {
            // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = x(i, p);
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) (*gb)(p, j) += aip * g(i, j);
                }
        }
    });
}

inline Var concat_rows(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require(x.rank() == 2 && y.rank() == 2 && x.cols() == y.cols(), "shape_mismatch",
            "concat_rows " + shape_str(x.shape()) + " / " + shape_str(y.shape()));
    Tensor out = Tensor::matrix(x.rows() + y.rows(), x.cols());
    std::copy(x.values().begin(), x.values().end(), out.values().begin());
    std::copy(y.values().begin(), y.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(x.size()));
    const std::size_t split = x.size();
    return t.record(std::move(out), {a, b}, [a, b, split](Tape& tape, std::size_t self) {
        const Tensor& g = tape.upstream(self);
        if (Tensor* ga = detail::sink(tape, a))
            for (std::size_t i = 0; i < split; ++i) (*ga)[i] += g[i];
        if (Tensor* gb = detail::sink(tape, b))
            for (std::size_t i = split; i < g.size(); ++i) (*gb)[i - split] += g[i];
    });
}

inline Var reverse_rows(Var a) {
    Tape& t = *a.tape;
    const Tensor& x = a.value();
    const std::size_t n = x.rows(), c = x.size() / std::max<std::size_t>(n, 1);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(&x.storage()[(n - 1 - i) * c], c, &out.storage()[i * c]);
    return t.record(std::move(out), {a}, [a, n, c](Tape& tape, std::size_t self) {
        Tensor* ga = detail::sink(tape, a);
        if (!ga) return;
        const Tensor& g = tape.upstream(self);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) (*ga)[(n - 1 - i) * c + j] += g[i * c + j];
    });
}

inline Var gather_rows(Var a, std::span<const std::size_t> rows) {
    Tape& t = *a.tape;
    const Tensor& x = a.value();
    const std::size_t c = x.cols();
    Tensor out = Tensor::matrix(rows.size(), c);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r] < x.rows(), "index_out_of_range", "gather_rows index out of range");
        std::copy_n(&x.storage()[rows[r] * c], c, &out.storage()[r * c]);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return t.record(std::move(out), {a}, [a, idx = std::move(idx), c](Tape& tape, std::size_t self) {
        Tensor* ga = detail::sink(tape, a);
        if (!ga) return;
        const Tensor& g = tape.upstream(self);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < c; ++j) (*ga)[idx[r] * c + j] += g[r * c + j];
    });
}

inline Var row_softmax(Var a) {
    Tape& t = *a.tape;
    const Tensor& x = a.value();
    Tensor out(x.shape());
    const std::size_t c = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (out(i, j) = std::exp(x(i, j) - mx));
        for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
    }
    return t.record(std::move(out), {a}, [a, c](Tape& tape, std::size_t self) {
        Tensor* ga = detail::sink(tape, a);
        if (!ga) return;
        const Tensor& g = tape.upstream(self);
        const Tensor& y = tape.value(self);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < c; ++j) (*ga)(i, j) += y(i, j) * (g(i, j) - dot);
        }
    });
}

/// Mean over rows of -log softmax(logits)[label], max-subtracted.
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    Tape& t = *logits.tape;
    const Tensor& x = logits.value();
    require(!labels.empty(), "empty_labels", "cross entropy over an empty label set");
    require(labels.size() == x.rows(), "shape_mismatch", "one label per logits row required");
    const std::size_t c = x.cols();
    Tensor probs(x.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < c, "label_out_of_range",
                "label out of range");
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (probs(i, j) = std::exp(x(i, j) - mx));
        for (std::size_t j = 0; j < c; ++j) probs(i, j) /= z;
        total += (mx + std::log(z)) - x(i, static_cast<std::size_t>(labels[i]));
    }
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    std::vector<int> y(labels.begin(), labels.end());
    return t.record(Tensor::scalar(total * inv_n), {logits},
                    [logits, probs = std::move(probs), y = std::move(y), inv_n](Tape& tape, std::size_t self) {
                        Tensor* gl = detail::sink(tape, logits);
                        if (!gl) return;
                        const double g = tape.upstream(self)[0] * inv_n;
                        const std::size_t c = probs.cols();
                        for (std::size_t i = 0; i < probs.rows(); ++i)
                            for (std::size_t j = 0; j < c; ++j)
                                (*gl)(i, j) += g * (probs(i, j) - (static_cast<int>(j) == y[i] ? 1.0 : 0.0));
                    });
}

}  // namespace grassnet::ad
