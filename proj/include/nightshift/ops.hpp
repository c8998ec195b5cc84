#pragma once

// Differentiable primitives. Each op computes its value eagerly and, when a tape
// is active and some operand requires grad, records a backward rule on the tape.
// Shapes must match exactly; the only expansions are the explicit ones below
// (row bias, tiled rows, channel bias).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "nightshift/tensor.hpp"

namespace nightshift {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

template <typename Backward>
Tensor make_op(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> parents,
               Backward&& backward) {
    Tensor out(std::move(shape), std::move(data));
    Tape* tape = active_tape();
    if (tape == nullptr) return out;
    bool needed = false;
    for (const Tensor* p : parents) needed = needed || p->requires_grad();
    if (!needed) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Tensor* p : parents) node.parents.push_back(p->node());
    node.backward = std::forward<Backward>(backward);
    tape->record(out.node());
    return out;
}

template <typename Backward>
Tensor make_op_n(Shape shape, std::vector<double> data, std::span<const Tensor> parents, Backward&& backward) {
    Tensor out(std::move(shape), std::move(data));
    Tape* tape = active_tape();
    if (tape == nullptr) return out;
    bool needed = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (!needed) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Tensor& p : parents) node.parents.push_back(p.node());
    node.backward = std::forward<Backward>(backward);
    tape->record(out.node());
    return out;
}

/// Gradient buffer of parent `i`, or nullptr when that parent needs none.
inline double* parent_grad(Node& self, std::size_t i) {
    auto& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return p.grad.data();
}

inline const std::vector<double>& parent_data(const Node& self, std::size_t i) { return self.parents[i]->data; }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
    }
}

inline void require_rank(const Tensor& a, std::size_t rank, const char* op) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
    }
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, F&& f, DF&& df) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_op(x.shape(), std::move(out), {&x}, [df](Node& self) {
        double* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& xd = parent_data(self, 0);
        for (std::size_t i = 0; i < xd.size(); ++i) gx[i] += self.grad[i] * df(xd[i], self.data[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_op(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (double* g = detail::parent_grad(self, p)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_op(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
        if (double* ga = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        }
        if (double* gb = detail::parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_op(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
        const auto& ad = detail::parent_data(self, 0);
        const auto& bd = detail::parent_data(self, 1);
        if (double* ga = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bd[i];
        }
        if (double* gb = detail::parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * ad[i];
        }
    });
}

/// scale * x + shift
inline Tensor affine(const Tensor& x, double scale, double shift = 0.0) {
    return detail::unary(
        x, [=](double v) { return scale * v + shift; }, [=](double, double) { return scale; });
}

inline double sigmoid_scalar(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
    return detail::unary(
        x, [=](double v) { return v > 0 ? v : slope * v; }, [=](double v, double) { return v > 0 ? 1.0 : slope; });
}

/// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
}

inline constexpr double kLogClampMin = 1e-12;

/// log(clamp(x, 1e-12, 1)); gradient is zero where the clamp is active.
inline Tensor log_clamped(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return std::log(std::clamp(v, kLogClampMin, 1.0)); },
        [](double v, double) { return (v > kLogClampMin && v <= 1.0) ? 1.0 / v : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::make_op({1}, {s}, {&x}, [](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            const std::size_t n = self.parents[0]->data.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
        }
    });
}

inline Tensor mean(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    const double n = static_cast<double>(x.numel());
    return detail::make_op({1}, {s / n}, {&x}, [n](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            const std::size_t count = self.parents[0]->data.size();
            for (std::size_t i = 0; i < count; ++i) g[i] += self.grad[0] / n;
        }
    });
}

/// sum_i weights[i] * x[i], with constant weights.
inline Tensor weighted_sum(const Tensor& x, std::vector<double> weights) {
    if (weights.size() != x.numel()) {
        throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for tensor " +
                         shape_str(x.shape()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x[i];
    return detail::make_op({1}, {s}, {&x}, [w = std::move(weights)](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
        }
    });
}

/// Element-mean L1 distance: mean |a - b|.
inline Tensor l1_mean(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "l1_mean");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
    const double n = static_cast<double>(a.numel());
    return detail::make_op({1}, {s / n}, {&a, &b}, [n](detail::Node& self) {
        const auto& ad = detail::parent_data(self, 0);
        const auto& bd = detail::parent_data(self, 1);
        double* ga = detail::parent_grad(self, 0);
        double* gb = detail::parent_grad(self, 1);
        for (std::size_t i = 0; i < ad.size(); ++i) {
            const double d = ad[i] - bd[i];
            const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            if (ga) ga[i] += self.grad[0] * sgn / n;
            if (gb) gb[i] -= self.grad[0] * sgn / n;
        }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return detail::make_op(std::move(shape), std::move(out), {&x}, [](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

inline Tensor transpose(const Tensor& x) {
    detail::require_rank(x, 2, "transpose");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
    return detail::make_op({n, m}, std::move(out), {&x}, [m, n](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
        }
    });
}

/// Concatenate along the leading axis. Trailing dimensions must agree.
inline Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t rows = 0;
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        const Shape t(p.shape().begin() + 1, p.shape().end());
        if (t != tail) {
            throw ShapeError("concat_rows: " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()) +
                             " have different trailing dims");
        }
        rows += p.dim(0);
        offsets.push_back(out.size());
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    Shape shape{rows};
    shape.insert(shape.end(), tail.begin(), tail.end());
    return detail::make_op_n(std::move(shape), std::move(out), parts,
                             [offsets = std::move(offsets)](detail::Node& self) {
                                 for (std::size_t p = 0; p < offsets.size(); ++p) {
                                     double* g = detail::parent_grad(self, p);
                                     if (!g) continue;
                                     const std::size_t n = self.parents[p]->data.size();
                                     for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offsets[p] + i];
                                 }
                             });
}

inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
    return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

/// Rows [start, start+count) along the leading axis.
inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    if (x.rank() == 0 || count == 0 || start + count > x.dim(0)) {
        throw ShapeError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t row = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = count;
    std::vector<double> out(x.data().begin() + start * row, x.data().begin() + (start + count) * row);
    return detail::make_op(std::move(shape), std::move(out), {&x}, [off = start * row](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    std::vector<double> out(static_cast<std::size_t>(m * n));
    detail::MatMap(out.data(), m, n).noalias() =
        detail::ConstMatMap(a.data().data(), m, k) * detail::ConstMatMap(b.data().data(), k, n);
    return detail::make_op({a.dim(0), b.dim(1)}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
        detail::ConstMatMap dc(self.grad.data(), m, n);
        if (double* ga = detail::parent_grad(self, 0)) {
            detail::MatMap(ga, m, k).noalias() += dc * detail::ConstMatMap(detail::parent_data(self, 1).data(), k, n).transpose();
        }
        if (double* gb = detail::parent_grad(self, 1)) {
            detail::MatMap(gb, k, n).noalias() += detail::ConstMatMap(detail::parent_data(self, 0).data(), m, k).transpose() * dc;
        }
    });
}

/// x[m x n] + bias[n] on every row.
inline Tensor add_bias_rows(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw ShapeError("add_bias_rows: " + shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
    return detail::make_op(x.shape(), std::move(out), {&x, &bias}, [m, n](detail::Node& self) {
        if (double* gx = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < m * n; ++i) gx[i] += self.grad[i];
        }
        if (double* gb = detail::parent_grad(self, 1)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
        }
    });
}

/// x[(B*T) x n] + tile[T x n] repeated for each of the B row blocks.
inline Tensor add_tiled_rows(const Tensor& x, const Tensor& tile) {
    if (x.rank() != 2 || tile.rank() != 2 || tile.dim(1) != x.dim(1) || x.dim(0) % tile.dim(0) != 0) {
        throw ShapeError("add_tiled_rows: " + shape_str(x.shape()) + " with tile " + shape_str(tile.shape()));
    }
    const std::size_t block = tile.numel();
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tile[i % block];
    return detail::make_op(x.shape(), std::move(out), {&x, &tile}, [block](detail::Node& self) {
        if (double* gx = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
        }
        if (double* gt = detail::parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gt[i % block] += self.grad[i];
        }
    });
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
    detail::require_rank(x, 2, "softmax_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.data().data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += out[i * n + j] = std::exp(row[j] - mx);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    return detail::make_op(x.shape(), std::move(out), {&x}, [m, n](detail::Node& self) {
        double* g = detail::parent_grad(self, 0);
        if (!g) return;
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = self.data.data() + i * n;
            const double* dy = self.grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (dy[j] - dot);
        }
    });
}

/// Row-wise layer normalization with learned gain and bias.
inline Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    if (x.rank() != 2 || gain.shape() != Shape{x.dim(1)} || bias.shape() != Shape{x.dim(1)}) {
        throw ShapeError("layernorm_rows: " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                         " and bias " + shape_str(bias.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> normed(m * n), inv_std(m), out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.data().data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            normed[i * n + j] = (row[j] - mu) * inv_std[i];
            out[i * n + j] = normed[i * n + j] * gain[j] + bias[j];
        }
    }
    return detail::make_op(
        x.shape(), std::move(out), {&x, &gain, &bias},
        [m, n, normed = std::move(normed), inv_std = std::move(inv_std)](detail::Node& self) {
            const auto& gd = detail::parent_data(self, 1);
            double* gx = detail::parent_grad(self, 0);
            double* gg = detail::parent_grad(self, 1);
            double* gb = detail::parent_grad(self, 2);
            std::vector<double> dn(n);
            for (std::size_t i = 0; i < m; ++i) {
                const double* dy = self.grad.data() + i * n;
                const double* y = normed.data() + i * n;
                double mean_dn = 0.0, mean_dn_y = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (gg) gg[j] += dy[j] * y[j];
                    if (gb) gb[j] += dy[j];
                    dn[j] = dy[j] * gd[j];
                    mean_dn += dn[j];
                    mean_dn_y += dn[j] * y[j];
                }
                if (!gx) continue;
                mean_dn /= static_cast<double>(n);
                mean_dn_y /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += inv_std[i] * (dn[j] - mean_dn - y[j] * mean_dn_y);
            }
        });
}

/// Row-wise x / max(||x||_2, eps): unit rows, zero rows stay zero.
inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-8) {
    detail::require_rank(x, 2, "l2_normalize_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> norms(m), out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += x[i * n + j] * x[i * n + j];
        norms[i] = std::sqrt(s);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] / std::max(norms[i], eps);
    }
    return detail::make_op(x.shape(), std::move(out), {&x}, [m, n, eps, norms = std::move(norms)](detail::Node& self) {
        double* g = detail::parent_grad(self, 0);
        if (!g) return;
        const auto& xd = detail::parent_data(self, 0);
        for (std::size_t i = 0; i < m; ++i) {
            // below eps the denominator is the constant eps
            const bool clamped = norms[i] < eps;
            const double d = clamped ? eps : norms[i];
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * xd[i * n + j];
            const double coef = clamped ? 0.0 : dot / (d * d * d);
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] / d - xd[i * n + j] * coef;
        }
    });
}

/// Mean over consecutive blocks of `segment` rows: [(B*segment) x n] -> [B x n].
inline Tensor segment_mean_rows(const Tensor& x, std::size_t segment) {
    detail::require_rank(x, 2, "segment_mean_rows");
    if (segment == 0 || x.dim(0) % segment != 0) {
        throw ShapeError("segment_mean_rows: " + std::to_string(x.dim(0)) + " rows not divisible by " +
                         std::to_string(segment));
    }
    const std::size_t b = x.dim(0) / segment, n = x.dim(1);
    std::vector<double> out(b * n, 0.0);
    for (std::size_t r = 0; r < x.dim(0); ++r)
        for (std::size_t j = 0; j < n; ++j) out[(r / segment) * n + j] += x[r * n + j];
    for (auto& v : out) v /= static_cast<double>(segment);
    return detail::make_op({b, n}, std::move(out), {&x}, [segment, n](detail::Node& self) {
        double* g = detail::parent_grad(self, 0);
        if (!g) return;
        const std::size_t rows = self.parents[0]->shape[0];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[(r / segment) * n + j] / static_cast<double>(segment);
    });
}

/// Row lookup: table[V x D], ids -> [L x D].
inline Tensor embedding(const Tensor& table, std::vector<std::size_t> ids) {
    detail::require_rank(table, 2, "embedding");
    if (ids.empty()) throw ShapeError("embedding: empty id sequence");
    const std::size_t d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= table.dim(0)) {
            throw ContractError("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                                std::to_string(table.dim(0)) + " rows");
        }
        std::copy_n(table.data().begin() + ids[r] * d, d, out.begin() + r * d);
    }
    const std::size_t len = ids.size();
    return detail::make_op({len, d}, std::move(out), {&table}, [d, ids = std::move(ids)](detail::Node& self) {
        double* g = detail::parent_grad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) g[ids[r] * d + j] += self.grad[r * d + j];
    });
}

/// Scaled dot-product self-attention over `heads` column groups, independently for
/// each block of `seq_len` rows. q, k, v: [(B*seq_len) x D] -> [(B*seq_len) x D].
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len,
                                   std::size_t heads) {
    detail::require_rank(q, 2, "multi_head_attention");
    detail::require_same_shape(q, k, "multi_head_attention");
    detail::require_same_shape(q, v, "multi_head_attention");
    const std::size_t rows = q.dim(0), dm = q.dim(1);
    if (seq_len == 0 || rows % seq_len != 0 || heads == 0 || dm % heads != 0) {
        throw ShapeError("multi_head_attention: " + shape_str(q.shape()) + " incompatible with seq_len " +
                         std::to_string(seq_len) + " and " + std::to_string(heads) + " heads");
    }
    using Eigen::Index;
    using Eigen::OuterStride;
    const std::size_t batches = rows / seq_len, dh = dm / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto T = static_cast<Index>(seq_len), H = static_cast<Index>(dh);
    std::vector<double> out(rows * dm), probs(batches * heads * seq_len * seq_len);
    detail::RowMat scores(T, T);
    for (std::size_t b = 0; b < batches; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * seq_len * dm + h * dh;
            detail::ConstStridedMap qm(q.data().data() + off, T, H, OuterStride<>(dm));
            detail::ConstStridedMap km(k.data().data() + off, T, H, OuterStride<>(dm));
            detail::ConstStridedMap vm(v.data().data() + off, T, H, OuterStride<>(dm));
            scores.noalias() = scale * (qm * km.transpose());
            detail::MatMap p(probs.data() + (b * heads + h) * seq_len * seq_len, T, T);
            for (Index i = 0; i < T; ++i) {
                const double mx = scores.row(i).maxCoeff();
                p.row(i) = (scores.row(i).array() - mx).exp();
                p.row(i) /= p.row(i).sum();
            }
            detail::StridedMap(out.data() + off, T, H, OuterStride<>(dm)).noalias() = p * vm;
        }
    }
    return detail::make_op(
        q.shape(), std::move(out), {&q, &k, &v},
        [=, probs = std::move(probs)](detail::Node& self) {
            double* gq = detail::parent_grad(self, 0);
            double* gk = detail::parent_grad(self, 1);
            double* gv = detail::parent_grad(self, 2);
            const auto& qd = detail::parent_data(self, 0);
            const auto& kd = detail::parent_data(self, 1);
            const auto& vd = detail::parent_data(self, 2);
            detail::RowMat dp(T, T), ds(T, T);
            for (std::size_t b = 0; b < batches; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = b * seq_len * dm + h * dh;
                    detail::ConstMatMap p(probs.data() + (b * heads + h) * seq_len * seq_len, T, T);
                    detail::ConstStridedMap dout(self.grad.data() + off, T, H, OuterStride<>(dm));
                    detail::ConstStridedMap qm(qd.data() + off, T, H, OuterStride<>(dm));
                    detail::ConstStridedMap km(kd.data() + off, T, H, OuterStride<>(dm));
                    detail::ConstStridedMap vm(vd.data() + off, T, H, OuterStride<>(dm));
                    if (gv) detail::StridedMap(gv + off, T, H, OuterStride<>(dm)).noalias() += p.transpose() * dout;
                    if (!gq && !gk) continue;
                    dp.noalias() = dout * vm.transpose();
                    for (Index i = 0; i < T; ++i) {
                        const double dot = (dp.row(i).array() * p.row(i).array()).sum();
                        ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
                    }
                    if (gq) detail::StridedMap(gq + off, T, H, OuterStride<>(dm)).noalias() += scale * (ds * km);
                    if (gk) detail::StridedMap(gk + off, T, H, OuterStride<>(dm)).noalias() += scale * (ds.transpose() * qm);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvGeometry {
    std::size_t channels, height, width, kh, kw, stride, padding, out_h, out_w;
};

/// [C x H x W] -> columns [C*kh*kw x out_h*out_w].
inline void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* dst = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                            ix < static_cast<std::ptrdiff_t>(g.width);
                        dst[oy * g.out_w + ox] = inside ? x[(c * g.height + iy) * g.width + ix] : 0.0;
                    }
                }
            }
}

/// Adjoint of im2col: accumulate columns back into [C x H x W].
inline void col2im(const double* cols, const ConvGeometry& g, double* x) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* src = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        x[(c * g.height + iy) * g.width + ix] += src[oy * g.out_w + ox];
                    }
                }
            }
}

}  // namespace detail

/// Cross-correlation with zero padding.
/// input [C_in x H x W], kernels [C_out x C_in x kH x kW] -> [C_out x H' x W'].
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride = 1, std::size_t padding = 0) {
    if (input.rank() != 3 || kernels.rank() != 4 || kernels.dim(1) != input.dim(0) || stride == 0) {
        throw ShapeError("conv2d: input " + shape_str(input.shape()) + " incompatible with kernels " +
                         shape_str(kernels.shape()));
    }
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                         shape_str(input.shape()) + " (padding " + std::to_string(padding) + ")");
    }
    const detail::ConvGeometry g{cin, h, w, kh, kw, stride, padding, (h + 2 * padding - kh) / stride + 1,
                                 (w + 2 * padding - kw) / stride + 1};
    const auto ckk = static_cast<Eigen::Index>(cin * kh * kw);
    const auto plane = static_cast<Eigen::Index>(g.out_h * g.out_w);
    const auto co = static_cast<Eigen::Index>(cout);
    std::vector<double> cols(static_cast<std::size_t>(ckk * plane));
    detail::im2col(input.data().data(), g, cols.data());
    std::vector<double> out(static_cast<std::size_t>(co * plane));
    detail::MatMap(out.data(), co, plane).noalias() =
        detail::ConstMatMap(kernels.data().data(), co, ckk) * detail::ConstMatMap(cols.data(), ckk, plane);
    return detail::make_op({cout, g.out_h, g.out_w}, std::move(out), {&input, &kernels},
                           [g, ckk, plane, co](detail::Node& self) {
                               detail::ConstMatMap dout(self.grad.data(), co, plane);
                               double* gin = detail::parent_grad(self, 0);
                               double* gk = detail::parent_grad(self, 1);
                               if (gk) {
                                   std::vector<double> cols(static_cast<std::size_t>(ckk * plane));
                                   detail::im2col(detail::parent_data(self, 0).data(), g, cols.data());
                                   detail::MatMap(gk, co, ckk).noalias() +=
                                       dout * detail::ConstMatMap(cols.data(), ckk, plane).transpose();
                               }
                               if (gin) {
                                   std::vector<double> dcols(static_cast<std::size_t>(ckk * plane));
                                   detail::MatMap(dcols.data(), ckk, plane).noalias() =
                                       detail::ConstMatMap(detail::parent_data(self, 1).data(), co, ckk).transpose() * dout;
                                   detail::col2im(dcols.data(), g, gin);
                               }
                           });
}

/// Transposed convolution (adjoint of conv2d in its input).
/// input [C_in x H x W], kernels [C_in x C_out x kH x kW] -> [C_out x H' x W'],
/// H' = (H - 1) * stride - 2 * padding + kH.
inline Tensor conv_transpose2d(const Tensor& input, const Tensor& kernels, std::size_t stride = 1,
                               std::size_t padding = 0) {
    if (input.rank() != 3 || kernels.rank() != 4 || kernels.dim(0) != input.dim(0) || stride == 0) {
        throw ShapeError("conv_transpose2d: input " + shape_str(input.shape()) + " incompatible with kernels " +
                         shape_str(kernels.shape()));
    }
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
    const auto full_h = static_cast<std::ptrdiff_t>((h - 1) * stride + kh) - 2 * static_cast<std::ptrdiff_t>(padding);
    const auto full_w = static_cast<std::ptrdiff_t>((w - 1) * stride + kw) - 2 * static_cast<std::ptrdiff_t>(padding);
    if (full_h <= 0 || full_w <= 0) {
        throw ShapeError("conv_transpose2d: padding " + std::to_string(padding) + " leaves empty output for " +
                         shape_str(input.shape()));
    }
    // geometry of the forward conv whose input-adjoint this is
    const detail::ConvGeometry g{cout, static_cast<std::size_t>(full_h), static_cast<std::size_t>(full_w), kh, kw,
                                 stride, padding, h, w};
    const auto ci = static_cast<Eigen::Index>(cin);
    const auto okk = static_cast<Eigen::Index>(cout * kh * kw);
    const auto plane = static_cast<Eigen::Index>(h * w);
    std::vector<double> cols(static_cast<std::size_t>(okk * plane));
    detail::MatMap(cols.data(), okk, plane).noalias() =
        detail::ConstMatMap(kernels.data().data(), ci, okk).transpose() * detail::ConstMatMap(input.data().data(), ci, plane);
    std::vector<double> out(cout * g.height * g.width, 0.0);
    detail::col2im(cols.data(), g, out.data());
    return detail::make_op({cout, g.height, g.width}, std::move(out), {&input, &kernels},
                           [g, ci, okk, plane](detail::Node& self) {
                               double* gin = detail::parent_grad(self, 0);
                               double* gk = detail::parent_grad(self, 1);
                               std::vector<double> dcols(static_cast<std::size_t>(okk * plane));
                               detail::im2col(self.grad.data(), g, dcols.data());
                               detail::ConstMatMap dc(dcols.data(), okk, plane);
                               if (gin) {
                                   detail::MatMap(gin, ci, plane).noalias() +=
                                       detail::ConstMatMap(detail::parent_data(self, 1).data(), ci, okk) * dc;
                               }
                               if (gk) {
                                   detail::MatMap(gk, ci, okk).noalias() +=
                                       detail::ConstMatMap(detail::parent_data(self, 0).data(), ci, plane) * dc.transpose();
                               }
                           });
}

/// x[C x H x W] + bias[C] per channel.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 3 || bias.shape() != Shape{x.dim(0)}) {
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
    }
    const std::size_t plane = x.dim(1) * x.dim(2);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i / plane];
    return detail::make_op(x.shape(), std::move(out), {&x, &bias}, [plane](detail::Node& self) {
        if (double* gx = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
        }
        if (double* gb = detail::parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i / plane] += self.grad[i];
        }
    });
}

/// Per-channel normalization over spatial positions, no affine parameters.
inline Tensor instance_norm(const Tensor& x, double eps = 1e-5) {
    detail::require_rank(x, 3, "instance_norm");
    const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
    std::vector<double> out(x.numel()), inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = x.data().data() + ch * plane;
        double mu = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mu += src[i];
        mu /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= static_cast<double>(plane);
        inv_std[ch] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = (src[i] - mu) * inv_std[ch];
    }
    return detail::make_op(x.shape(), std::move(out), {&x}, [c, plane, inv_std = std::move(inv_std)](detail::Node& self) {
        double* g = detail::parent_grad(self, 0);
        if (!g) return;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* y = self.data.data() + ch * plane;
            const double* dy = self.grad.data() + ch * plane;
            double mean_dy = 0.0, mean_dy_y = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                mean_dy += dy[i];
                mean_dy_y += dy[i] * y[i];
            }
            mean_dy /= static_cast<double>(plane);
            mean_dy_y /= static_cast<double>(plane);
            for (std::size_t i = 0; i < plane; ++i) g[ch * plane + i] += inv_std[ch] * (dy[i] - mean_dy - y[i] * mean_dy_y);
        }
    });
}

/// Non-overlapping p x p patches: [C x H x W] -> [(H/p)*(W/p) x C*p*p], patches in
/// raster order, features ordered (channel, row, col).
inline Tensor patchify(const Tensor& image, std::size_t patch) {
    if (image.rank() != 3 || patch == 0 || image.dim(1) % patch != 0 || image.dim(2) % patch != 0) {
        throw ShapeError("patchify: image " + shape_str(image.shape()) + " not divisible into " +
                         std::to_string(patch) + "px patches");
    }
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const std::size_t ph = h / patch, pw = w / patch, feat = c * patch * patch;
    std::vector<std::size_t> index(ph * pw * feat);
    for (std::size_t py = 0; py < ph; ++py)
        for (std::size_t px = 0; px < pw; ++px)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t dy = 0; dy < patch; ++dy)
                    for (std::size_t dx = 0; dx < patch; ++dx) {
                        const std::size_t row = py * pw + px;
                        const std::size_t col = (ch * patch + dy) * patch + dx;
                        index[row * feat + col] = (ch * h + py * patch + dy) * w + px * patch + dx;
                    }
    std::vector<double> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = image[index[i]];
    return detail::make_op({ph * pw, feat}, std::move(out), {&image}, [index = std::move(index)](detail::Node& self) {
        if (double* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
        }
    });
}

}  // namespace nightshift
