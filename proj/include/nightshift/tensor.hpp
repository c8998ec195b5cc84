#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nightshift/errors.hpp"

namespace nightshift {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents that require grad.
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient.
///
/// Copies share the underlying storage, the same way a graph handle would;
/// use `clone()` for an independent copy.
class Tensor {
   public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto d : shape) {
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
        }
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                             " values");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    static Tensor from_node(std::shared_ptr<detail::Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const noexcept { return node_ != nullptr; }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    /// Direct write access, for construction and optimizer updates only.
    std::span<double> mutable_data() { return node_->data; }

    double operator[](std::size_t i) const { return node_->data[i]; }

    double item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// Same values, no history, no gradient.
    Tensor detach() const { return Tensor(node_->shape, node_->data, false); }
    Tensor clone() const { return detach(); }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

   private:
    std::shared_ptr<detail::Node> node_;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Ordered record of differentiable operations executed while the tape is active.
class Tape {
   public:
    void record(std::shared_ptr<detail::Node> node) { nodes_.push_back(std::move(node)); }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool empty() const noexcept { return nodes_.empty(); }
    void clear() { nodes_.clear(); }
    const std::vector<std::shared_ptr<detail::Node>>& nodes() const noexcept { return nodes_; }

   private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
};

inline Tape*& active_tape() {
    thread_local Tape* tape = nullptr;
    return tape;
}

/// Activates `tape` for the current thread. Without an active tape, operations
/// compute values only and record nothing.
class TapeScope {
   public:
    explicit TapeScope(Tape& tape) : previous_(active_tape()) { active_tape() = &tape; }
    ~TapeScope() { active_tape() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

   private:
    Tape* previous_;
};

/// Suspends recording on the current thread.
class NoGradScope {
   public:
    NoGradScope() : previous_(active_tape()) { active_tape() = nullptr; }
    ~NoGradScope() { active_tape() = previous_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

   private:
    Tape* previous_;
};

/// Reverse pass: every leaf reachable from `loss` that requires grad receives
/// d loss / d leaf, added to whatever it already holds. Consumes the tape.
inline void backward(const Tensor& loss, Tape& tape) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        tape.clear();
        return;
    }
    // intermediate grads from an earlier pass over a reused node must not leak in
    for (const auto& node : tape.nodes()) {
        if (node.get() != loss.node().get()) node->grad.clear();
    }
    auto& root = *loss.node();
    root.ensure_grad();
    root.grad[0] += 1.0;
    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        auto& node = **it;
        if (node.grad.empty() || !node.backward) continue;
        node.backward(node);
    }
    for (const auto& node : nodes) {
        // release graph edges so activations can be freed
        node->parents.clear();
        node->backward = nullptr;
    }
    tape.clear();
}

inline void zero_grads(std::span<NamedTensor> params) {
    for (auto& p : params) p.tensor.zero_grad();
}

inline void set_trainable(std::span<NamedTensor> params, bool trainable) {
    for (auto& p : params) {
        p.tensor.set_requires_grad(trainable);
        if (!trainable) p.tensor.zero_grad();
    }
}

}  // namespace nightshift
