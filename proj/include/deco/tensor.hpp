#pragma once

// Dense N-d tensor with a dynamically recorded reverse-mode graph.
//
// A Tensor is a cheap handle onto a shared node holding the row-major value
// buffer, the accumulated gradient and (for op results) a backward closure.
// Graphs are recorded only while gradients are enabled and at least one
// operand requires a gradient, so frozen parameters cost nothing to run.

#include <Eigen/Core>

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace deco {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Contract violation detected before any work was done (bad shape, bad key).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure while running (non-finite loss, I/O error, corrupt file).
class RuntimeAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename Scalar>
struct Node {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Vector value;
  Vector grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` of this node and accumulates into the parents.
  std::function<void(const Vector&)> backward_fn;

  void accumulate(const Vector& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  // Lazily sized gradient buffer for scatter-style backward kernels.
  Vector& grad_buffer() {
    if (grad.size() == 0) grad = Vector::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording in the current scope.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using NodeType = detail::Node<Scalar>;
  using NodePtr = std::shared_ptr<NodeType>;

  Tensor() = default;

  Tensor(Shape shape, Vector values, bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    for (Index extent : shape) {
      if (extent <= 0) throw ValidationError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
      throw ValidationError("tensor data length " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape) { return constant(shape, Scalar(0)); }
  static Tensor constant(const Shape& shape, Scalar v) {
    return Tensor(shape, Vector::Constant(shape_numel(shape), v));
  }
  static Tensor scalar(Scalar v) { return Tensor(Shape{1}, Vector::Constant(1, v)); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const { return node_->shape.at(static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)); }
  Index size() const { return node_->value.size(); }

  const Vector& values() const { return node_->value; }
  /// In-place access; reserved for optimizer updates and initialisation.
  Vector& mutable_values() { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }
  Scalar operator[](Index i) const { return node_->value[i]; }

  Scalar item() const {
    if (size() != 1) throw ValidationError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  /// Gradient, or zeros if none has been accumulated.
  Vector grad() const { return has_grad() ? node_->grad : Vector::Zero(size()); }
  void zero_grad() { node_->grad.resize(0); }

  Tensor detach() const { return Tensor(shape(), values()); }

  /// Reverse pass from this scalar; accumulates into every reachable leaf.
  void backward() const {
    if (size() != 1) throw ValidationError("backward() needs a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;
    std::vector<NodeType*> order;
    std::unordered_set<NodeType*> visited;
    std::vector<std::pair<NodeType*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        NodeType* p = n->parents[next++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->accumulate(Vector::Ones(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeType* n = *it;
      if (n->backward_fn && n->grad.size() != 0) n->backward_fn(n->grad);
    }
    // Interior gradients are no longer needed; leaves keep theirs.
    for (NodeType* n : order) {
      if (n->backward_fn) n->grad.resize(0);
    }
  }

  const NodePtr& node() const { return node_; }

  /// Builds an op result. The closure is recorded only when a parent needs it.
  static Tensor make_result(Shape shape, Vector values, std::vector<NodePtr> parents,
                            std::function<void(const Vector&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    bool needs = false;
    if (grad_enabled()) {
      for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Converts between scalar types, dropping the graph.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  return Tensor<To>(x.shape(), x.values().template cast<To>());
}

}  // namespace deco
