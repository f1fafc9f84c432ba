#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace talnet {

using Shape = std::vector<std::size_t>;

/// Storage aligned to Eigen's packet size.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

/// Raised by every op whose operands do not fit together. The message names
/// the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b)
      : std::invalid_argument(op + ": shape mismatch " + to_string(a) + " vs " + to_string(b)) {}
  ShapeError(const std::string& op, const std::string& what)
      : std::invalid_argument(op + ": " + what) {}
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

namespace detail {
// Fingerprint of the piecewise branches taken by kinked ops (relu, clamps,
// argmax, bilinear cell choice). Finite-difference checks use it to discard
// coordinates whose perturbation crosses a kink.
struct BranchTrace {
  bool active = false;
  std::uint64_t hash = 1469598103934665603ull;
};
inline BranchTrace& branch_trace() {
  thread_local BranchTrace trace;
  return trace;
}
inline void trace_branch(std::uint64_t value) {
  auto& t = branch_trace();
  if (t.active) t.hash = (t.hash ^ value) * 1099511628211ull;
}
}  // namespace detail

/// Disables graph recording for the lifetime of the guard (evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

/// Dense row-major array that records the operations producing it so that a
/// scalar result can be differentiated in reverse mode.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using node_type = Node<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<node_type>()) {
    check_extents(shape);
    node_->data.assign(numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, const std::vector<T>& values, bool requires_grad = false)
      : node_(std::make_shared<node_type>()) {
    check_extents(shape);
    if (values.size() != numel(shape)) {
      throw ShapeError("tensor", "data length " + std::to_string(values.size()) +
                                     " does not match shape " + to_string(shape));
    }
    node_->data.assign(values.begin(), values.end());
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  /// Result of an op. Parents and the backward closure are only recorded when
  /// grad mode is on and some parent needs a gradient.
  static Tensor make_result(Shape shape, Buffer<T> values, std::string op,
                            std::vector<Tensor> parents, std::function<void(node_type&)> backward) {
    check_extents(shape);
    if (values.size() != numel(shape)) {
      throw ShapeError("tensor", "data length " + std::to_string(values.size()) +
                                     " does not match shape " + to_string(shape));
    }
    Tensor out;
    out.node_ = std::make_shared<node_type>();
    out.node_->data = std::move(values);
    out.node_->shape = std::move(shape);
    out.node_->op = std::move(op);
    if (!grad_enabled()) return out;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (!needs) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward_fn = std::move(backward);
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }
  const std::string& op() const { return node_->op; }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T> values() const { return {node_->data.begin(), node_->data.end()}; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  T item() const {
    if (size() != 1) throw ShapeError("item", "tensor of shape " + to_string(shape()) + " is not a scalar");
    return node_->data[0];
  }

  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Detached copy sharing no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  node_type* node() const { return node_.get(); }
  const std::shared_ptr<node_type>& node_ptr() const { return node_; }

  /// Reverse pass from a scalar. Gradients are added to whatever the leaves
  /// already hold; callers zero them between optimizer steps.
  void backward() {
    if (size() != 1) throw ShapeError("backward", "root must be a scalar, got " + to_string(shape()));
    if (!node_->requires_grad) return;
    const auto order = topological_order(node_.get());
    for (node_type* n : order) n->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      node_type* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  /// Nodes reachable from `root` through requires_grad edges, parents first.
  static std::vector<node_type*> topological_order(node_type* root) {
    std::vector<node_type*> order;
    std::unordered_set<node_type*> visited;
    std::vector<std::pair<node_type*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        node_type* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

 private:
  static void check_extents(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor", "shape must have at least one axis");
    for (auto e : shape)
      if (e == 0) throw ShapeError("tensor", "zero extent in shape " + to_string(shape));
  }

  std::shared_ptr<node_type> node_;
};

/// Adds `g` into the gradient buffer of parent `i` when that parent wants it.
template <typename T>
inline T* grad_target(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

/// First node (parents before children) holding a non-finite value, or null.
template <typename T>
inline const Node<T>* first_non_finite(const Tensor<T>& root) {
  std::vector<const Node<T>*> order;
  std::unordered_set<const Node<T>*> visited;
  std::vector<std::pair<const Node<T>*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      const Node<T>* p = n->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (const Node<T>* n : order)
    for (T v : n->data)
      if (!std::isfinite(v)) return n;
  return nullptr;
}

}  // namespace talnet
