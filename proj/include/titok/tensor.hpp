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
#include <unordered_set>
#include <utility>
#include <vector>

#include "titok/error.hpp"

namespace titok {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
class Tensor;

namespace detail {

inline thread_local bool grad_mode_enabled = true;

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
void check_finite(const char* op, const std::vector<T>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(op) + ": non-finite value at element " + std::to_string(i) +
                         " of forward output");
    }
  }
}

}  // namespace detail

/// Scoped switch that stops operations from recording a compute graph.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_enabled; }

/// Dense row-major tensor with reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node,
/// use clone() for an independent leaf. Every operation result is checked for
/// NaN/Inf and raises NumericError naming the operation.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::Node<T>>()) {
    node_->value.assign(titok::numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
    if (titok::numel(shape) != values.size()) {
      throw DimensionError("Tensor: shape " + to_string(shape) + " needs " +
                           std::to_string(titok::numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    detail::check_finite("Tensor", values);
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const { return node().value.size(); }
  const char* op_name() const { return node().op; }

  std::span<const T> values() const { return node().value; }
  /// Writable view; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_values() { return node().value; }
  std::vector<T> vector() const { return node().value; }

  T item() const {
    if (numel() != 1) throw DimensionError("item: tensor has shape " + to_string(shape()));
    return node().value[0];
  }
  T at(std::size_t i) const { return node().value.at(i); }
  T at(std::size_t r, std::size_t c) const { return node().value.at(r * shape().back() + c); }

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node().requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node().grad.empty(); }
  /// Accumulated gradient; all zeros if nothing has flowed in yet.
  std::vector<T> grad() const {
    return has_grad() ? node().grad : std::vector<T>(numel(), T(0));
  }
  std::span<const T> grad_view() const { return node().grad; }
  void zero_grad() { node().grad.clear(); }

  /// Independent leaf holding a copy of the values.
  Tensor clone() const {
    Tensor t(shape(), node().value);
    t.node_->requires_grad = requires_grad();
    return t;
  }

  /// Same values, cut from the graph, never requires grad.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = shape();
    t.node_->value = node().value;
    t.node_->op = "detach";
    return t;
  }

  /// Reverse-mode sweep from this scalar. Gradients are summed into every
  /// reachable node that requires grad; the graph is released afterwards.
  void backward() const {
    if (numel() != 1) {
      throw ContractError("backward: root must be a scalar, got shape " + to_string(shape()));
    }
    if (!requires_grad()) return;
    std::vector<detail::Node<T>*> order;
    std::unordered_set<detail::Node<T>*> seen;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        detail::Node<T>* child = n->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    for (detail::Node<T>* n : order) {
      n->backward = nullptr;
      n->inputs.clear();
    }
  }

  const NodePtr& node_ptr() const { return node_; }

 private:
  detail::Node<T>& node() const {
    if (!node_) throw ContractError("Tensor: use of an undefined tensor");
    return *node_;
  }

  NodePtr node_;
};

namespace detail {

/// Builds an operation result. The graph edge is only recorded when grad mode
/// is on and at least one input requires grad.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = false;
  if (grad_mode_enabled) {
    for (const Tensor<T>* in : inputs) track = track || (in->defined() && in->requires_grad());
  }
  if (track) {
    node->requires_grad = true;
    for (const Tensor<T>* in : inputs) {
      if (in->defined()) node->inputs.push_back(in->node_ptr());
    }
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

/// Gradient buffer of an input, or nullptr if it does not take gradients.
template <class T>
std::vector<T>* grad_of(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return &t.node_ptr()->grad_buffer();
}

}  // namespace detail

}  // namespace titok
