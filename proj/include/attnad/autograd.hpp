#ifndef ATTNAD_AUTOGRAD_HPP
#define ATTNAD_AUTOGRAD_HPP

// Reverse-mode automatic differentiation over Tensor values.
//
// Every backward rule is written in terms of differentiable operations, so a
// gradient computed with `create_graph = true` is itself part of the graph and
// can be differentiated again. Grad-CAM attention used inside a training loss
// relies on this (the attention weights are gradients of the latent mean).

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "attnad/tensor.hpp"

namespace attnad {

template <typename T>
class Var;

template <typename T>
struct Node {
  using BackwardFn = std::function<void(const Var<T>& grad, const std::vector<bool>& need, std::vector<Var<T>>& out)>;

  Tensor<T> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Enables or disables graph recording for the current thread within a scope.
class GradMode {
 public:
  explicit GradMode(bool enabled) : previous_(detail::grad_mode()) { detail::grad_mode() = enabled; }
  ~GradMode() { detail::grad_mode() = previous_; }
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool previous_;
};

/// Handle to a graph node. A default-constructed Var is "undefined" and stands
/// for an absent (zero) gradient.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::size_t i) const { return node_->value.dim(i); }
  T item() const { return node_->value[0]; }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

  /// Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates the result node of an operation. The node is only attached to the
/// graph when recording is enabled and at least one input requires grad.
template <typename T>
Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, typename Node<T>::BackwardFn backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (const auto& v : inputs) n->parents.push_back(v.node());
      n->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// Gradients of sum_i <grad_outputs[i], outputs[i]> with respect to `inputs`.
///
/// An empty `grad_outputs` seeds every output with ones. Inputs that do not
/// influence the outputs receive zero tensors. With `create_graph` the
/// returned gradients are differentiable.
template <typename T>
std::vector<Var<T>> grad(std::span<const Var<T>> outputs, std::span<const Var<T>> grad_outputs,
                         std::span<const Var<T>> inputs, bool create_graph = false) {
  using NodePtr = Node<T>*;
  if (!grad_outputs.empty() && grad_outputs.size() != outputs.size())
    throw ShapeError("grad: grad_outputs count does not match outputs");

  std::unordered_map<NodePtr, std::size_t> index;
  std::vector<NodePtr> order;  // postorder: parents before children
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  for (const auto& out : outputs) {
    if (!out.requires_grad() || index.count(out.node().get())) continue;
    index.emplace(out.node().get(), static_cast<std::size_t>(-1));
    stack.emplace_back(out.node().get(), 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        NodePtr p = node->parents[next++].get();
        if (p->requires_grad && !index.count(p)) {
          index.emplace(p, static_cast<std::size_t>(-1));
          stack.emplace_back(p, 0);
        }
      } else {
        index[node] = order.size();
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::vector<char> is_input(order.size(), 0);
  for (const auto& in : inputs) {
    auto it = in.defined() ? index.find(in.node().get()) : index.end();
    if (it != index.end()) is_input[it->second] = 1;
  }
  std::vector<char> leads(order.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    bool l = is_input[i];
    for (const auto& p : order[i]->parents)
      if (p->requires_grad && leads[index.at(p.get())]) l = true;
    leads[i] = l;
  }

  GradMode mode(create_graph);
  std::vector<Var<T>> grads(order.size());
  auto accumulate = [&](std::size_t i, Var<T> g) {
    if (!g.defined()) return;
    grads[i] = grads[i].defined() ? add(grads[i], g) : std::move(g);
  };
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const auto& out = outputs[k];
    if (!out.requires_grad()) continue;
    Var<T> seed = grad_outputs.empty() ? Var<T>::constant(Tensor<T>(out.shape(), T(1))) : grad_outputs[k];
    require_same_shape(seed.shape(), out.shape(), "grad seed");
    accumulate(index.at(out.node().get()), seed);
  }

  std::vector<bool> need;
  std::vector<Var<T>> parent_grads;
  for (std::size_t i = order.size(); i-- > 0;) {
    NodePtr node = order[i];
    if (!leads[i] || !grads[i].defined() || !node->backward) continue;
    need.assign(node->parents.size(), false);
    bool any = false;
    for (std::size_t j = 0; j < node->parents.size(); ++j) {
      const auto& p = node->parents[j];
      need[j] = p->requires_grad && leads[index.at(p.get())];
      any = any || need[j];
    }
    if (!any) continue;
    parent_grads.assign(node->parents.size(), Var<T>());
    node->backward(grads[i], need, parent_grads);
    for (std::size_t j = 0; j < node->parents.size(); ++j)
      if (need[j]) accumulate(index.at(node->parents[j].get()), std::move(parent_grads[j]));
    if (!is_input[i]) grads[i] = Var<T>();
  }

  std::vector<Var<T>> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = in.defined() ? index.find(in.node().get()) : index.end();
    if (it != index.end() && grads[it->second].defined()) {
      result.push_back(grads[it->second]);
    } else {
      result.push_back(Var<T>::constant(Tensor<T>(in.shape(), T(0))));
    }
  }
  return result;
}

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs, bool create_graph = false) {
  std::vector<Var<T>> outs{output};
  return grad<T>(std::span<const Var<T>>(outs), std::span<const Var<T>>(), std::span<const Var<T>>(inputs),
                 create_graph);
}

}  // namespace attnad

#endif  // ATTNAD_AUTOGRAD_HPP
