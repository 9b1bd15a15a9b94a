#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/tensor.hpp"

namespace sf {

/// A named trainable (or buffer) tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool is_trainable = true)
      : name(std::move(n)), value(std::move(v)), grad(value.dims()), trainable(is_trainable) {}

  void zero_grad() { grad.fill(T{0}); }
};

/// Handle to a node recorded on a Graph tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
/// tape backwards visits every node after all of its consumers.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, Var self)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  Var param(Parameter<T>& p) { return push(p.value, p.trainable, &p, {}); }

  // Records an op output. `fn` reads grad(self) and accumulates into the
  // gradients of the inputs that require them (see grad_of).
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || (v.valid() && nodes_[v.id].requires_grad);
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return v.valid() && nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  // Gradient buffer for `v`, allocated on first use; null when `v` does not
  // participate in differentiation.
  Tensor<T>* grad_of(Var v) {
    if (!requires_grad(v)) return nullptr;
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.dims());
    return &n.grad;
  }

  /// Propagates d(loss)/d(node) to every node and adds the leaf results into
  /// the bound Parameter::grad tensors. Calling twice accumulates twice.
  void backward(Var loss) {
    if (!loss.valid() || value(loss).size() != 1) {
      throw UsageError("backward: loss must be a scalar, got " + dims_string(value(loss).dims()));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    if (!requires_grad(loss)) return;
    grad_of(loss)->fill(T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, Var{i});
      if (n.param != nullptr && n.param->trainable) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool needs_grad, Parameter<T>* p, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), needs_grad, p, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

template <typename T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace sf
