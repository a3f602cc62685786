// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "s2kg/error.hpp"
#include "s2kg/nn/tensor.hpp"

namespace s2kg::nn {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

// Named parameters with paired gradient buffers, in registration order.
template <class T>
class ParameterSet {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw Error("duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    Tensor<T> grad(value.rows(), value.cols());
    params_.push_back(Parameter<T>{name, std::move(value), std::move(grad)});
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw NotFoundError("no parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw NotFoundError("no parameter '" + name + "'");
    return params_[it->second];
  }

  std::vector<Parameter<T>>& all() noexcept { return params_; }
  const std::vector<Parameter<T>>& all() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  // Copies values of every parameter in `other` whose name starts with
  // `prefix` and exists here with the same shape.
  std::size_t copy_values_from(const ParameterSet& other, const std::string& prefix) {
    std::size_t n = 0;
    for (const auto& p : other.params_) {
      if (p.name.rfind(prefix, 0) != 0 || !contains(p.name)) continue;
      auto& mine = at(p.name);
      if (mine.value.shape() != p.value.shape()) {
        throw ShapeError("parameter '" + p.name + "' shape mismatch on copy");
      }
      mine.value = p.value;
      ++n;
    }
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

// Reverse-mode tape over 2-D tensors. Nodes are recorded in creation order,
// which is a topological order, and backward() replays them in reverse.
template <class T>
class Graph {
 public:
  struct Var {
    std::uint32_t id = 0;
  };

  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor<T> t) { return push(t.rows(), t.cols(), std::move(t.values()), false, {}); }

  // A leaf that receives a gradient; used for inputs under gradient checks.
  Var variable(Tensor<T> t) { return push(t.rows(), t.cols(), std::move(t.values()), true, {}); }

  // Trainable parameter: value and gradient are views into `p`.
  Var parameter(Parameter<T>& p) {
    Node n;
    n.rows = p.value.rows();
    n.cols = p.value.cols();
    n.value = p.value.data();
    n.grad = p.grad.data();
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  // Frozen parameter for inference.
  Var parameter(const Parameter<T>& p) {
    Node n;
    n.rows = p.value.rows();
    n.cols = p.value.cols();
    n.value = p.value.data();
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  // Records an op result. `backward` reads grad(result) and accumulates into
  // the grads of its inputs.
  Var push(std::size_t rows, std::size_t cols, std::vector<T> value, bool requires_grad,
           std::function<void()> backward) {
    if (value.size() != rows * cols) throw ShapeError("graph node value size mismatch");
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.own_value = std::move(value);
    n.value = n.own_value.data();
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::size_t rows(Var v) const { return nodes_[v.id].rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].cols; }
  std::size_t size(Var v) const { return nodes_[v.id].rows * nodes_[v.id].cols; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  const T* value(Var v) const { return nodes_[v.id].value; }
  std::span<const T> values(Var v) const { return {nodes_[v.id].value, size(v)}; }
  Tensor<T> to_tensor(Var v) const {
    return Tensor<T>(rows(v), cols(v), std::vector<T>(value(v), value(v) + size(v)));
  }

  // Gradient buffer of a node, allocated (zeroed) on first use.
  T* grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad == nullptr) {
      n.own_grad.assign(n.rows * n.cols, T{0});
      n.grad = n.own_grad.data();
    }
    return n.grad;
  }
  bool has_grad(Var v) const { return nodes_[v.id].grad != nullptr; }
  std::span<const T> grads(Var v) { return {grad(v), size(v)}; }

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var loss) {
    if (size(loss) != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_string(rows(loss), cols(loss)));
    if (!requires_grad(loss)) return;
    grad(loss)[0] += T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.grad != nullptr && n.backward) n.backward();
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> own_value;
    const T* value = nullptr;
    std::vector<T> own_grad;
    T* grad = nullptr;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  // Node buffers are heap vectors, so moving a Node (on reallocation of
  // nodes_) keeps value/grad pointers valid.
  std::vector<Node> nodes_;
};

}  // namespace s2kg::nn
