// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over dense matrices.
//
// Nodes are appended in creation order, so the tape is already a topological
// order: every input id is strictly smaller than the id of the node that
// consumes it. backward() walks the tape once from the loss down to node 0.

#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scalecomm/numcore/tensor.hpp"

namespace scalecomm::num {

/// Named trainable tensor with a lazily allocated gradient accumulator.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value) : name_(std::move(name)), value_(std::move(value)) {}

  const std::string& name() const { return name_; }
  const Tensor& value() const { return value_; }
  Tensor& value() { return value_; }

  bool has_grad() const { return has_grad_; }
  const Matrix& grad() const { return grad_; }

  void accumulate(const Matrix& g) {
    require_same_shape(value_.mat(), g, ("grad of " + name_).c_str());
    if (!has_grad_) {
      grad_ = g;
      has_grad_ = true;
    } else {
      grad_ += g;
    }
  }

  void zero_grad() {
    has_grad_ = false;
    grad_.resize(0, 0);
  }

 private:
  std::string name_;
  Tensor value_;
  Matrix grad_;
  bool has_grad_ = false;
};

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : g_(g), id_(id) {}

  Graph* graph() const { return g_; }
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }

  inline const Matrix& value() const;
  inline bool requires_grad() const;
  inline bool has_grad() const;
  inline const Matrix& grad() const;

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double item() const {
    if (value().size() != 1) throw StructuralError("item() on non-scalar node");
    return value()(0, 0);
  }
  Tensor tensor() const { return Tensor(value()); }

 private:
  Graph* g_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  /// Propagates the node's output gradient into its inputs via Graph::accumulate.
  using BackwardFn = std::function<void(Graph&, int self, const Matrix& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(const Tensor& t) { return push(t.mat(), {}, nullptr, false, nullptr); }
  Var constant(Matrix m) { return push(std::move(m), {}, nullptr, false, nullptr); }

  /// Leaf that accumulates its gradient into `p` on backward.
  Var param(Parameter& p) { return push(p.value().mat(), {}, nullptr, true, &p); }

  /// Free leaf that requires a gradient (readable via Var::grad after backward).
  Var input(const Tensor& t) { return push(t.mat(), {}, nullptr, true, nullptr); }

  /// Detached copy of a node's value.
  Var detach(Var v) { return constant(Matrix(v.value())); }

  /// Appends an operator node. `fn` is dropped when no input requires a gradient.
  Var record(Matrix value, std::vector<int> inputs, BackwardFn fn) {
    bool needs = false;
    for (int in : inputs) {
      if (in < 0 || in >= static_cast<int>(nodes_.size())) {
        throw StructuralError("graph: input id " + std::to_string(in) +
                              " does not precede its consumer (cycle or foreign node)");
      }
      needs = needs || nodes_[static_cast<std::size_t>(in)].requires_grad;
    }
    return push(std::move(value), std::move(inputs), needs ? std::move(fn) : nullptr, needs,
                nullptr);
  }

  const Matrix& value(int id) const { return node(id).value; }
  bool requires_grad(int id) const { return node(id).requires_grad; }
  bool has_grad(int id) const { return node(id).has_grad; }
  const Matrix& grad(int id) const { return node(id).grad; }

  /// Adds `g` into the gradient of node `id`; no-op for nodes without requires_grad.
  void accumulate(int id, const Matrix& g) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    require_same_shape(n.value, g, "graph: gradient");
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a scalar loss. Each node is visited at most once.
  /// Returns the number of nodes visited.
  std::size_t backward(Var loss) {
    if (loss.graph() != this) throw StructuralError("backward: loss belongs to another graph");
    Node& root = node(loss.id());
    if (root.value.size() != 1) throw StructuralError("backward: loss must be scalar");
    if (!root.requires_grad) return 0;
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      n.grad.resize(0, 0);
      n.has_grad = false;
    }
    root.grad = Matrix::Ones(1, 1);
    root.has_grad = true;
    std::size_t visited = 0;
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || !n.has_grad) continue;
      ++visited;
      for (int in : n.inputs) {
        if (in >= id) throw StructuralError("backward: cycle detected at node " + std::to_string(id));
      }
      if (n.param != nullptr) {
        n.param->accumulate(n.grad);
      } else if (n.backward) {
        n.backward(*this, id, n.grad);
      }
    }
    return visited;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var push(Matrix value, std::vector<int> inputs, BackwardFn fn, bool requires_grad,
           Parameter* p) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    n.param = p;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Node& node(int id) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw StructuralError("graph: bad node id");
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw StructuralError("graph: bad node id");
    return nodes_[static_cast<std::size_t>(id)];
  }

  // deque keeps references to node values stable while new nodes are appended.
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return g_->value(id_); }
inline bool Var::requires_grad() const { return g_->requires_grad(id_); }
inline bool Var::has_grad() const { return g_->has_grad(id_); }
inline const Matrix& Var::grad() const { return g_->grad(id_); }

}  // namespace scalecomm::num
