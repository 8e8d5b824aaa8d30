#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "debias/autodiff/tensor.hpp"

namespace debias::ad {

enum class OpKind {
  Constant,
  Leaf,
  Param,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Tanh,
  Gelu,
  Exp,
  Log,
  Abs,
  Square,
  Softmax,
  LogSoftmax,
  LayerNorm,
  Embedding,
  Sum,
  Mean,
  MeanRows,
  ConcatCols,
  SliceCols,
  SliceRows,
  CausalScores,
  Gather,
};

std::string_view op_name(OpKind kind) noexcept;

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor& value() const;
  /// Gradient after Graph::backward; empty span for nodes that need none.
  std::span<const double> grad() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of recorded ops. Nodes are appended in evaluation order, so the tape is
/// already topologically sorted and backward is a single reverse sweep.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Non-differentiable input owned by the graph.
  Var constant(Tensor value);
  /// Non-differentiable input referencing external storage (must outlive the graph).
  Var constant_ref(const Tensor& value);
  /// Differentiable leaf owned by the graph.
  Var leaf(Tensor value);
  /// Differentiable leaf bound to an external parameter. backward() adds the
  /// node gradient into `parameter.grad()`, allocating it if needed.
  Var param(Tensor& parameter);

  /// Reverse sweep from a scalar loss. Throws ShapeError for non-scalar losses
  /// and NonFiniteError naming the node whose backward produced a NaN/Inf.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  const Tensor& value(std::size_t id) const;
  std::span<const double> grad(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  // --- used by op implementations -------------------------------------------
  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);
  std::span<const double> out_grad(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient accumulator of an input; empty when that input needs no gradient.
  std::span<double> in_grad(std::size_t id);

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<std::size_t> inputs;
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* bound = nullptr;
    bool needs_grad = false;
    bool reached = false;
    std::vector<double> grad;
    BackwardFn backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // stable addresses across appends
};

}  // namespace debias::ad
