#include "debias/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace debias::ad {

std::string_view op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Leaf: return "leaf";
    case OpKind::Param: return "param";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Tanh: return "tanh";
    case OpKind::Gelu: return "gelu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Abs: return "abs";
    case OpKind::Square: return "square";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Embedding: return "embedding_lookup";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::MeanRows: return "mean_rows";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::CausalScores: return "causal_scores";
    case OpKind::Gather: return "gather";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph_->value(id_); }

std::span<const double> Var::grad() const { return graph_->grad(id_); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Graph::constant_ref(const Tensor& value) {
  Node n;
  n.kind = OpKind::Constant;
  n.external = &value;
  return push(std::move(n));
}

Var Graph::leaf(Tensor value) {
  Node n;
  n.kind = OpKind::Leaf;
  n.owned = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Graph::param(Tensor& parameter) {
  Node n;
  n.kind = OpKind::Param;
  n.external = &parameter;
  n.bound = &parameter;
  n.needs_grad = true;
  return push(std::move(n));
}

Var Graph::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](std::size_t i) { return nodes_[i].needs_grad; });
  n.inputs = std::move(inputs);
  n.owned = std::move(value);
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.owned;
}

std::span<const double> Graph::grad(std::size_t id) const { return nodes_.at(id).grad; }

std::span<double> Graph::in_grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return {};
  n.reached = true;
  return n.grad;
}

void Graph::backward(const Var& loss) {
  if (loss.graph_ != this) throw std::invalid_argument("backward: loss belongs to another graph");
  const std::size_t root = loss.id();
  if (value(root).size() != 1) throw ShapeError("backward", "loss must be scalar, got " + to_string(value(root).shape()));

  for (std::size_t i = 0; i <= root; ++i) {
    Node& n = nodes_[i];
    n.reached = false;
    if (n.needs_grad) {
      n.grad.assign(value(i).size(), 0.0);
    } else {
      n.grad.clear();
    }
  }
  if (!nodes_[root].needs_grad) return;
  nodes_[root].grad[0] = 1.0;
  nodes_[root].reached = true;

  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.reached || !n.backward) continue;
    n.backward(*this, i);
    for (std::size_t in : n.inputs) {
      const Node& src = nodes_[in];
      if (!src.needs_grad) continue;
      for (double g : src.grad) {
        if (!std::isfinite(g)) {
          throw NonFiniteError(std::string("non-finite gradient from ") + std::string(op_name(n.kind)), i);
        }
      }
    }
  }

  for (std::size_t i = 0; i <= root; ++i) {
    Node& n = nodes_[i];
    if (n.kind != OpKind::Param || !n.reached) continue;
    if (!n.bound->has_grad()) n.bound->set_requires_grad(true);
    auto dst = n.bound->grad();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
  }
}

}  // namespace debias::ad
