#pragma once

// Central-difference gradient oracle for the autodiff primitives. Lives in test
// code only: it evaluates forward values through the graph but never reads the
// graph's own gradients except to compare against.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "debias/autodiff/graph.hpp"
#include "debias/autodiff/ops.hpp"

namespace debias::testing {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

/// Builds the op under test from differentiable leaves.
using OpBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCase {
  std::string name;
  std::vector<Shape> input_shapes;
  OpBuilder build;
  /// Maps a raw N(0,1) draw to the op's valid domain (e.g. positive for log).
  std::function<double(double)> domain = [](double x) { return x; };
};

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, const std::function<double(double)>& domain) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor t(shape);
  for (double& v : t.data()) v = domain(n01(rng));
  return t;
}

/// Loss = sum(op(inputs) * weights) for a fixed random weight tensor.
inline double eval_loss(const GradCase& c, const std::vector<Tensor>& inputs, const Tensor* weights,
                        std::vector<std::vector<double>>* grads) {
  Graph g;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.leaf(t));
  Var out = c.build(g, leaves);
  Var w = g.constant(*weights);
  Var loss = ad::sum(ad::mul(out, w));
  if (grads) {
    g.backward(loss);
    grads->clear();
    for (const auto& l : leaves) grads->emplace_back(l.grad().begin(), l.grad().end());
  }
  return loss.value().item();
}

/// Output shape of the op for a given set of inputs.
inline Shape output_shape(const GradCase& c, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.leaf(t));
  const Tensor& out = c.build(g, leaves).value();
  return Shape{out.rows(), out.cols()};
}

/// Norm-wise relative error between analytic and central-difference gradients
/// for one random instance.
inline double gradient_relative_error(const GradCase& c, std::uint64_t seed, double h = 1e-5) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> inputs;
  for (const auto& s : c.input_shapes) inputs.push_back(random_tensor(s, rng, c.domain));
  const Tensor weights = random_tensor(output_shape(c, inputs), rng, [](double x) { return x; });

  std::vector<std::vector<double>> analytic;
  eval_loss(c, inputs, &weights, &analytic);

  double diff_sq = 0.0;
  double a_sq = 0.0;
  double n_sq = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double up = eval_loss(c, inputs, &weights, nullptr);
      inputs[k][i] = orig - h;
      const double down = eval_loss(c, inputs, &weights, nullptr);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      diff_sq += (a - numeric) * (a - numeric);
      a_sq += a * a;
      n_sq += numeric * numeric;
    }
  }
  const double denom = std::max({std::sqrt(a_sq), std::sqrt(n_sq), 1e-10});
  return std::sqrt(diff_sq) / denom;
}

/// One case per primitive, on small random shapes.
inline std::vector<GradCase> primitive_cases() {
  using namespace debias::ad;
  auto away_from_zero = [](double x) { return x >= 0 ? x + 0.2 : x - 0.2; };
  auto positive = [](double x) { return 0.2 + std::abs(x); };
  std::vector<GradCase> cases;
  cases.push_back({"matmul", {{3, 4}, {4, 2}}, [](Graph&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }});
  cases.push_back(
      {"matmul_nt", {{3, 4}, {5, 4}}, [](Graph&, const std::vector<Var>& v) { return matmul(v[0], v[1], true); }});
  cases.push_back({"add", {{3, 4}, {3, 4}}, [](Graph&, const std::vector<Var>& v) { return add(v[0], v[1]); }});
  cases.push_back(
      {"add_row_broadcast", {{3, 4}, {1, 4}}, [](Graph&, const std::vector<Var>& v) { return add(v[0], v[1]); }});
  cases.push_back({"sub", {{2, 5}, {2, 5}}, [](Graph&, const std::vector<Var>& v) { return sub(v[0], v[1]); }});
  cases.push_back({"mul", {{3, 4}, {3, 4}}, [](Graph&, const std::vector<Var>& v) { return mul(v[0], v[1]); }});
  cases.push_back({"scale", {{2, 3}}, [](Graph&, const std::vector<Var>& v) { return scale(v[0], -1.7); }});
  cases.push_back({"add_scalar", {{2, 3}}, [](Graph&, const std::vector<Var>& v) { return add_scalar(v[0], 0.3); }});
  cases.push_back({"tanh", {{3, 3}}, [](Graph&, const std::vector<Var>& v) { return ad::tanh(v[0]); }});
  cases.push_back({"gelu", {{3, 3}}, [](Graph&, const std::vector<Var>& v) { return gelu(v[0]); }});
  cases.push_back({"exp", {{2, 3}}, [](Graph&, const std::vector<Var>& v) { return ad::exp(v[0]); }});
  cases.push_back({"log", {{2, 3}}, [](Graph&, const std::vector<Var>& v) { return ad::log(v[0]); }, positive});
  cases.push_back({"abs", {{2, 3}}, [](Graph&, const std::vector<Var>& v) { return ad::abs(v[0]); }, away_from_zero});
  cases.push_back({"square", {{2, 3}}, [](Graph&, const std::vector<Var>& v) { return square(v[0]); }});
  cases.push_back({"softmax", {{3, 5}}, [](Graph&, const std::vector<Var>& v) { return softmax(v[0]); }});
  cases.push_back({"log_softmax", {{3, 5}}, [](Graph&, const std::vector<Var>& v) { return log_softmax(v[0]); }});
  cases.push_back({"layer_norm",
                   {{3, 6}, {1, 6}, {1, 6}},
                   [](Graph&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); }});
  cases.push_back({"embedding_lookup", {{5, 3}}, [](Graph&, const std::vector<Var>& v) {
                     static const std::vector<std::size_t> ids{4, 0, 2, 4};
                     return embedding_lookup(v[0], ids);
                   }});
  cases.push_back({"mean", {{3, 4}}, [](Graph&, const std::vector<Var>& v) { return mean(v[0]); }});
  cases.push_back({"sum", {{3, 4}}, [](Graph&, const std::vector<Var>& v) { return sum(v[0]); }});
  cases.push_back({"mean_rows", {{4, 3}}, [](Graph&, const std::vector<Var>& v) { return mean_rows(v[0]); }});
  cases.push_back({"concat_cols", {{3, 2}, {3, 3}}, [](Graph&, const std::vector<Var>& v) {
                     std::vector<Var> parts{v[0], v[1]};
                     return concat_cols(parts);
                   }});
  cases.push_back({"slice_cols", {{3, 5}}, [](Graph&, const std::vector<Var>& v) { return slice_cols(v[0], 1, 3); }});
  cases.push_back({"slice_rows", {{4, 3}}, [](Graph&, const std::vector<Var>& v) { return slice_rows(v[0], 1, 2); }});
  cases.push_back({"causal_attention", {{4, 3}, {4, 3}}, [](Graph&, const std::vector<Var>& v) {
                     // Scores feed a softmax so the masked entries behave as they do in the model.
                     return softmax(causal_scores(v[0], v[1], 0.5));
                   }});
  cases.push_back({"gather", {{3, 4}}, [](Graph&, const std::vector<Var>& v) {
                     static const std::vector<std::pair<std::size_t, std::size_t>> at{{0, 1}, {2, 3}, {0, 1}};
                     return gather(v[0], at);
                   }});
  return cases;
}

}  // namespace debias::testing
