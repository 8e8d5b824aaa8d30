#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "debias/autodiff/graph.hpp"

// Differentiable primitives. Every op works on rank-2 values (rank-1 values are
// a single row) and throws ShapeError naming itself and the offending shapes.
namespace debias::ad {

/// a[m x k] * b[k x n], or a * b^T when `transpose_b` (b is [n x k]).
Var matmul(Var a, Var b, bool transpose_b = false);

/// Elementwise sum. `b` may also be a [1 x n] row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var tanh(Var a);
/// tanh approximation used by GPT-2.
Var gelu(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var square(Var a);

/// Row-wise softmax over the last axis.
Var softmax(Var a);
Var log_softmax(Var a);
/// Row-wise normalisation followed by the affine map gamma * x_hat + beta;
/// gamma and beta are [1 x n].
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

/// Rows of `table` [V x d] selected by `ids`; result is [ids.size() x d].
Var embedding_lookup(Var table, std::span<const std::size_t> ids);

Var sum(Var a);
Var mean(Var a);
/// Column means: [m x n] -> [1 x n].
Var mean_rows(Var a);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var slice_rows(Var a, std::size_t start, std::size_t count);

/// scale * q k^T for a causal self-attention block; entries above the
/// diagonal are set to a large negative constant so a following softmax gives
/// them exactly zero weight.
Var causal_scores(Var q, Var k, double scale);

/// Picks a[r, c] for every (r, c) pair, producing a [pairs x 1] column.
Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> at);

inline constexpr double kMaskedScore = -1e30;

}  // namespace debias::ad
