#include "debias/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "debias/autodiff/kernels.hpp"

namespace debias::ad {
namespace {

struct Dims {
  std::size_t rows;
  std::size_t cols;
};

Dims dims(const Tensor& t) { return {t.rows(), t.cols()}; }

std::string pair_str(const Tensor& a, const Tensor& b) { return to_string(a.shape()) + " vs " + to_string(b.shape()); }

void same_graph(const Var& a, const Var& b, const char* op) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument(std::string(op) + ": operands from different graphs");
}

// Shared skeleton for elementwise unary ops: f computes the value, df the
// derivative given (input, output).
template <class F, class DF>
Var unary(Var a, OpKind kind, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(Shape{x.rows(), x.cols()});
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.graph().record(kind, {a.id()}, std::move(y), [df](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    auto gx = g.in_grad(in);
    if (gx.empty()) return;
    const Tensor& xv = g.value(in);
    const Tensor& yv = g.value(self);
    auto gy = g.out_grad(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b, bool transpose_b) {
  same_graph(a, b, "matmul");
  const auto [m, k] = dims(a.value());
  const auto [br, bc] = dims(b.value());
  const std::size_t n = transpose_b ? br : bc;
  const std::size_t kb = transpose_b ? bc : br;
  if (k != kb) throw ShapeError("matmul", pair_str(a.value(), b.value()) + (transpose_b ? " (b transposed)" : ""));
  Tensor c(Shape{m, n});
  if (transpose_b) {
    kernels::gemm_nt(m, n, k, a.value().data().data(), b.value().data().data(), c.data().data());
  } else {
    kernels::gemm_nn(m, n, k, a.value().data().data(), b.value().data().data(), c.data().data());
  }
  return a.graph().record(OpKind::MatMul, {a.id(), b.id()}, std::move(c),
                          [m, n, k, transpose_b](Graph& g, std::size_t self) {
                            const std::size_t ia = g.inputs(self)[0];
                            const std::size_t ib = g.inputs(self)[1];
                            const double* gc = g.out_grad(self).data();
                            auto ga = g.in_grad(ia);
                            auto gb = g.in_grad(ib);
                            const double* av = g.value(ia).data().data();
                            const double* bv = g.value(ib).data().data();
                            if (!ga.empty()) {
                              // dA = dC * B^T  (or dC * B when b was transposed)
                              if (transpose_b) {
                                kernels::gemm_nn(m, k, n, gc, bv, ga.data());
                              } else {
                                kernels::gemm_nt(m, k, n, gc, bv, ga.data());
                              }
                            }
                            if (!gb.empty()) {
                              if (transpose_b) {
                                // B is [n x k]: dB = dC^T * A
                                kernels::gemm_tn(n, k, m, gc, av, gb.data());
                              } else {
                                // dB = A^T * dC
                                kernels::gemm_tn(k, n, m, av, gc, gb.data());
                              }
                            }
                          });
}

Var add(Var a, Var b) {
  same_graph(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool broadcast = y.rows() == 1 && x.rows() != 1 && y.cols() == x.cols();
  if (!broadcast && (x.rows() != y.rows() || x.cols() != y.cols())) throw ShapeError("add", pair_str(x, y));
  Tensor out(Shape{x.rows(), x.cols()});
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + (broadcast ? y[i % n] : y[i]);
  return a.graph().record(OpKind::Add, {a.id(), b.id()}, std::move(out), [broadcast, n](Graph& g, std::size_t self) {
    auto gy = g.out_grad(self);
    auto ga = g.in_grad(g.inputs(self)[0]);
    auto gb = g.in_grad(g.inputs(self)[1]);
    if (!ga.empty()) {
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (!gb.empty()) {
      for (std::size_t i = 0; i < gy.size(); ++i) gb[broadcast ? i % n : i] += gy[i];
    }
  });
}

Var sub(Var a, Var b) {
  same_graph(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ShapeError("sub", pair_str(x, y));
  Tensor out(Shape{x.rows(), x.cols()});
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return a.graph().record(OpKind::Sub, {a.id(), b.id()}, std::move(out), [](Graph& g, std::size_t self) {
    auto gy = g.out_grad(self);
    auto ga = g.in_grad(g.inputs(self)[0]);
    auto gb = g.in_grad(g.inputs(self)[1]);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
  });
}

Var mul(Var a, Var b) {
  same_graph(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ShapeError("mul", pair_str(x, y));
  Tensor out(Shape{x.rows(), x.cols()});
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return a.graph().record(OpKind::Mul, {a.id(), b.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const std::size_t ia = g.inputs(self)[0];
    const std::size_t ib = g.inputs(self)[1];
    auto gy = g.out_grad(self);
    auto ga = g.in_grad(ia);
    auto gb = g.in_grad(ib);
    const Tensor& xv = g.value(ia);
    const Tensor& yv = g.value(ib);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * yv[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * xv[i];
  });
}

Var scale(Var a, double factor) {
  return unary(
      a, OpKind::Scale, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      a, OpKind::AddScalar, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var tanh(Var a) {
  return unary(
      a, OpKind::Tanh, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  return unary(
      a, OpKind::Gelu,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double inner = c * (x + 0.044715 * x * x * x);
        const double t = std::tanh(inner);
        const double dinner = c * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
      });
}

Var exp(Var a) {
  return unary(
      a, OpKind::Exp, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      a, OpKind::Log, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(Var a) {
  return unary(
      a, OpKind::Abs, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  return unary(
      a, OpKind::Square, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  const auto [m, n] = dims(x);
  Tensor y(Shape{m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data().data() + r * n;
    double* yr = y.data().data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  return a.graph().record(OpKind::Softmax, {a.id()}, std::move(y), [m, n](Graph& g, std::size_t self) {
    auto gx = g.in_grad(g.inputs(self)[0]);
    if (gx.empty()) return;
    const Tensor& yv = g.value(self);
    auto gy = g.out_grad(self);
    for (std::size_t r = 0; r < m; ++r) {
      const double* yr = yv.data().data() + r * n;
      const double* gr = gy.data() + r * n;
      const double s = kernels::dot(yr, gr, n);
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - s);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  const auto [m, n] = dims(x);
  Tensor y(Shape{m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data().data() + r * n;
    double* yr = y.data().data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) yr[j] = xr[j] - lz;
  }
  return a.graph().record(OpKind::LogSoftmax, {a.id()}, std::move(y), [m, n](Graph& g, std::size_t self) {
    auto gx = g.in_grad(g.inputs(self)[0]);
    if (gx.empty()) return;
    const Tensor& yv = g.value(self);
    auto gy = g.out_grad(self);
    for (std::size_t r = 0; r < m; ++r) {
      const double* yr = yv.data().data() + r * n;
      const double* gr = gy.data() + r * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gr[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += gr[j] - std::exp(yr[j]) * s;
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  same_graph(x, gamma, "layer_norm");
  same_graph(x, beta, "layer_norm");
  const Tensor& xv = x.value();
  const auto [m, n] = dims(xv);
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw ShapeError("layer_norm", to_string(xv.shape()) + " with gamma " + to_string(gamma.value().shape()) +
                                       " beta " + to_string(beta.value().shape()));
  }
  Tensor y(Shape{m, n});
  std::vector<double> xhat(m * n);
  std::vector<double> rstd(m);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = xv.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * rstd[r];
      xhat[r * n + j] = h;
      y[r * n + j] = gv[j] * h + bv[j];
    }
  }
  return x.graph().record(
      OpKind::LayerNorm, {x.id(), gamma.id(), beta.id()}, std::move(y),
      [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, std::size_t self) {
        const auto& in = g.inputs(self);
        auto gx = g.in_grad(in[0]);
        auto gg = g.in_grad(in[1]);
        auto gb = g.in_grad(in[2]);
        const Tensor& gv = g.value(in[1]);
        auto gy = g.out_grad(self);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < m; ++r) {
          const double* gr = gy.data() + r * n;
          const double* hr = xhat.data() + r * n;
          if (!gg.empty()) {
            for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * hr[j];
          }
          if (!gb.empty()) {
            for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
          }
          if (!gx.empty()) {
            double mean_d = 0.0;
            double mean_dh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gr[j] * gv[j];
              mean_d += d;
              mean_dh += d * hr[j];
            }
            mean_d *= inv_n;
            mean_dh *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gr[j] * gv[j];
              gx[r * n + j] += rstd[r] * (d - mean_d - hr[j] * mean_dh);
            }
          }
        }
      });
}

Var embedding_lookup(Var table, std::span<const std::size_t> ids) {
  const Tensor& t = table.value();
  const auto [vocab, d] = dims(t);
  Tensor out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw ShapeError("embedding_lookup", "id " + std::to_string(ids[i]) + " outside table " + to_string(t.shape()));
    }
    std::copy_n(t.data().data() + ids[i] * d, d, out.data().data() + i * d);
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return table.graph().record(OpKind::Embedding, {table.id()}, std::move(out),
                              [d, saved = std::move(saved)](Graph& g, std::size_t self) {
                                auto gt = g.in_grad(g.inputs(self)[0]);
                                if (gt.empty()) return;
                                auto gy = g.out_grad(self);
                                for (std::size_t i = 0; i < saved.size(); ++i) {
                                  kernels::axpy(1.0, gy.data() + i * d, gt.data() + saved[i] * d, d);
                                }
                              });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph().record(OpKind::Sum, {a.id()}, Tensor::scalar(s), [](Graph& g, std::size_t self) {
    auto gx = g.in_grad(g.inputs(self)[0]);
    const double gy = g.out_grad(self)[0];
    for (double& v : gx) v += gy;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean", "empty input");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph().record(OpKind::Mean, {a.id()}, Tensor::scalar(s / static_cast<double>(n)),
                          [n](Graph& g, std::size_t self) {
                            auto gx = g.in_grad(g.inputs(self)[0]);
                            const double gy = g.out_grad(self)[0] / static_cast<double>(n);
                            for (double& v : gx) v += gy;
                          });
}

Var mean_rows(Var a) {
  const auto [m, n] = dims(a.value());
  if (m == 0) throw ShapeError("mean_rows", "no rows");
  Tensor out(Shape{1, n});
  const double* x = a.value().data().data();
  for (std::size_t r = 0; r < m; ++r) kernels::axpy(1.0, x + r * n, out.data().data(), n);
  for (double& v : out.data()) v /= static_cast<double>(m);
  return a.graph().record(OpKind::MeanRows, {a.id()}, std::move(out), [m, n](Graph& g, std::size_t self) {
    auto gx = g.in_grad(g.inputs(self)[0]);
    if (gx.empty()) return;
    auto gy = g.out_grad(self);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r) kernels::axpy(inv, gy.data(), gx.data() + r * n, n);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols", "no inputs");
  const std::size_t m = parts[0].value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    same_graph(parts[0], p, "concat_cols");
    if (p.value().rows() != m) throw ShapeError("concat_cols", pair_str(parts[0].value(), p.value()));
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor out(Shape{m, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.value().cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(p.value().data().data() + r * w, w, out.data().data() + r * total + offset);
    }
    offset += w;
  }
  return parts[0].graph().record(OpKind::ConcatCols, std::move(ids), std::move(out),
                                 [m, total, widths = std::move(widths)](Graph& g, std::size_t self) {
                                   auto gy = g.out_grad(self);
                                   std::size_t off = 0;
                                   for (std::size_t k = 0; k < widths.size(); ++k) {
                                     auto gx = g.in_grad(g.inputs(self)[k]);
                                     const std::size_t w = widths[k];
                                     if (!gx.empty()) {
                                       for (std::size_t r = 0; r < m; ++r) {
                                         kernels::axpy(1.0, gy.data() + r * total + off, gx.data() + r * w, w);
                                       }
                                     }
                                     off += w;
                                   }
                                 });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const auto [m, n] = dims(a.value());
  if (start + count > n) {
    throw ShapeError("slice_cols", to_string(a.value().shape()) + " cols [" + std::to_string(start) + ", " +
                                       std::to_string(start + count) + ")");
  }
  Tensor out(Shape{m, count});
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(a.value().data().data() + r * n + start, count, out.data().data() + r * count);
  }
  return a.graph().record(OpKind::SliceCols, {a.id()}, std::move(out),
                          [m, n, start, count](Graph& g, std::size_t self) {
                            auto gx = g.in_grad(g.inputs(self)[0]);
                            if (gx.empty()) return;
                            auto gy = g.out_grad(self);
                            for (std::size_t r = 0; r < m; ++r) {
                              kernels::axpy(1.0, gy.data() + r * count, gx.data() + r * n + start, count);
                            }
                          });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const auto [m, n] = dims(a.value());
  if (start + count > m) {
    throw ShapeError("slice_rows", to_string(a.value().shape()) + " rows [" + std::to_string(start) + ", " +
                                       std::to_string(start + count) + ")");
  }
  Tensor out(Shape{count, n});
  std::copy_n(a.value().data().data() + start * n, count * n, out.data().data());
  return a.graph().record(OpKind::SliceRows, {a.id()}, std::move(out), [n, start, count](Graph& g, std::size_t self) {
    auto gx = g.in_grad(g.inputs(self)[0]);
    if (gx.empty()) return;
    auto gy = g.out_grad(self);
    kernels::axpy(1.0, gy.data(), gx.data() + start * n, count * n);
  });
}

Var causal_scores(Var q, Var k, double scale_factor) {
  same_graph(q, k, "causal_scores");
  const auto [t, dh] = dims(q.value());
  if (k.value().rows() != t || k.value().cols() != dh) throw ShapeError("causal_scores", pair_str(q.value(), k.value()));
  Tensor s(Shape{t, t}, kMaskedScore);
  const double* qv = q.value().data().data();
  const double* kv = k.value().data().data();
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j <= i; ++j) s[i * t + j] = scale_factor * kernels::dot(qv + i * dh, kv + j * dh, dh);
  }
  return q.graph().record(OpKind::CausalScores, {q.id(), k.id()}, std::move(s),
                          [t, dh, scale_factor](Graph& g, std::size_t self) {
                            const std::size_t iq = g.inputs(self)[0];
                            const std::size_t ik = g.inputs(self)[1];
                            auto gq = g.in_grad(iq);
                            auto gk = g.in_grad(ik);
                            const double* qv2 = g.value(iq).data().data();
                            const double* kv2 = g.value(ik).data().data();
                            auto gs = g.out_grad(self);
                            for (std::size_t i = 0; i < t; ++i) {
                              for (std::size_t j = 0; j <= i; ++j) {
                                const double w = scale_factor * gs[i * t + j];
                                if (w == 0.0) continue;
                                if (!gq.empty()) kernels::axpy(w, kv2 + j * dh, gq.data() + i * dh, dh);
                                if (!gk.empty()) kernels::axpy(w, qv2 + i * dh, gk.data() + j * dh, dh);
                              }
                            }
                          });
}

Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> at) {
  const auto [m, n] = dims(a.value());
  Tensor out(Shape{at.size(), 1});
  std::vector<std::size_t> flat;
  flat.reserve(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    const auto [r, c] = at[i];
    if (r >= m || c >= n) {
      throw ShapeError("gather", "index (" + std::to_string(r) + ", " + std::to_string(c) + ") outside " +
                                     to_string(a.value().shape()));
    }
    flat.push_back(r * n + c);
    out[i] = a.value()[r * n + c];
  }
  return a.graph().record(OpKind::Gather, {a.id()}, std::move(out), [flat = std::move(flat)](Graph& g, std::size_t self) {
    auto gx = g.in_grad(g.inputs(self)[0]);
    if (gx.empty()) return;
    auto gy = g.out_grad(self);
    for (std::size_t i = 0; i < flat.size(); ++i) gx[flat[i]] += gy[i];
  });
}

}  // namespace debias::ad
