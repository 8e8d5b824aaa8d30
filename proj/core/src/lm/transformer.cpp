#include "debias/lm/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "debias/autodiff/kernels.hpp"
#include "debias/autodiff/ops.hpp"
#include "debias/util/checkpoint.hpp"

namespace debias::lm {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr const char* kCheckpointKind = "transformer-lm";

void layer_norm_row(const double* x, const ad::Tensor& gain, const ad::Tensor& bias, double* y, std::size_t n) {
  double mu = 0.0;
  for (std::size_t j = 0; j < n; ++j) mu += x[j];
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= static_cast<double>(n);
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t j = 0; j < n; ++j) y[j] = gain[j] * ((x[j] - mu) * rstd) + bias[j];
}

double gelu(double x) {
  constexpr double c = 0.7978845608028654;
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

/// y = b + x W for a row vector x [1 x in] and W [in x out].
void affine_row(const double* x, const ad::Tensor& w, const ad::Tensor& b, double* y) {
  const std::size_t in = w.rows();
  const std::size_t out = w.cols();
  std::copy(b.data().begin(), b.data().end(), y);
  for (std::size_t i = 0; i < in; ++i) ad::kernels::axpy(x[i], w.data().data() + i * out, y, out);
}

void fill_normal(ad::Tensor& t, std::mt19937_64& rng, double std) {
  std::normal_distribution<double> n(0.0, std);
  for (double& v : t.data()) v = n(rng);
}

}  // namespace

void to_json(nlohmann::json& j, const LmConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"context_length", c.context_length}, {"width", c.width},
                     {"layers", c.layers},         {"heads", c.heads},                   {"mlp_ratio", c.mlp_ratio},
                     {"init_std", c.init_std},     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, LmConfig& c) {
  c = LmConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("vocab_size", c.vocab_size);
  get("context_length", c.context_length);
  get("width", c.width);
  get("layers", c.layers);
  get("heads", c.heads);
  get("mlp_ratio", c.mlp_ratio);
  get("init_std", c.init_std);
  get("seed", c.seed);
}

TransformerLM::TransformerLM(LmConfig config) : config_(config) {
  const std::size_t d = config_.width;
  if (config_.vocab_size <= corpus::kReservedCount) throw std::invalid_argument("TransformerLM: vocabulary too small");
  if (d == 0 || config_.heads == 0 || d % config_.heads != 0) {
    throw std::invalid_argument("TransformerLM: width must be a positive multiple of heads");
  }
  if (config_.context_length == 0 || config_.layers == 0 || config_.mlp_ratio == 0) {
    throw std::invalid_argument("TransformerLM: context, layers and mlp_ratio must be positive");
  }
  const std::size_t hidden = config_.mlp_ratio * d;
  std::mt19937_64 rng(config_.seed);
  const double residual_std = config_.init_std / std::sqrt(2.0 * static_cast<double>(config_.layers));

  token_embedding_ = ad::Tensor({config_.vocab_size, d});
  position_embedding_ = ad::Tensor({config_.context_length, d});
  fill_normal(token_embedding_, rng, config_.init_std);
  fill_normal(position_embedding_, rng, config_.init_std);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Block b;
    b.ln1_gain = ad::Tensor({1, d}, 1.0);
    b.ln1_bias = ad::Tensor({1, d});
    b.qkv_weight = ad::Tensor({d, 3 * d});
    b.qkv_bias = ad::Tensor({1, 3 * d});
    b.out_weight = ad::Tensor({d, d});
    b.out_bias = ad::Tensor({1, d});
    b.ln2_gain = ad::Tensor({1, d}, 1.0);
    b.ln2_bias = ad::Tensor({1, d});
    b.fc_weight = ad::Tensor({d, hidden});
    b.fc_bias = ad::Tensor({1, hidden});
    b.proj_weight = ad::Tensor({hidden, d});
    b.proj_bias = ad::Tensor({1, d});
    fill_normal(b.qkv_weight, rng, config_.init_std);
    fill_normal(b.out_weight, rng, residual_std);
    fill_normal(b.fc_weight, rng, config_.init_std);
    fill_normal(b.proj_weight, rng, residual_std);
    blocks_.push_back(std::move(b));
  }
  final_gain_ = ad::Tensor({1, d}, 1.0);
  final_bias_ = ad::Tensor({1, d});
}

std::vector<ad::Tensor*> TransformerLM::parameters() {
  std::vector<ad::Tensor*> out{&token_embedding_, &position_embedding_};
  for (auto& b : blocks_) {
    for (ad::Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.qkv_weight, &b.qkv_bias, &b.out_weight, &b.out_bias,
                          &b.ln2_gain, &b.ln2_bias, &b.fc_weight, &b.fc_bias, &b.proj_weight, &b.proj_bias}) {
      out.push_back(t);
    }
  }
  out.push_back(&final_gain_);
  out.push_back(&final_bias_);
  return out;
}

std::vector<const ad::Tensor*> TransformerLM::parameters() const {
  std::vector<const ad::Tensor*> out{&token_embedding_, &position_embedding_};
  for (const auto& b : blocks_) {
    for (const ad::Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.qkv_weight, &b.qkv_bias, &b.out_weight, &b.out_bias,
                                &b.ln2_gain, &b.ln2_bias, &b.fc_weight, &b.fc_bias, &b.proj_weight, &b.proj_bias}) {
      out.push_back(t);
    }
  }
  out.push_back(&final_gain_);
  out.push_back(&final_bias_);
  return out;
}

std::size_t TransformerLM::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : parameters()) n += t->size();
  return n;
}

ad::Var TransformerLM::assemble(std::span<const TokenId> ids, const std::function<ad::Var(std::size_t)>& bind) const {
  using namespace ad;
  const std::size_t n = ids.size();
  if (n == 0 || n > config_.context_length) {
    throw std::invalid_argument("TransformerLM: sequence length " + std::to_string(n) + " outside [1, " +
                                std::to_string(config_.context_length) + "]");
  }
  const std::size_t d = config_.width;
  const std::size_t dh = d / config_.heads;
  const double scale_qk = 1.0 / std::sqrt(static_cast<double>(dh));
  Var x = add(embedding_lookup(bind(0), ids), slice_rows(bind(1), 0, n));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    auto p = [&](std::size_t offset) { return bind(2 + 12 * l + offset); };
    Var a = layer_norm(x, p(0), p(1), kLayerNormEps);
    Var qkv = add(matmul(a, p(2)), p(3));
    std::vector<Var> heads;
    for (std::size_t h = 0; h < config_.heads; ++h) {
      Var q = slice_cols(qkv, h * dh, dh);
      Var k = slice_cols(qkv, d + h * dh, dh);
      Var v = slice_cols(qkv, 2 * d + h * dh, dh);
      heads.push_back(matmul(softmax(causal_scores(q, k, scale_qk)), v));
    }
    Var o = heads.size() == 1 ? heads[0] : concat_cols(heads);
    x = add(x, add(matmul(o, p(4)), p(5)));
    Var m = layer_norm(x, p(6), p(7), kLayerNormEps);
    Var f = gelu(add(matmul(m, p(8)), p(9)));
    x = add(x, add(matmul(f, p(10)), p(11)));
  }
  const std::size_t last = 2 + 12 * config_.layers;
  return layer_norm(x, bind(last), bind(last + 1), kLayerNormEps);
}

ad::Var TransformerLM::hidden_graph(ad::Graph& g, std::span<const TokenId> ids) const {
  const auto params = parameters();
  return assemble(ids, [&](std::size_t i) { return g.constant_ref(*params[i]); });
}

ad::Var TransformerLM::train_hidden_graph(ad::Graph& g, std::span<const TokenId> ids) {
  const auto params = parameters();
  return assemble(ids, [&](std::size_t i) { return g.param(*params[i]); });
}

ad::Var TransformerLM::logits_graph(ad::Graph& g, ad::Var hidden) const {
  return ad::matmul(hidden, g.constant_ref(token_embedding_), true);
}

ad::Var TransformerLM::train_logits_graph(ad::Graph& g, ad::Var hidden) {
  return ad::matmul(hidden, g.param(token_embedding_), true);
}

void TransformerLM::project(std::span<const double> hidden, std::span<double> logits) const {
  const std::size_t d = config_.width;
  if (hidden.size() != d || logits.size() != config_.vocab_size) {
    throw std::invalid_argument("TransformerLM::project: size mismatch");
  }
  const double* e = token_embedding_.data().data();
  for (std::size_t v = 0; v < config_.vocab_size; ++v) logits[v] = ad::kernels::dot(e + v * d, hidden.data(), d);
}

void TransformerLM::save(const std::filesystem::path& path) const {
  const auto params = parameters();
  write_checkpoint(path, kCheckpointKind, nlohmann::json(config_), params);
}

TransformerLM TransformerLM::load(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path, kCheckpointKind);
  TransformerLM model(ck.hyperparams.get<LmConfig>());
  const auto params = model.parameters();
  load_blocks(ck, params);
  return model;
}

DecodeState::DecodeState(const TransformerLM& model)
    : model_(&model),
      keys_(model.config().layers, std::vector<double>(model.config().context_length * model.width())),
      values_(model.config().layers, std::vector<double>(model.config().context_length * model.width())),
      last_(model.width()),
      sum_(model.width()),
      x_(model.width()),
      a_(model.width()),
      qkv_(3 * model.width()),
      att_(model.config().context_length),
      mlp_(model.config().mlp_ratio * model.width()) {}

std::span<const double> DecodeState::push(TokenId token) {
  const auto& m = *model_;
  const auto& cfg = m.config_;
  const std::size_t d = cfg.width;
  const std::size_t dh = d / cfg.heads;
  if (length_ >= cfg.context_length) throw std::length_error("DecodeState: context length exceeded");
  if (token >= cfg.vocab_size) throw std::out_of_range("DecodeState: token id outside vocabulary");
  const std::size_t pos = length_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (std::size_t j = 0; j < d; ++j) x_[j] = m.token_embedding_.at(token, j) + m.position_embedding_.at(pos, j);
  std::vector<double> head_out(d);
  std::vector<double> tmp(d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const Block& b = m.blocks_[l];
    layer_norm_row(x_.data(), b.ln1_gain, b.ln1_bias, a_.data(), d);
    affine_row(a_.data(), b.qkv_weight, b.qkv_bias, qkv_.data());
    double* kc = keys_[l].data();
    double* vc = values_[l].data();
    std::copy(qkv_.begin() + d, qkv_.begin() + 2 * d, kc + pos * d);
    std::copy(qkv_.begin() + 2 * d, qkv_.end(), vc + pos * d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const double* q = qkv_.data() + h * dh;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= pos; ++j) {
        att_[j] = scale * ad::kernels::dot(q, kc + j * d + h * dh, dh);
        mx = std::max(mx, att_[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= pos; ++j) z += att_[j] = std::exp(att_[j] - mx);
      double* out = head_out.data() + h * dh;
      std::fill(out, out + dh, 0.0);
      for (std::size_t j = 0; j <= pos; ++j) ad::kernels::axpy(att_[j] / z, vc + j * d + h * dh, out, dh);
    }
    affine_row(head_out.data(), b.out_weight, b.out_bias, tmp.data());
    for (std::size_t j = 0; j < d; ++j) x_[j] += tmp[j];
    layer_norm_row(x_.data(), b.ln2_gain, b.ln2_bias, a_.data(), d);
    affine_row(a_.data(), b.fc_weight, b.fc_bias, mlp_.data());
    for (double& v : mlp_) v = gelu(v);
    affine_row(mlp_.data(), b.proj_weight, b.proj_bias, tmp.data());
    for (std::size_t j = 0; j < d; ++j) x_[j] += tmp[j];
  }
  layer_norm_row(x_.data(), m.final_gain_, m.final_bias_, last_.data(), d);
  for (std::size_t j = 0; j < d; ++j) sum_[j] += last_[j];
  ++length_;
  return last_;
}

std::vector<double> DecodeState::accumulated_hidden() const {
  if (length_ == 0) throw std::logic_error("DecodeState: no tokens pushed");
  std::vector<double> out(sum_);
  for (double& v : out) v /= static_cast<double>(length_);
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += p[i] = std::exp(logits[i] - mx);
  for (double& v : p) v /= z;
  return p;
}

ForwardStates forward_states(const TransformerLM& model, std::span<const TokenId> ids) {
  if (ids.empty() || ids.size() > model.config().context_length) {
    throw std::length_error("forward_states: sequence length " + std::to_string(ids.size()) + " outside [1, " +
                            std::to_string(model.config().context_length) + "]");
  }
  const std::size_t d = model.width();
  DecodeState state(model);
  ForwardStates out;
  out.hidden = ad::Tensor({ids.size(), d});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto h = state.push(ids[t]);
    std::copy(h.begin(), h.end(), out.hidden.data().begin() + t * d);
  }
  out.accumulated = state.accumulated_hidden();
  out.logits.resize(model.vocab_size());
  model.project(state.last_hidden(), out.logits);
  out.distribution = softmax(out.logits);
  return out;
}

}  // namespace debias::lm
