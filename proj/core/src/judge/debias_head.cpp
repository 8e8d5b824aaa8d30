#include "debias/judge/debias_head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "debias/autodiff/kernels.hpp"
#include "debias/autodiff/ops.hpp"
#include "debias/autodiff/optim.hpp"
#include "debias/lm/train.hpp"
#include "debias/util/checkpoint.hpp"

namespace debias::judge {
namespace {

constexpr const char* kCheckpointKind = "debias-head";

double accuracy(const DebiasHead& head, const HeadDataset& data) {
  if (data.states.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.states.size(); ++i) {
    correct += (head.probability(data.states[i]) >= 0.5 ? 1 : 0) == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.states.size());
}

}  // namespace

void to_json(nlohmann::json& j, const HeadConfig& c) {
  j = nlohmann::json{{"width", c.width},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"prefix_stride", c.prefix_stride},
                     {"min_prefix", c.min_prefix},
                     {"state", c.state},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, HeadConfig& c) {
  c = HeadConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("width", c.width);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("prefix_stride", c.prefix_stride);
  get("min_prefix", c.min_prefix);
  get("state", c.state);
  get("seed", c.seed);
}

DebiasHead::DebiasHead(HeadConfig config) : config_(config) {
  const std::size_t d = config_.width;
  if (d == 0) throw std::invalid_argument("DebiasHead: width must be positive");
  if (config_.state != "mean" && config_.state != "last" && config_.state != "next") {
    throw std::invalid_argument("DebiasHead: state must be mean, last or next");
  }
  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  w1_ = ad::Tensor({d, d});
  b1_ = ad::Tensor({1, d});
  w2_ = ad::Tensor({d, 2});
  b2_ = ad::Tensor({1, 2});
  for (double& v : w1_.data()) v = n(rng);
  for (double& v : w2_.data()) v = n(rng);
}

std::vector<ad::Tensor*> DebiasHead::parameters() { return {&w1_, &b1_, &w2_, &b2_}; }
std::vector<const ad::Tensor*> DebiasHead::parameters() const { return {&w1_, &b1_, &w2_, &b2_}; }

ad::Var DebiasHead::logits_graph(ad::Graph& g, ad::Var states) const {
  ad::Var hidden = ad::tanh(ad::add(ad::matmul(states, g.constant_ref(w1_)), g.constant_ref(b1_)));
  return ad::add(ad::matmul(hidden, g.constant_ref(w2_)), g.constant_ref(b2_));
}

double DebiasHead::probability(std::span<const double> state) const {
  const std::size_t d = config_.width;
  if (state.size() != d) throw std::invalid_argument("DebiasHead: state width mismatch");
  std::vector<double> hidden(b1_.data().begin(), b1_.data().end());
  for (std::size_t i = 0; i < d; ++i) ad::kernels::axpy(state[i], w1_.data().data() + i * d, hidden.data(), d);
  double z0 = b2_[0], z1 = b2_[1];
  for (std::size_t i = 0; i < d; ++i) {
    const double a = std::tanh(hidden[i]);
    z0 += a * w2_.at(i, 0);
    z1 += a * w2_.at(i, 1);
  }
  return 1.0 / (1.0 + std::exp(z0 - z1));
}

void DebiasHead::save(const std::filesystem::path& path) const {
  const auto params = parameters();
  write_checkpoint(path, kCheckpointKind, nlohmann::json(config_), params);
}

DebiasHead DebiasHead::load(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path, kCheckpointKind);
  DebiasHead h(ck.hyperparams.get<HeadConfig>());
  const auto params = h.parameters();
  load_blocks(ck, params);
  return h;
}

std::vector<double> head_input(const lm::TransformerLM& lm, std::string_view state, std::span<const double> last,
                               std::span<const double> accumulated) {
  if (state == "mean") return {accumulated.begin(), accumulated.end()};
  if (state == "last") return {last.begin(), last.end()};
  if (state != "next") throw std::invalid_argument("head state must be mean, last or next");
  std::vector<double> probs(lm.vocab_size());
  lm.project(last, probs);
  const double mx = *std::max_element(probs.begin(), probs.end());
  double z = 0.0;
  for (double& v : probs) z += (v = std::exp(v - mx));
  const std::size_t d = lm.width();
  const double* emb = lm.output_projection().data().data();
  std::vector<double> out(d, 0.0);
  for (std::size_t w = 0; w < probs.size(); ++w) ad::kernels::axpy(probs[w] / z, emb + w * d, out.data(), d);
  return out;
}

HeadDataset head_features(const lm::TransformerLM& lm, const std::vector<corpus::Document>& docs,
                          const HeadConfig& config, bool full_only) {
  if (config.prefix_stride == 0) throw std::invalid_argument("head_features: prefix_stride must be positive");
  if (config.state != "mean" && config.state != "last" && config.state != "next") {
    throw std::invalid_argument("head_features: state must be mean, last or next");
  }
  const std::size_t skip_end = config.state == "next" ? 1 : 0;
  HeadDataset out;
  for (const auto& doc : docs) {
    // Same context layout as generation: start token, then the document.
    auto seq = lm::training_sequence(doc);
    seq.pop_back();
    if (seq.size() <= skip_end) continue;
    const std::size_t final = seq.size() - skip_end;
    lm::DecodeState state(lm);
    for (std::size_t t = 0; t < final; ++t) {
      state.push(seq[t]);
      const std::size_t n = t + 1;
      const bool last = n == final;
      const bool sampled = !full_only && n >= config.min_prefix && (n - config.min_prefix) % config.prefix_stride == 0;
      if (last || sampled) {
        out.states.push_back(head_input(lm, config.state, state.last_hidden(), state.accumulated_hidden()));
        out.labels.push_back(corpus::class_index(doc.label));
      }
    }
  }
  return out;
}

HeadTrainResult train_debias_head(const lm::TransformerLM& lm, const std::vector<corpus::Document>& train,
                                  const std::vector<corpus::Document>& test, const HeadConfig& config) {
  if (config.width != lm.width()) throw std::invalid_argument("train_debias_head: head width must equal LM width");
  if (config.batch_size == 0 || config.epochs == 0) {
    throw std::invalid_argument("train_debias_head: batch_size and epochs must be positive");
  }
  bool seen[2] = {false, false};
  for (const auto& d : train) seen[corpus::class_index(d.label)] = true;
  if (!seen[0] || !seen[1]) throw std::invalid_argument("train_debias_head: training data has a single class");

  const HeadDataset data = head_features(lm, train, config);
  HeadTrainResult result{DebiasHead(config)};
  DebiasHead& head = result.head;
  const auto params = head.parameters();
  for (auto* p : params) p->set_requires_grad(true);
  ad::AdamState adam(ad::AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8}, params);
  const std::size_t d = config.width;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.states.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t b = end - start;
      ad::Tensor x({b, d});
      std::vector<std::pair<std::size_t, std::size_t>> targets;
      for (std::size_t i = start; i < end; ++i) {
        std::copy(data.states[order[i]].begin(), data.states[order[i]].end(), x.data().begin() + (i - start) * d);
        targets.emplace_back(i - start, static_cast<std::size_t>(data.labels[order[i]]));
      }
      for (auto* p : params) p->zero_grad();
      ad::Graph g;
      ad::Var hidden = ad::tanh(ad::add(ad::matmul(g.constant(std::move(x)), g.param(*params[0])), g.param(*params[1])));
      ad::Var logits = ad::add(ad::matmul(hidden, g.param(*params[2])), g.param(*params[3]));
      ad::Var loss = ad::scale(ad::sum(ad::gather(ad::log_softmax(logits), targets)), -1.0 / static_cast<double>(b));
      g.backward(loss);
      adam.step(params);
      epoch_loss += loss.value().item() * static_cast<double>(b);
    }
    if (epoch == config.epochs || epoch % 10 == 0) {
      spdlog::info("train_debias_head: epoch {} loss {:.4f}", epoch, epoch_loss / static_cast<double>(order.size()));
    }
  }
  for (auto* p : params) p->set_requires_grad(false);
  result.train_accuracy = accuracy(head, data);
  result.test_accuracy = accuracy(head, head_features(lm, test, config, true));
  result.test_prefix_accuracy = accuracy(head, head_features(lm, test, config));
  return result;
}

}  // namespace debias::judge
