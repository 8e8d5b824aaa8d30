#include "debias/judge/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "debias/autodiff/graph.hpp"
#include "debias/autodiff/kernels.hpp"
#include "debias/autodiff/ops.hpp"
#include "debias/autodiff/optim.hpp"
#include "debias/util/checkpoint.hpp"

namespace debias::judge {
namespace {

constexpr const char* kCheckpointKind = "bias-classifier";

void fill_normal(ad::Tensor& t, std::mt19937_64& rng, double std) {
  std::normal_distribution<double> n(0.0, std);
  for (double& v : t.data()) v = n(rng);
}

void check_two_classes(const std::vector<corpus::Document>& docs, const char* who) {
  bool seen[2] = {false, false};
  for (const auto& d : docs) seen[corpus::class_index(d.label)] = true;
  if (!seen[0] || !seen[1]) throw std::invalid_argument(std::string(who) + ": training data has a single class");
}

struct Evaluation {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(const BiasClassifier& c, const std::vector<corpus::Document>& docs) {
  if (docs.empty()) return {};
  std::vector<int> pred, actual;
  for (const auto& d : docs) {
    pred.push_back(c.score(d.tokens) >= 0.5 ? 1 : 0);
    actual.push_back(corpus::class_index(d.label));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == actual[i];
  return {macro_f1(pred, actual), static_cast<double>(correct) / static_cast<double>(pred.size())};
}

}  // namespace

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"embed_width", c.embed_width},
                     {"hidden", c.hidden},         {"epochs", c.epochs},
                     {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  c = ClassifierConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("vocab_size", c.vocab_size);
  get("embed_width", c.embed_width);
  get("hidden", c.hidden);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("seed", c.seed);
}

BiasClassifier::BiasClassifier(ClassifierConfig config) : config_(config) {
  if (config_.vocab_size == 0 || config_.embed_width == 0 || config_.hidden == 0) {
    throw std::invalid_argument("BiasClassifier: sizes must be positive");
  }
  std::mt19937_64 rng(config_.seed);
  embedding_ = ad::Tensor({config_.vocab_size, config_.embed_width});
  w1_ = ad::Tensor({config_.embed_width, config_.hidden});
  b1_ = ad::Tensor({1, config_.hidden});
  w2_ = ad::Tensor({config_.hidden, 2});
  b2_ = ad::Tensor({1, 2});
  fill_normal(embedding_, rng, 0.1);
  fill_normal(w1_, rng, 1.0 / std::sqrt(static_cast<double>(config_.embed_width)));
  fill_normal(w2_, rng, 1.0 / std::sqrt(static_cast<double>(config_.hidden)));
}

std::vector<ad::Tensor*> BiasClassifier::parameters() { return {&embedding_, &w1_, &b1_, &w2_, &b2_}; }
std::vector<const ad::Tensor*> BiasClassifier::parameters() const { return {&embedding_, &w1_, &b1_, &w2_, &b2_}; }

double BiasClassifier::score(std::span<const TokenId> ids) const {
  if (ids.empty()) throw std::invalid_argument("judge_score: empty text");
  const std::size_t e = config_.embed_width;
  const std::size_t h = config_.hidden;
  std::vector<double> pooled(e, 0.0);
  for (TokenId t : ids) {
    if (t >= config_.vocab_size) throw std::out_of_range("judge_score: token id outside vocabulary");
    ad::kernels::axpy(1.0, embedding_.data().data() + t * e, pooled.data(), e);
  }
  for (double& v : pooled) v /= static_cast<double>(ids.size());
  std::vector<double> hidden(b1_.data().begin(), b1_.data().end());
  for (std::size_t i = 0; i < e; ++i) ad::kernels::axpy(pooled[i], w1_.data().data() + i * h, hidden.data(), h);
  double z0 = b2_[0], z1 = b2_[1];
  for (std::size_t i = 0; i < h; ++i) {
    const double a = std::tanh(hidden[i]);
    z0 += a * w2_.at(i, 0);
    z1 += a * w2_.at(i, 1);
  }
  // P(class 1) = softmax([z0, z1])[1]
  return 1.0 / (1.0 + std::exp(z0 - z1));
}

void BiasClassifier::save(const std::filesystem::path& path) const {
  const auto params = parameters();
  write_checkpoint(path, kCheckpointKind, nlohmann::json(config_), params);
}

BiasClassifier BiasClassifier::load(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path, kCheckpointKind);
  BiasClassifier c(ck.hyperparams.get<ClassifierConfig>());
  const auto params = c.parameters();
  load_blocks(ck, params);
  return c;
}

double macro_f1(std::span<const int> predicted, std::span<const int> actual) {
  if (predicted.size() != actual.size() || predicted.empty()) {
    throw std::invalid_argument("macro_f1: need equal, non-empty prediction and label lists");
  }
  double total = 0.0;
  for (int cls : {0, 1}) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      tp += predicted[i] == cls && actual[i] == cls;
      fp += predicted[i] == cls && actual[i] != cls;
      fn += predicted[i] != cls && actual[i] == cls;
    }
    total += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return total / 2.0;
}

JudgeTrainResult train_judge(const std::vector<corpus::Document>& train, const std::vector<corpus::Document>& valid,
                             const std::vector<corpus::Document>& test, const ClassifierConfig& config) {
  check_two_classes(train, "train_judge");
  if (config.batch_size == 0 || config.epochs == 0) {
    throw std::invalid_argument("train_judge: batch_size and epochs must be positive");
  }
  JudgeTrainResult result{BiasClassifier(config), {}};
  BiasClassifier& clf = result.classifier;
  const auto params = clf.parameters();
  for (auto* p : params) p->set_requires_grad(true);
  ad::AdamState adam(ad::AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8}, params);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best_f1 = -1.0;
  std::vector<std::vector<double>> best;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t b = end - start;
      std::vector<TokenId> ids;
      std::vector<std::pair<std::size_t, std::size_t>> targets;
      std::vector<std::size_t> lengths;
      for (std::size_t i = start; i < end; ++i) {
        const auto& d = train[order[i]];
        if (d.tokens.empty()) throw std::invalid_argument("train_judge: empty document");
        ids.insert(ids.end(), d.tokens.begin(), d.tokens.end());
        lengths.push_back(d.tokens.size());
        targets.emplace_back(i - start, static_cast<std::size_t>(corpus::class_index(d.label)));
      }
      // Mean pooling as a [b x total] averaging matrix.
      ad::Tensor pool({b, ids.size()});
      for (std::size_t r = 0, offset = 0; r < b; offset += lengths[r], ++r) {
        for (std::size_t k = 0; k < lengths[r]; ++k) pool.at(r, offset + k) = 1.0 / static_cast<double>(lengths[r]);
      }
      for (auto* p : params) p->zero_grad();
      ad::Graph g;
      ad::Var pooled = ad::matmul(g.constant(std::move(pool)), ad::embedding_lookup(g.param(*params[0]), ids));
      ad::Var hidden = ad::tanh(ad::add(ad::matmul(pooled, g.param(*params[1])), g.param(*params[2])));
      ad::Var logits = ad::add(ad::matmul(hidden, g.param(*params[3])), g.param(*params[4]));
      ad::Var loss = ad::scale(ad::sum(ad::gather(ad::log_softmax(logits), targets)), -1.0 / static_cast<double>(b));
      g.backward(loss);
      adam.step(params);
      epoch_loss += loss.value().item() * static_cast<double>(b);
    }
    result.report.train_loss = epoch_loss / static_cast<double>(train.size());
    const double f1 = evaluate(clf, valid.empty() ? train : valid).macro_f1;
    spdlog::info("train_judge: epoch {} loss {:.4f} valid macro-F1 {:.4f}", epoch, result.report.train_loss, f1);
    if (f1 > best_f1) {
      best_f1 = f1;
      best.clear();
      for (const auto* p : params) best.emplace_back(p->data().begin(), p->data().end());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(best[i].begin(), best[i].end(), params[i]->data().begin());
    params[i]->set_requires_grad(false);
  }
  result.report.valid_macro_f1 = best_f1;
  const auto test_eval = evaluate(clf, test);
  result.report.test_macro_f1 = test_eval.macro_f1;
  result.report.test_accuracy = test_eval.accuracy;
  return result;
}

std::vector<double> base_rate(const BiasClassifier& classifier, const std::vector<std::vector<TokenId>>& texts) {
  std::vector<double> scores;
  scores.reserve(texts.size());
  for (const auto& t : texts) scores.push_back(classifier.score(t));
  return scores;
}

}  // namespace debias::judge
