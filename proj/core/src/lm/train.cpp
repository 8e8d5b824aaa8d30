#include "debias/lm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "debias/autodiff/ops.hpp"
#include "debias/autodiff/optim.hpp"

namespace debias::lm {
namespace {

std::vector<std::vector<double>> snapshot(const TransformerLM& model) {
  std::vector<std::vector<double>> out;
  for (const auto* t : model.parameters()) out.emplace_back(t->data().begin(), t->data().end());
  return out;
}

void restore(TransformerLM& model, const std::vector<std::vector<double>>& weights) {
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(weights[i].begin(), weights[i].end(), params[i]->data().begin());
}

double schedule(const TrainConfig& c, std::size_t step, std::size_t total) {
  if (step < c.warmup_steps) return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  const double span = static_cast<double>(std::max<std::size_t>(1, total - std::min(total, c.warmup_steps)));
  const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / span);
  return c.min_learning_rate + 0.5 * (c.learning_rate - c.min_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"min_learning_rate", c.min_learning_rate},
                     {"warmup_steps", c.warmup_steps},
                     {"grad_clip", c.grad_clip},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("min_learning_rate", c.min_learning_rate);
  get("warmup_steps", c.warmup_steps);
  get("grad_clip", c.grad_clip);
  get("seed", c.seed);
}

std::vector<TokenId> training_sequence(const corpus::Document& doc) {
  std::vector<TokenId> seq;
  seq.reserve(doc.tokens.size() + 2);
  seq.push_back(corpus::kEotId);
  seq.insert(seq.end(), doc.tokens.begin(), doc.tokens.end());
  seq.push_back(corpus::kEotId);
  return seq;
}

double mean_token_nll(const TransformerLM& model, const std::vector<corpus::Document>& docs) {
  if (docs.empty()) throw std::invalid_argument("mean_token_nll: no documents");
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> logits(model.vocab_size());
  for (const auto& doc : docs) {
    const auto seq = training_sequence(doc);
    DecodeState state(model);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      model.project(state.push(seq[t]), logits);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      total += mx + std::log(z) - logits[seq[t + 1]];
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

TrainResult train_lm(const std::vector<corpus::Document>& train, const std::vector<corpus::Document>& valid,
                     const LmConfig& model_config, const TrainConfig& tc) {
  if (train.empty() || valid.empty()) throw std::invalid_argument("train_lm: empty train or validation set");
  if (tc.batch_size == 0) throw std::invalid_argument("train_lm: batch_size must be positive");
  for (const auto* set : {&train, &valid}) {
    for (const auto& d : *set) {
      if (d.tokens.size() + 1 > model_config.context_length) {
        throw std::invalid_argument("train_lm: document of " + std::to_string(d.tokens.size()) +
                                    " tokens does not fit context length " +
                                    std::to_string(model_config.context_length));
      }
    }
  }

  TrainResult result{TransformerLM(model_config), 0.0, 0.0, 0.0, {}, false};
  TransformerLM& model = result.model;
  const auto params = model.parameters();
  for (auto* p : params) p->set_requires_grad(true);
  ad::AdamState adam(ad::AdamConfig{tc.learning_rate, 0.9, 0.999, 1e-8}, params);

  result.initial_train_loss = mean_token_nll(model, train);
  result.initial_valid_loss = mean_token_nll(model, valid);
  result.best_valid_loss = result.initial_valid_loss;
  auto best = snapshot(model);
  spdlog::info("train_lm: {} parameters, initial loss train {:.4f} valid {:.4f}", model.parameter_count(),
               result.initial_train_loss, result.initial_valid_loss);

  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t steps_per_epoch = (train.size() + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = steps_per_epoch * tc.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs && !result.diverged; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t i = start; i < end; ++i) batch_tokens += train[order[i]].tokens.size() + 1;
      for (auto* p : params) p->zero_grad();
      double batch_loss = 0.0;
      try {
        for (std::size_t i = start; i < end; ++i) {
          const auto seq = training_sequence(train[order[i]]);
          const std::span<const TokenId> inputs(seq.data(), seq.size() - 1);
          std::vector<std::pair<std::size_t, std::size_t>> targets;
          for (std::size_t t = 0; t + 1 < seq.size(); ++t) targets.emplace_back(t, seq[t + 1]);
          ad::Graph g;
          ad::Var h = model.train_hidden_graph(g, inputs);
          ad::Var logp = ad::log_softmax(model.train_logits_graph(g, h));
          ad::Var loss = ad::scale(ad::sum(ad::gather(logp, targets)), -1.0 / static_cast<double>(batch_tokens));
          if (!std::isfinite(loss.value().item())) throw ad::NonFiniteError("train_lm: non-finite loss");
          g.backward(loss);
          batch_loss += loss.value().item();
        }
        ad::clip_grad_norm(params, tc.grad_clip);
        adam.set_learning_rate(schedule(tc, step, total_steps));
        adam.step(params);
      } catch (const ad::NonFiniteError& e) {
        spdlog::error("train_lm: diverged at step {} ({}); restoring best weights", step, e.what());
        result.diverged = true;
        break;
      }
      epoch_loss += batch_loss * static_cast<double>(batch_tokens);
      epoch_tokens += batch_tokens;
    }
    if (result.diverged) break;
    EpochStats stats{epoch, epoch_loss / static_cast<double>(std::max<std::size_t>(1, epoch_tokens)),
                     mean_token_nll(model, valid)};
    if (!std::isfinite(stats.valid_loss)) {
      spdlog::error("train_lm: non-finite validation loss after epoch {}; restoring best weights", epoch);
      result.diverged = true;
      break;
    }
    result.history.push_back(stats);
    spdlog::info("train_lm: epoch {} train {:.4f} valid {:.4f}", epoch, stats.train_loss, stats.valid_loss);
    if (stats.valid_loss < result.best_valid_loss) {
      result.best_valid_loss = stats.valid_loss;
      best = snapshot(model);
      if (tc.checkpoint_path) model.save(*tc.checkpoint_path);
    }
  }
  restore(model, best);
  for (auto* p : params) p->set_requires_grad(false);
  return result;
}

}  // namespace debias::lm
