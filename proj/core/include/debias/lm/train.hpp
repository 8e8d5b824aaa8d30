#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/corpus/document.hpp"
#include "debias/lm/transformer.hpp"

namespace debias::lm {

struct TrainConfig {
  std::size_t epochs = 6;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  double min_learning_rate = 3e-4;
  std::size_t warmup_steps = 50;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  /// Written on every validation improvement when set.
  std::optional<std::filesystem::path> checkpoint_path;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

struct TrainResult {
  TransformerLM model;
  double initial_train_loss = 0.0;
  double initial_valid_loss = 0.0;
  double best_valid_loss = 0.0;
  std::vector<EpochStats> history;
  /// Set when a non-finite loss or gradient stopped training; `model` then
  /// holds the last good weights.
  bool diverged = false;
};

/// Model input for a document: <eot> as start token, the document, then <eot>.
std::vector<TokenId> training_sequence(const corpus::Document& doc);

/// Mean next-token negative log-likelihood over the documents (nats/token).
double mean_token_nll(const TransformerLM& model, const std::vector<corpus::Document>& docs);

/// Adam on next-token cross-entropy with warmup and cosine decay; keeps the
/// weights with the best validation loss.
TrainResult train_lm(const std::vector<corpus::Document>& train, const std::vector<corpus::Document>& valid,
                     const LmConfig& model_config, const TrainConfig& train_config);

}  // namespace debias::lm
