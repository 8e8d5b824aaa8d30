#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/autodiff/tensor.hpp"
#include "debias/corpus/document.hpp"
#include "debias/corpus/vocab.hpp"

namespace debias::judge {

using corpus::TokenId;

struct ClassifierConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_width = 64;
  std::size_t hidden = 64;
  std::size_t epochs = 8;
  std::size_t batch_size = 32;
  double learning_rate = 5e-3;
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

/// Measurement classifier: mean-pooled token embeddings, dense, tanh, dense,
/// two-way softmax. Class 1 is conservative, so score() is P(C | text).
class BiasClassifier {
 public:
  explicit BiasClassifier(ClassifierConfig config);

  const ClassifierConfig& config() const noexcept { return config_; }
  /// Order: embedding [V x e], dense1 weight [e x h], dense1 bias, dense2 weight [h x 2], dense2 bias.
  std::vector<ad::Tensor*> parameters();
  std::vector<const ad::Tensor*> parameters() const;

  /// P(conservative). Throws std::invalid_argument on an empty sequence.
  double score(std::span<const TokenId> ids) const;

  void save(const std::filesystem::path& path) const;
  static BiasClassifier load(const std::filesystem::path& path);

 private:
  ClassifierConfig config_;
  ad::Tensor embedding_, w1_, b1_, w2_, b2_;
};

/// Macro-averaged F1 over the two classes.
double macro_f1(std::span<const int> predicted, std::span<const int> actual);

struct JudgeReport {
  double train_loss = 0.0;
  double valid_macro_f1 = 0.0;
  double test_macro_f1 = 0.0;
  double test_accuracy = 0.0;
};

struct JudgeTrainResult {
  BiasClassifier classifier;
  JudgeReport report;
};

/// Cross-entropy training with Adam; keeps the epoch with the best validation
/// macro-F1. Throws when the training set has a single class.
JudgeTrainResult train_judge(const std::vector<corpus::Document>& train, const std::vector<corpus::Document>& valid,
                             const std::vector<corpus::Document>& test, const ClassifierConfig& config);

/// Score per text, order preserved.
std::vector<double> base_rate(const BiasClassifier& classifier, const std::vector<std::vector<TokenId>>& texts);

}  // namespace debias::judge
