#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/autodiff/graph.hpp"
#include "debias/corpus/document.hpp"
#include "debias/lm/transformer.hpp"

namespace debias::judge {

struct HeadConfig {
  std::size_t width = 64;  // must equal the LM width
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 3e-3;
  /// Training examples are accumulated states after every `prefix_stride`
  /// tokens, starting at `min_prefix`, plus the full document.
  std::size_t prefix_stride = 8;
  std::size_t min_prefix = 8;
  /// Which LM state the head reads: "mean" (accumulated), "last", or "next",
  /// the expected embedding of the next token under softmax(E last).
  std::string state = "next";
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const HeadConfig& c);
void from_json(const nlohmann::json& j, HeadConfig& c);

/// Reward classifier over an LM state (see HeadConfig::state):
/// dense(d -> d), tanh, dense(d -> 2). Class 1 is conservative.
class DebiasHead {
 public:
  explicit DebiasHead(HeadConfig config);

  const HeadConfig& config() const noexcept { return config_; }
  /// Order: dense1 weight [d x d], dense1 bias, dense2 weight [d x 2], dense2 bias.
  std::vector<ad::Tensor*> parameters();
  std::vector<const ad::Tensor*> parameters() const;

  /// Two-class logits [rows x 2] for states [rows x d], weights frozen.
  ad::Var logits_graph(ad::Graph& g, ad::Var states) const;
  /// P(conservative | state).
  double probability(std::span<const double> state) const;

  void save(const std::filesystem::path& path) const;
  static DebiasHead load(const std::filesystem::path& path);

 private:
  HeadConfig config_;
  ad::Tensor w1_, b1_, w2_, b2_;
};

struct HeadTrainResult {
  DebiasHead head;
  double train_accuracy = 0.0;
  /// On full-document states of the test split.
  double test_accuracy = 0.0;
  /// On every prefix state of the test split.
  double test_prefix_accuracy = 0.0;
};

/// The head input at one decoding position. Throws on an unknown state name.
std::vector<double> head_input(const lm::TransformerLM& lm, std::string_view state, std::span<const double> last,
                               std::span<const double> accumulated);

/// Per-position features of labelled documents under a frozen LM.
struct HeadDataset {
  std::vector<std::vector<double>> states;
  std::vector<int> labels;
};
/// With `full_only`, one state per document: after its last token, or for
/// "next" before it, since the state after it only predicts the end token.
HeadDataset head_features(const lm::TransformerLM& lm, const std::vector<corpus::Document>& docs,
                          const HeadConfig& config, bool full_only = false);

/// Trains the head on prefix features; the LM is never modified.
HeadTrainResult train_debias_head(const lm::TransformerLM& lm, const std::vector<corpus::Document>& train,
                                  const std::vector<corpus::Document>& test, const HeadConfig& config);

}  // namespace debias::judge
