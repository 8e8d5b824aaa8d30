#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/autodiff/graph.hpp"
#include "debias/autodiff/tensor.hpp"
#include "debias/corpus/vocab.hpp"

namespace debias::lm {

using corpus::TokenId;

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t context_length = 128;
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;
  double init_std = 0.02;
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const LmConfig& c);
void from_json(const nlohmann::json& j, LmConfig& c);

struct Block {
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor qkv_weight, qkv_bias;  // [d x 3d], [1 x 3d]
  ad::Tensor out_weight, out_bias;  // [d x d], [1 x d]
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor fc_weight, fc_bias;      // [d x 4d], [1 x 4d]
  ad::Tensor proj_weight, proj_bias;  // [4d x d], [1 x d]
};

class DecodeState;

/// Pre-norm GPT-style decoder. The output projection is the token embedding
/// table itself: logits = h E^T where h is the final layer-normed state.
class TransformerLM {
 public:
  explicit TransformerLM(LmConfig config);

  const LmConfig& config() const noexcept { return config_; }
  std::size_t width() const noexcept { return config_.width; }
  std::size_t vocab_size() const noexcept { return config_.vocab_size; }

  /// Parameter order used by checkpoints: token embedding, position embedding,
  /// then per block ln1 (gain, bias), qkv (weight, bias), attention output
  /// (weight, bias), ln2 (gain, bias), fc (weight, bias), proj (weight, bias),
  /// and finally the last layer norm (gain, bias).
  std::vector<ad::Tensor*> parameters();
  std::vector<const ad::Tensor*> parameters() const;
  std::size_t parameter_count() const;

  const ad::Tensor& token_embedding() const noexcept { return token_embedding_; }
  /// Output projection; the same storage as token_embedding().
  const ad::Tensor& output_projection() const noexcept { return token_embedding_; }

  /// Final hidden states [n x d] with frozen weights.
  ad::Var hidden_graph(ad::Graph& g, std::span<const TokenId> ids) const;
  /// Same, with weights bound as parameters so backward() fills their grads.
  ad::Var train_hidden_graph(ad::Graph& g, std::span<const TokenId> ids);
  ad::Var logits_graph(ad::Graph& g, ad::Var hidden) const;
  ad::Var train_logits_graph(ad::Graph& g, ad::Var hidden);

  /// logits[v] = <E_v, h>, with h of length d.
  void project(std::span<const double> hidden, std::span<double> logits) const;

  void save(const std::filesystem::path& path) const;
  static TransformerLM load(const std::filesystem::path& path);

 private:
  friend class DecodeState;

  /// `bind(i)` turns parameters()[i] into a graph input.
  ad::Var assemble(std::span<const TokenId> ids, const std::function<ad::Var(std::size_t)>& bind) const;

  LmConfig config_;
  ad::Tensor token_embedding_;     // [V x d]
  ad::Tensor position_embedding_;  // [context x d]
  std::vector<Block> blocks_;
  ad::Tensor final_gain_, final_bias_;
};

/// Incremental decoding with cached keys and values. Tracks the last final
/// hidden state and the running mean of all final hidden states so far.
class DecodeState {
 public:
  explicit DecodeState(const TransformerLM& model);

  /// Feeds one token; returns the final hidden state at its position.
  std::span<const double> push(TokenId token);
  std::size_t length() const noexcept { return length_; }
  std::span<const double> last_hidden() const noexcept { return last_; }
  /// Mean of the final hidden states at positions 1..length.
  std::vector<double> accumulated_hidden() const;
  std::span<const double> hidden_sum() const noexcept { return sum_; }

 private:
  const TransformerLM* model_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_;    // per layer, [context x d]
  std::vector<std::vector<double>> values_;  // per layer, [context x d]
  std::vector<double> last_;
  std::vector<double> sum_;
  std::vector<double> x_, a_, qkv_, att_, mlp_;
};

struct ForwardStates {
  ad::Tensor hidden;             // [t x d] final-layer states
  std::vector<double> accumulated;  // mean of the rows of `hidden`
  std::vector<double> logits;    // next-token logits after position t
  std::vector<double> distribution;
};

/// Runs the cached decoder over `ids` (1 <= t <= context length).
ForwardStates forward_states(const TransformerLM& model, std::span<const TokenId> ids);

/// Numerically stable softmax of a logit vector.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace debias::lm
