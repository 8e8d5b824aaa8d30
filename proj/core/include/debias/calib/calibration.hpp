#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/corpus/lexicon.hpp"
#include "debias/corpus/vocab.hpp"
#include "debias/judge/debias_head.hpp"
#include "debias/lm/sampling.hpp"
#include "debias/lm/transformer.hpp"

namespace debias::calib {

using corpus::TokenId;

/// emb: gain from distances to the bias word lists.
/// cls: gain from the debias head's neutrality.
enum class Mode { Emb, Cls };

std::string_view to_string(Mode mode) noexcept;
Mode parse_mode(std::string_view text);
/// KL threshold used when the config does not set one.
double default_sigma(Mode mode) noexcept;

struct CalibrationConfig {
  Mode mode = Mode::Cls;
  double lambda0 = 0.6;
  double sigma = 0.05;
  std::size_t steps = 15;  // inner Adam steps per token
  std::size_t window = 5;  // past steps kept by the cls gain
  double gamma = 0.9;  // discount over the cls window
  double learning_rate = 0.02;
  double lambda_min = 1e-3;
  double lambda_max = 10.0;
  /// What the inner loop maximises as the reward. "expected": its mean over
  /// the vanilla policy's choice of token, which equals the gain because the
  /// gain does not depend on that choice. "sampled": ratio * gain for the one
  /// vanilla sample.
  std::string reward = "expected";
};

/// Empty when valid (lambda0 = 0 is always accepted as zero strength), otherwise one message per violated constraint.
std::vector<std::string> validate(const CalibrationConfig& config);

void to_json(nlohmann::json& j, const CalibrationConfig& c);
/// Missing keys keep their defaults; a missing sigma follows the mode.
void from_json(const nlohmann::json& j, CalibrationConfig& c);

/// Bias words resolved to vocabulary ids.
struct BiasWordIds {
  std::vector<TokenId> liberal;
  std::vector<TokenId> conservative;
  std::size_t skipped = 0;  // words missing from the vocabulary
};
BiasWordIds resolve_bias_words(const corpus::BiasLexicon& lexicon, const corpus::Vocab& vocab);

/// -ln p(w) under softmax(E state), the LM's tied output projection.
double dist_to_word(const lm::TransformerLM& model, std::span<const double> state, TokenId word);
/// S_L^2 + S_C^2 - |S_L - S_C| for summed distances.
double mode1_gain(double liberal_distance, double conservative_distance) noexcept;
/// Sums dist_to_word over each list and combines them. Throws when both lists are empty.
double mode1_gain(const lm::TransformerLM& model, std::span<const double> state, const BiasWordIds& words);

/// Cross-entropy against the head's own decision: p clamped to [1e-12, 1 - 1e-12],
/// y = 1 when p >= 0.5, r = -[y ln p + (1 - y) ln(1 - p)].
double mode2_step_gain(double p) noexcept;
/// Discounted mean over the last min(size, window + 1) entries of `gains`
/// (oldest first); the newest entry has weight 1.
double mode2_gain(std::span<const double> gains, double discount, std::size_t window);

/// (p_debiased / p_vanilla) * gain, both probabilities clamped below at 1e-12.
double reward(double p_debiased, double p_vanilla, double gain) noexcept;

/// Halves lambda when kl >= 2 sigma, doubles it when kl <= sigma / 2. A change
/// that would leave [lambda_min, lambda_max] is skipped, so successive values
/// always differ by a factor in {0.5, 1, 2}.
double update_lambda(double lambda, double kl, const CalibrationConfig& config) noexcept;

struct TraceEntry {
  std::size_t step = 0;
  double lambda = 0.0;  // value used for this token
  double kl = 0.0;
  double gain = 0.0;
  double reward = 0.0;  // ratio * gain for the vanilla sample, whichever reward is optimised
  TokenId token_id = 0;
  TokenId vanilla_token_id = 0;
  bool reverted = false;
  double objective_initial = 0.0;  // at zero perturbation
  double objective_final = 0.0;
};

void to_json(nlohmann::json& j, const TraceEntry& e);
void from_json(const nlohmann::json& j, TraceEntry& e);
void write_trace_jsonl(const std::filesystem::path& path, std::span<const TraceEntry> trace);

/// What each mode needs besides the LM. Pointers are borrowed.
struct ModeInputs {
  const BiasWordIds* words = nullptr;
  const judge::DebiasHead* head = nullptr;
};

/// Per-sequence calibration state: lambda and the recent cls gains.
class TokenCalibrator {
 public:
  TokenCalibrator(const lm::TransformerLM& model, CalibrationConfig config, ModeInputs inputs,
                  lm::DecodeConfig decode);

  /// Chooses the next token for a context whose last final hidden state is
  /// `last_hidden` and whose mean final hidden state is `accumulated`. The
  /// vanilla token and the emitted token are both drawn with `u`.
  TraceEntry step(std::span<const double> last_hidden, std::span<const double> accumulated, double u);

  double lambda() const noexcept { return lambda_; }
  std::span<const double> gain_history() const noexcept { return history_; }

 private:
  const lm::TransformerLM* model_;
  CalibrationConfig config_;
  ModeInputs inputs_;
  lm::DecodeConfig decode_;
  double lambda_;
  std::size_t steps_done_ = 0;
  std::vector<double> history_;
  std::vector<std::pair<std::size_t, std::size_t>> liberal_at_, conservative_at_;
  std::string head_state_;
  bool expected_reward_ = true;
};

struct DebiasedGeneration {
  std::vector<TokenId> token_ids;
  std::vector<TraceEntry> trace;
};

/// Same budget, stopping rule and random stream as lm::generate_vanilla, with
/// every token chosen by a TokenCalibrator.
DebiasedGeneration generate_debiased(const lm::TransformerLM& model, std::span<const TokenId> prompt,
                                     std::size_t steps, const lm::DecodeConfig& decode,
                                     const CalibrationConfig& config, const ModeInputs& inputs, std::uint64_t seed);

}  // namespace debias::calib
