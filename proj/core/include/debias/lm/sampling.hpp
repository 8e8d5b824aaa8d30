#pragma once

#include <cstdint>
#include <random>
#include <span>

#include <nlohmann/json_fwd.hpp>

#include "debias/corpus/vocab.hpp"

namespace debias::lm {

struct DecodeConfig {
  /// 0 or >= vocab size samples from the full distribution; 1 is greedy.
  std::size_t top_k = 40;
  double temperature = 1.0;
};

void to_json(nlohmann::json& j, const DecodeConfig& c);
void from_json(const nlohmann::json& j, DecodeConfig& c);

/// One uniform draw in [0, 1) with 53 random bits.
inline double next_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Inverse-CDF sampling from the top-k renormalised softmax(logits / T) with
/// a caller-supplied uniform `u`. Candidates are ordered by descending logit,
/// ties going to the lower id, so top_k = 1 is argmax for every u.
corpus::TokenId sample_token(std::span<const double> logits, const DecodeConfig& decode, double u);

}  // namespace debias::lm
