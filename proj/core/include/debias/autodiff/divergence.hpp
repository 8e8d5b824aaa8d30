#pragma once

#include <span>

namespace debias::ad {

inline constexpr double kProbabilityFloor = 1e-12;

struct KlResult {
  double value = 0.0;
  /// Set when some q_i == 0 had p_i > 0 and was clamped to kProbabilityFloor.
  bool clamped = false;
};

/// KL(p || q) = sum_i p_i ln(p_i / q_i) with 0 ln(0/q) = 0.
/// Both vectors must be the same length, non-negative and sum to 1 within 1e-6.
KlResult kl_categorical(std::span<const double> p, std::span<const double> q);

}  // namespace debias::ad
