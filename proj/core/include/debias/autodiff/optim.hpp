#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "debias/autodiff/tensor.hpp"

namespace debias::ad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers are laid out to match the
/// parameter list given at construction; every step must pass the same list.
class AdamState {
 public:
  AdamState(AdamConfig config, std::span<const std::size_t> parameter_sizes);
  AdamState(AdamConfig config, std::span<Tensor* const> parameters);

  /// Applies one update using each parameter's gradient buffer.
  /// Throws NonFiniteError (before touching any parameter) on NaN/Inf gradients.
  void step(std::span<Tensor* const> parameters);
  /// Single flat buffer variant; requires a state built for one parameter.
  void step(std::span<double> parameter, std::span<const double> gradient);

  std::uint64_t step_count() const noexcept { return step_count_; }
  const AdamConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }
  const std::vector<std::vector<double>>& first_moment() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moment() const noexcept { return v_; }

 private:
  void update(std::size_t slot, std::span<double> parameter, std::span<const double> gradient, double c1, double c2);

  AdamConfig config_;
  std::uint64_t step_count_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor* const> parameters, double max_norm);

}  // namespace debias::ad
