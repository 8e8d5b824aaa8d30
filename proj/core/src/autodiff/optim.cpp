#include "debias/autodiff/optim.hpp"

#include <cmath>
#include <string>

namespace debias::ad {
namespace {

void check_finite(std::span<const double> g, std::size_t slot) {
  for (double v : g) {
    if (!std::isfinite(v)) throw NonFiniteError("adam_step: non-finite gradient in parameter " + std::to_string(slot));
  }
}

}  // namespace

AdamState::AdamState(AdamConfig config, std::span<const std::size_t> parameter_sizes) : config_(config) {
  for (auto n : parameter_sizes) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

AdamState::AdamState(AdamConfig config, std::span<Tensor* const> parameters) : config_(config) {
  for (const Tensor* p : parameters) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamState::update(std::size_t slot, std::span<double> parameter, std::span<const double> gradient, double c1,
                       double c2) {
  auto& m = m_[slot];
  auto& v = v_[slot];
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  for (std::size_t i = 0; i < parameter.size(); ++i) {
    const double g = gradient[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    parameter[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
  }
}

void AdamState::step(std::span<Tensor* const> parameters) {
  if (parameters.size() != m_.size()) throw std::invalid_argument("adam_step: parameter list does not match state");
  for (std::size_t s = 0; s < parameters.size(); ++s) {
    if (parameters[s]->size() != m_[s].size()) {
      throw ShapeError("adam_step", "parameter " + std::to_string(s) + " " + to_string(parameters[s]->shape()));
    }
    if (parameters[s]->has_grad()) check_finite(parameters[s]->grad(), s);
  }
  ++step_count_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (std::size_t s = 0; s < parameters.size(); ++s) {
    if (!parameters[s]->has_grad()) continue;
    update(s, parameters[s]->data(), parameters[s]->grad(), c1, c2);
  }
}

void AdamState::step(std::span<double> parameter, std::span<const double> gradient) {
  if (m_.size() != 1 || parameter.size() != m_[0].size() || gradient.size() != parameter.size()) {
    throw ShapeError("adam_step", "flat buffer of " + std::to_string(parameter.size()) + " values");
  }
  check_finite(gradient, 0);
  ++step_count_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  update(0, parameter, gradient, c1, c2);
}

double clip_grad_norm(std::span<Tensor* const> parameters, double max_norm) {
  double sq = 0.0;
  for (const Tensor* p : parameters) {
    if (!p->has_grad()) continue;
    for (double g : p->grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Tensor* p : parameters) {
      if (!p->has_grad()) continue;
      for (double& g : p->grad()) g *= f;
    }
  }
  return norm;
}

}  // namespace debias::ad
