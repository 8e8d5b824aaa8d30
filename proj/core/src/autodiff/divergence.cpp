#include "debias/autodiff/divergence.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace debias::ad {
namespace {

void check_simplex(std::span<const double> v, const char* name) {
  double total = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) throw std::invalid_argument(std::string("kl_categorical: ") + name + " has a negative entry");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument(std::string("kl_categorical: ") + name + " sums to " + std::to_string(total));
  }
}

}  // namespace

KlResult kl_categorical(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("kl_categorical: length " + std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()));
  }
  check_simplex(p, "p");
  check_simplex(q, "q");
  KlResult out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    double qi = q[i];
    if (qi <= 0.0) {
      qi = kProbabilityFloor;
      out.clamped = true;
    }
    out.value += p[i] * std::log(p[i] / qi);
  }
  // Rounding can leave tiny negatives when p ~= q.
  if (out.value < 0.0) out.value = 0.0;
  return out;
}

}  // namespace debias::ad
