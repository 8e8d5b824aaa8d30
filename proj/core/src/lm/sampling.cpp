#include "debias/lm/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

namespace debias::lm {

void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = nlohmann::json{{"top_k", c.top_k}, {"temperature", c.temperature}};
}

void from_json(const nlohmann::json& j, DecodeConfig& c) {
  c = DecodeConfig{};
  if (j.contains("top_k")) j.at("top_k").get_to(c.top_k);
  if (j.contains("temperature")) j.at("temperature").get_to(c.temperature);
}

corpus::TokenId sample_token(std::span<const double> logits, const DecodeConfig& decode, double u) {
  if (logits.empty()) throw std::invalid_argument("sample_token: empty logits");
  if (!(decode.temperature > 0.0)) throw std::invalid_argument("sample_token: temperature must be positive");
  const std::size_t n = logits.size();
  const std::size_t k = decode.top_k == 0 ? n : std::min(decode.top_k, n);
  auto better = [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); };
  if (k == 1) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (better(i, best)) best = i;
    }
    return best;
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  const double top = logits[idx[0]];
  std::vector<double> w(k);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += w[i] = std::exp((logits[idx[i]] - top) / decode.temperature);
  const double target = u * z;
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    acc += w[i];
    if (target < acc) return idx[i];
  }
  return idx[k - 1];
}

}  // namespace debias::lm
