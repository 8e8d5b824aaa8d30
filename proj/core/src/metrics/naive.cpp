#include "debias/metrics/naive.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "debias/autodiff/kernels.hpp"

namespace debias::metrics {

NaiveSwapper::NaiveSwapper(const ad::Tensor& embedding, std::span<const TokenId> bias_words) {
  const std::size_t v = embedding.rows(), d = embedding.cols();
  const std::unordered_set<TokenId> bias(bias_words.begin(), bias_words.end());
  std::vector<double> norm(v);
  const double* e = embedding.data().data();
  for (std::size_t i = 0; i < v; ++i) norm[i] = std::sqrt(ad::kernels::dot(e + i * d, e + i * d, d));

  std::vector<TokenId> candidates;
  for (TokenId i = corpus::kReservedCount; i < v; ++i) {
    if (!bias.count(i) && norm[i] > 0.0) candidates.push_back(i);
  }
  if (candidates.empty() && !bias.empty()) throw std::invalid_argument("NaiveSwapper: no replacement candidates");

  for (TokenId w : bias) {
    if (w >= v) throw std::out_of_range("NaiveSwapper: bias word id outside the embedding table");
    TokenId best = candidates.front();
    double best_cos = -std::numeric_limits<double>::infinity();
    for (TokenId c : candidates) {
      const double cos = norm[w] > 0.0 ? ad::kernels::dot(e + w * d, e + c * d, d) / (norm[w] * norm[c]) : 0.0;
      if (cos > best_cos) {
        best_cos = cos;
        best = c;
      }
    }
    table_.emplace(w, best);
  }
}

TokenId NaiveSwapper::replacement(TokenId id) const {
  const auto it = table_.find(id);
  return it == table_.end() ? id : it->second;
}

std::vector<TokenId> NaiveSwapper::apply(std::span<const TokenId> ids) const {
  std::vector<TokenId> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(replacement(id));
  return out;
}

}  // namespace debias::metrics
