#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "debias/autodiff/tensor.hpp"
#include "debias/corpus/vocab.hpp"

namespace debias::metrics {

using corpus::TokenId;

/// Word-swap baseline: each bias word is replaced by its nearest cosine
/// neighbour among the non-bias, non-reserved rows of an embedding table
/// (ties go to the lower id).
class NaiveSwapper {
 public:
  NaiveSwapper(const ad::Tensor& embedding, std::span<const TokenId> bias_words);

  /// Replacement for a bias word; other ids map to themselves.
  TokenId replacement(TokenId id) const;
  std::vector<TokenId> apply(std::span<const TokenId> ids) const;
  const std::unordered_map<TokenId, TokenId>& table() const noexcept { return table_; }

 private:
  std::unordered_map<TokenId, TokenId> table_;
};

}  // namespace debias::metrics
