#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace debias::corpus {

using TokenId = std::size_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kEotId = 2;
inline constexpr std::size_t kReservedCount = 3;

/// Splits on whitespace and detaches the punctuation marks , . ? ! ; : from
/// word edges, so "Trump, because" -> {"Trump", ",", "because"}.
std::vector<std::string> split_words(std::string_view text);

/// Inverse of split_words for normalised text: single spaces between words and
/// no space before punctuation.
std::string join_words(std::span<const std::string> words);

bool is_punctuation(std::string_view word) noexcept;

class Vocab {
 public:
  Vocab();
  /// Ids 0..2 are <pad>, <unk>, <eot>; the rest follow in the given order.
  explicit Vocab(std::vector<std::string> words);

  std::size_t size() const noexcept { return words_.size(); }
  bool contains(std::string_view word) const;
  /// kUnkId for unknown words.
  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const;
  const std::vector<std::string>& words() const noexcept { return words_; }
  static bool is_reserved(TokenId id) noexcept { return id < kReservedCount; }

  std::vector<TokenId> encode(std::string_view text) const;
  /// Reserved ids are dropped.
  std::string decode(std::span<const TokenId> ids) const;

  bool operator==(const Vocab& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Vocabulary over every word in `texts` plus `extra_words`, ordered by
/// descending count and then lexicographically. Throws on an empty corpus.
Vocab build_vocab(std::span<const std::string> texts, std::span<const std::string> extra_words = {});

inline std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) { return vocab.encode(text); }
inline std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab) { return vocab.decode(ids); }

}  // namespace debias::corpus
