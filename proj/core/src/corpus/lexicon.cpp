#include "debias/corpus/lexicon.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include <spdlog/spdlog.h>

namespace debias::corpus {

std::vector<double> tfidf_class_skew(const std::vector<Document>& docs, std::size_t vocab_size) {
  std::size_t n_class[2] = {0, 0};
  for (const auto& d : docs) ++n_class[class_index(d.label)];
  if (n_class[0] == 0 || n_class[1] == 0) throw std::invalid_argument("extract_bias_words: both classes are required");

  std::vector<std::size_t> df(vocab_size, 0);
  std::vector<std::unordered_map<TokenId, std::size_t>> counts(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (TokenId t : docs[i].tokens) {
      if (t >= vocab_size) throw std::out_of_range("extract_bias_words: token id outside vocabulary");
      if (counts[i][t]++ == 0) ++df[t];
    }
  }
  const auto n = static_cast<double>(docs.size());
  std::vector<double> class_mean[2] = {std::vector<double>(vocab_size, 0.0), std::vector<double>(vocab_size, 0.0)};
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const int c = class_index(docs[i].label);
    const double len = static_cast<double>(docs[i].tokens.size());
    for (const auto& [t, cnt] : counts[i]) {
      const double idf = std::log(n / (1.0 + static_cast<double>(df[t]))) + 1.0;
      class_mean[c][t] += (static_cast<double>(cnt) / len) * idf / static_cast<double>(n_class[c]);
    }
  }
  std::vector<double> skew(vocab_size, 0.0);
  for (std::size_t t = kReservedCount; t < vocab_size; ++t) {
    const double l = class_mean[0][t];
    const double c = class_mean[1][t];
    // Summation order differs between classes; differences at rounding level count as no skew.
    if (std::abs(l - c) > 1e-12 * std::max(l, c)) skew[t] = l - c;
  }
  return skew;
}

BiasLexicon extract_bias_words(const std::vector<Document>& docs, const Vocab& vocab, std::size_t k) {
  if (k == 0) throw std::invalid_argument("extract_bias_words: k must be at least 1");
  const auto skew = tfidf_class_skew(docs, vocab.size());

  auto pick = [&](double sign) {
    std::vector<TokenId> ids;
    for (TokenId t = kReservedCount; t < vocab.size(); ++t) {
      if (sign * skew[t] > 0.0) ids.push_back(t);
    }
    std::sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) {
      const double sa = sign * skew[a];
      const double sb = sign * skew[b];
      if (sa != sb) return sa > sb;
      return vocab.word(a) < vocab.word(b);
    });
    if (ids.size() > k) ids.resize(k);
    std::vector<std::string> words;
    for (TokenId t : ids) words.push_back(vocab.word(t));
    return words;
  };

  BiasLexicon lex{pick(1.0), pick(-1.0)};
  lex.short_list = lex.liberal.size() < k || lex.conservative.size() < k;
  if (lex.short_list) {
    spdlog::warn("extract_bias_words: asked for {} words per class, found {} liberal and {} conservative", k,
                 lex.liberal.size(), lex.conservative.size());
  }
  return lex;
}

}  // namespace debias::corpus
