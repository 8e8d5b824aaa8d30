#pragma once

#include <string>
#include <vector>

#include "debias/corpus/document.hpp"
#include "debias/corpus/vocab.hpp"

namespace debias::corpus {

struct BiasLexicon {
  std::vector<std::string> liberal;
  std::vector<std::string> conservative;
  /// True when either side had fewer than k skewed words.
  bool short_list = false;
};

/// Per-word class skew: mean TF-IDF over L documents minus mean over C
/// documents, with TF = count / length and IDF = ln(N / (1 + df)) + 1.
/// Indexed by token id; reserved ids score 0.
std::vector<double> tfidf_class_skew(const std::vector<Document>& docs, std::size_t vocab_size);

/// The k most L-skewed (positive) and k most C-skewed (negative) words.
/// Ties break on the word string. Throws unless both classes are present.
BiasLexicon extract_bias_words(const std::vector<Document>& docs, const Vocab& vocab, std::size_t k = 250);

}  // namespace debias::corpus
