#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace debias::lm {

/// Word n-gram model with add-k smoothing over padded sentences: each text
/// gets order-1 <s> symbols in front and a </s> at the end. The predicted
/// vocabulary is every training word plus </s> and <unk>.
class NGramLM {
 public:
  NGramLM(std::size_t order, double add_k);

  void fit(const std::vector<std::string>& texts);

  std::size_t order() const noexcept { return order_; }
  double add_k() const noexcept { return add_k_; }
  std::size_t vocab_size() const noexcept { return words_.size(); }
  const std::vector<std::string>& vocabulary() const noexcept { return words_; }

  /// P(word | context); `context` holds the previous order-1 symbols
  /// (use "<s>" for padding). Contexts never seen in training are uniform.
  double probability(const std::vector<std::string>& context, const std::string& word) const;

  /// Sum of -ln P over the predicted symbols of `text` and their count.
  std::pair<double, std::size_t> negative_log_likelihood(const std::string& text) const;

 private:
  struct ContextCounts {
    std::size_t total = 0;
    std::unordered_map<std::size_t, std::size_t> next;
  };

  std::vector<std::size_t> padded_ids(const std::string& text) const;
  std::string key(const std::size_t* context) const;
  double probability_ids(const std::string& context_key, std::size_t word) const;

  std::size_t order_;
  double add_k_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, ContextCounts> counts_;
};

inline constexpr const char* kSentenceStart = "<s>";
inline constexpr const char* kSentenceEnd = "</s>";
inline constexpr const char* kUnknownWord = "<unk>";

NGramLM train_ngram(const std::vector<std::string>& texts, std::size_t order = 3, double add_k = 0.1);

/// exp of the mean per-symbol negative log-likelihood over all texts.
double perplexity(const NGramLM& model, const std::vector<std::string>& texts);

}  // namespace debias::lm
