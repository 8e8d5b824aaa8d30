#include "debias/lm/ngram.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <stdexcept>

#include "debias/corpus/vocab.hpp"

namespace debias::lm {
namespace {

// Id reserved for the padding symbol; it is a context symbol only and never predicted.
constexpr std::size_t kStartId = static_cast<std::size_t>(-1);

}  // namespace

NGramLM::NGramLM(std::size_t order, double add_k) : order_(order), add_k_(add_k) {
  if (order < 1) throw std::invalid_argument("NGramLM: order must be at least 1");
  if (!(add_k >= 0.0)) throw std::invalid_argument("NGramLM: add-k constant must be non-negative");
}

std::string NGramLM::key(const std::size_t* context) const {
  std::string k((order_ - 1) * sizeof(std::size_t), '\0');
  if (order_ > 1) std::memcpy(k.data(), context, k.size());
  return k;
}

std::vector<std::size_t> NGramLM::padded_ids(const std::string& text) const {
  std::vector<std::size_t> ids(order_ - 1, kStartId);
  const std::size_t unk = index_.at(kUnknownWord);
  for (const auto& w : corpus::split_words(text)) {
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? unk : it->second);
  }
  ids.push_back(index_.at(kSentenceEnd));
  return ids;
}

void NGramLM::fit(const std::vector<std::string>& texts) {
  if (texts.empty()) throw std::invalid_argument("train_ngram: no texts");
  std::map<std::string, int> seen;
  for (const auto& t : texts) {
    for (auto& w : corpus::split_words(t)) seen.emplace(std::move(w), 0);
  }
  seen.erase(kSentenceStart);
  words_.clear();
  index_.clear();
  counts_.clear();
  for (const char* special : {kSentenceEnd, kUnknownWord}) {
    index_.emplace(special, words_.size());
    words_.emplace_back(special);
  }
  for (const auto& [w, unused] : seen) {
    if (index_.emplace(w, words_.size()).second) words_.push_back(w);
  }
  for (const auto& t : texts) {
    const auto ids = padded_ids(t);
    for (std::size_t i = order_ - 1; i < ids.size(); ++i) {
      auto& c = counts_[key(ids.data() + i - (order_ - 1))];
      ++c.total;
      ++c.next[ids[i]];
    }
  }
}

double NGramLM::probability_ids(const std::string& context_key, std::size_t word) const {
  const double v = static_cast<double>(words_.size());
  auto it = counts_.find(context_key);
  if (it == counts_.end()) return 1.0 / v;
  const auto& c = it->second;
  auto w = c.next.find(word);
  const double count = w == c.next.end() ? 0.0 : static_cast<double>(w->second);
  return (count + add_k_) / (static_cast<double>(c.total) + add_k_ * v);
}

double NGramLM::probability(const std::vector<std::string>& context, const std::string& word) const {
  if (context.size() != order_ - 1) throw std::invalid_argument("NGramLM: context must hold order-1 symbols");
  std::vector<std::size_t> ids;
  for (const auto& w : context) {
    if (w == kSentenceStart) {
      ids.push_back(kStartId);
    } else {
      auto it = index_.find(w);
      ids.push_back(it == index_.end() ? index_.at(kUnknownWord) : it->second);
    }
  }
  auto it = index_.find(word);
  const std::size_t target = it == index_.end() ? index_.at(kUnknownWord) : it->second;
  return probability_ids(key(ids.data()), target);
}

std::pair<double, std::size_t> NGramLM::negative_log_likelihood(const std::string& text) const {
  if (words_.empty()) throw std::logic_error("NGramLM: model not trained");
  const auto ids = padded_ids(text);
  double nll = 0.0;
  for (std::size_t i = order_ - 1; i < ids.size(); ++i) {
    nll -= std::log(probability_ids(key(ids.data() + i - (order_ - 1)), ids[i]));
  }
  return {nll, ids.size() - (order_ - 1)};
}

NGramLM train_ngram(const std::vector<std::string>& texts, std::size_t order, double add_k) {
  NGramLM model(order, add_k);
  model.fit(texts);
  return model;
}

double perplexity(const NGramLM& model, const std::vector<std::string>& texts) {
  if (texts.empty()) throw std::invalid_argument("perplexity: empty text set");
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto& t : texts) {
    const auto [s, c] = model.negative_log_likelihood(t);
    nll += s;
    n += c;
  }
  return std::exp(nll / static_cast<double>(n));
}

}  // namespace debias::lm
