#include "debias/corpus/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace debias::corpus {
namespace {

constexpr std::string_view kPunctuation = ",.?!;:";

bool is_punct_char(char c) { return kPunctuation.find(c) != std::string_view::npos; }

void split_chunk(std::string_view chunk, std::vector<std::string>& out) {
  std::size_t lead = 0;
  while (lead < chunk.size() && is_punct_char(chunk[lead])) ++lead;
  if (lead == chunk.size()) {
    for (char c : chunk) out.emplace_back(1, c);
    return;
  }
  std::size_t tail = chunk.size();
  while (tail > lead && is_punct_char(chunk[tail - 1])) --tail;
  for (std::size_t i = 0; i < lead; ++i) out.emplace_back(1, chunk[i]);
  out.emplace_back(chunk.substr(lead, tail - lead));
  for (std::size_t i = tail; i < chunk.size(); ++i) out.emplace_back(1, chunk[i]);
}

}  // namespace

bool is_punctuation(std::string_view word) noexcept { return word.size() == 1 && is_punct_char(word[0]); }

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) split_chunk(text.substr(i, j - i), out);
    i = j;
  }
  return out;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty() && !is_punctuation(w)) out += ' ';
    out += w;
  }
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> words) {
  words_ = {"<pad>", "<unk>", "<eot>"};
  words_.insert(words_.end(), std::make_move_iterator(words.begin()), std::make_move_iterator(words.end()));
  for (TokenId i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], i).second) throw std::invalid_argument("Vocab: duplicate word '" + words_[i] + "'");
  }
}

bool Vocab::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

TokenId Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::word(TokenId id) const {
  if (id >= words_.size()) throw std::out_of_range("Vocab: token id " + std::to_string(id) + " out of range");
  return words_[id];
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (TokenId t : ids) {
    if (!is_reserved(t)) words.push_back(word(t));
  }
  return join_words(words);
}

Vocab build_vocab(std::span<const std::string> texts, std::span<const std::string> extra_words) {
  if (texts.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) ++counts[std::move(w)];
  }
  for (const auto& w : extra_words) counts.try_emplace(w, 0);
  for (std::string_view r : {"<pad>", "<unk>", "<eot>"}) counts.erase(std::string(r));

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(ranked.size());
  for (auto& [w, c] : ranked) words.push_back(std::move(w));
  return Vocab(std::move(words));
}

}  // namespace debias::corpus
