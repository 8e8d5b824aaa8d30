#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "debias/corpus/vocab.hpp"

namespace debias::corpus {

/// Class 1 is conservative everywhere in the code base.
enum class Ideology : int { Liberal = 0, Conservative = 1 };

char label_char(Ideology label) noexcept;
Ideology parse_label(std::string_view text);
inline int class_index(Ideology label) noexcept { return static_cast<int>(label); }

struct TextDocument {
  std::string text;
  Ideology label = Ideology::Liberal;
};

struct Document {
  std::vector<TokenId> tokens;
  Ideology label = Ideology::Liberal;
};

/// One `label<TAB>text` line per document, label being L or C.
void write_tsv(const std::filesystem::path& path, const std::vector<TextDocument>& docs);
std::vector<TextDocument> read_tsv(const std::filesystem::path& path);

/// Tokenizes and truncates to `max_length` tokens (0 keeps everything).
/// Documents that end up empty are rejected.
std::vector<Document> encode(const std::vector<TextDocument>& docs, const Vocab& vocab, std::size_t max_length = 0);

template <typename Doc>
struct Splits {
  std::vector<Doc> train;
  std::vector<Doc> valid;
  std::vector<Doc> test;
};

using SplitRatios = std::array<double, 3>;

/// Stratified split: each class is shuffled with `seed` and cut by `ratios`,
/// so per-class proportions match the ratios up to rounding.
template <typename Doc>
Splits<Doc> split_dataset(const std::vector<Doc>& docs, SplitRatios ratios = {0.70, 0.15, 0.15},
                          std::uint64_t seed = 0) {
  double total = 0.0;
  std::size_t active = 0;
  for (double r : ratios) {
    if (r < 0.0) throw std::invalid_argument("split_dataset: negative ratio");
    total += r;
    active += r > 0.0;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split_dataset: ratios must sum to 1");
  if (docs.size() < active) throw std::invalid_argument("split_dataset: fewer documents than splits");

  Splits<Doc> out;
  std::mt19937_64 rng(seed);
  for (Ideology label : {Ideology::Liberal, Ideology::Conservative}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (docs[i].label == label) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    std::array<std::size_t, 3> count{};
    count[0] = static_cast<std::size_t>(std::llround(ratios[0] * n));
    count[1] = std::min(idx.size() - count[0], static_cast<std::size_t>(std::llround(ratios[1] * n)));
    count[2] = idx.size() - count[0] - count[1];
    if (ratios[2] == 0.0) {
      const std::size_t last = ratios[1] > 0.0 ? 1 : 0;
      count[last] += count[2];
      count[2] = 0;
    }
    std::vector<Doc>* parts[3] = {&out.train, &out.valid, &out.test};
    std::size_t i = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < count[s]; ++j) parts[s]->push_back(docs[idx[i++]]);
    }
  }
  return out;
}

}  // namespace debias::corpus
