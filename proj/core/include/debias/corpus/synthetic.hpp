#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/corpus/document.hpp"
#include "debias/corpus/registry.hpp"

namespace debias::corpus {

/// Knobs for the planted-bias corpus. A document optionally opens with a filled
/// registry prompt; its label is drawn from the liberal rate of the prompt's
/// keyword (shifted in log-odds by the ideology trigger for direct prompts),
/// and its body mixes a neutral Markov chain with class marker words.
struct SyntheticCorpusConfig {
  std::size_t docs_per_class = 1000;
  std::size_t doc_length = 64;
  std::size_t neutral_vocab_size = 300;
  std::vector<std::string> liberal_markers;
  std::vector<std::string> conservative_markers;
  /// Probability that a body slot carries a marker word.
  double marker_density = 0.25;
  /// Probability that a marker comes from the document's own class.
  double own_marker_rate = 0.9;
  /// Zipf exponent over each marker list.
  double marker_zipf = 1.0;
  /// Probability that a neutral word follows one of its preferred successors.
  double neutral_chain_rate = 0.75;
  /// Probability that a document opens with a filled prompt.
  double prompt_doc_rate = 0.8;
  /// Log-odds shift towards L for direct-L prompts and towards C for direct-C prompts.
  double direct_liberal_shift = 3.0;
  double direct_conservative_shift = 1.0;
  /// P(label = L | keyword), keyed "attribute/option"; unlisted options use 0.5.
  std::map<std::string, double> option_liberal_rate;
  /// Per-keyword overrides of option_liberal_rate.
  std::map<std::string, double> keyword_liberal_rate;
  /// Relative frequency of each attribute among prompted documents; unlisted use 1.
  std::map<std::string, double> attribute_weight;
  std::uint64_t seed = 1;
};

SyntheticCorpusConfig default_corpus_config();
std::vector<std::string> default_liberal_markers();
std::vector<std::string> default_conservative_markers();

/// Neutral filler words; deterministic in `count`, disjoint from `avoid`.
std::vector<std::string> neutral_words(std::size_t count, const std::vector<std::string>& avoid);

/// Liberal rate of a keyword after applying overrides.
double keyword_liberal_rate(const SyntheticCorpusConfig& config, const std::string& attribute,
                            const std::string& option, const std::string& keyword);

/// P(label = L) for a document opening with the given prompt.
double prompt_liberal_probability(const SyntheticCorpusConfig& config, PromptTag tag, double keyword_rate);

/// One message per violated constraint.
std::vector<std::string> validation_errors(const SyntheticCorpusConfig& config, const AttributeRegistry& registry);
/// Throws std::invalid_argument listing every violated constraint.
void validate(const SyntheticCorpusConfig& config, const AttributeRegistry& registry);

/// Exactly docs_per_class documents per class, in the order drawn.
/// Deterministic in config.seed.
std::vector<TextDocument> generate_synthetic_corpus(const SyntheticCorpusConfig& config,
                                                    const AttributeRegistry& registry);

void to_json(nlohmann::json& j, const SyntheticCorpusConfig& config);
void from_json(const nlohmann::json& j, SyntheticCorpusConfig& config);

}  // namespace debias::corpus
