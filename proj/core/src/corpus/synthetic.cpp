#include "debias/corpus/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace debias::corpus {
namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double shift_log_odds(double p, double shift) {
  if (p <= 0.0 || p >= 1.0) return p;
  return logistic(std::log(p / (1.0 - p)) + shift);
}

struct Frame {
  const Attribute* attribute = nullptr;
  const PromptTemplate* prompt = nullptr;
  std::string keyword;
  double liberal_probability = 0.5;
};

struct KeywordEntry {
  const AttributeOption* option;
  const std::string* keyword;
};

class Sampler {
 public:
  Sampler(const SyntheticCorpusConfig& config, const AttributeRegistry& registry)
      : config_(config), registry_(registry), rng_(config.seed) {
    std::vector<std::string> avoid = registry.prompt_words();
    avoid.insert(avoid.end(), config.liberal_markers.begin(), config.liberal_markers.end());
    avoid.insert(avoid.end(), config.conservative_markers.begin(), config.conservative_markers.end());
    neutral_ = neutral_words(config.neutral_vocab_size, avoid);

    std::uniform_int_distribution<std::size_t> pick(0, neutral_.size() - 1);
    successors_.resize(neutral_.size());
    for (auto& s : successors_) {
      for (int i = 0; i < 3; ++i) s.push_back(pick(rng_));
    }
    for (const auto* list : {&config.liberal_markers, &config.conservative_markers}) {
      std::vector<double> w;
      for (std::size_t r = 0; r < list->size(); ++r) w.push_back(1.0 / std::pow(static_cast<double>(r + 1), config.marker_zipf));
      marker_dist_.emplace_back(w.begin(), w.end());
    }
    std::vector<double> attr_w;
    for (const auto& a : registry.attributes) {
      auto it = config.attribute_weight.find(a.name);
      attr_w.push_back(it == config.attribute_weight.end() ? 1.0 : it->second);
      std::vector<KeywordEntry> entries;
      for (const auto& o : a.options) {
        for (const auto& k : o.keywords) entries.push_back({&o, &k});
      }
      keywords_.push_back(std::move(entries));
    }
    attribute_dist_ = std::discrete_distribution<std::size_t>(attr_w.begin(), attr_w.end());
  }

  Frame draw_frame() {
    Frame f;
    if (!bernoulli(config_.prompt_doc_rate)) return f;
    const std::size_t ai = attribute_dist_(rng_);
    f.attribute = &registry_.attributes[ai];
    const auto& entries = keywords_[ai];
    const auto& entry = entries[std::uniform_int_distribution<std::size_t>(0, entries.size() - 1)(rng_)];
    f.keyword = *entry.keyword;
    const auto& templates = f.attribute->templates;
    f.prompt = &templates[std::uniform_int_distribution<std::size_t>(0, templates.size() - 1)(rng_)];
    const double rate = keyword_liberal_rate(config_, f.attribute->name, entry.option->name, f.keyword);
    f.liberal_probability = prompt_liberal_probability(config_, f.prompt->tag, rate);
    return f;
  }

  bool bernoulli(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  std::string body_text(const Frame& frame, Ideology label) {
    std::vector<std::string> words;
    if (frame.prompt) words = split_words(fill_prompt(frame.prompt->text, frame.keyword, registry_.placeholder));
    std::uniform_int_distribution<std::size_t> any(0, neutral_.size() - 1);
    std::uniform_int_distribution<std::size_t> succ(0, 2);
    std::size_t current = any(rng_);
    while (words.size() < config_.doc_length) {
      if (bernoulli(config_.marker_density)) {
        const bool own = bernoulli(config_.own_marker_rate);
        const int cls = own ? class_index(label) : 1 - class_index(label);
        const auto& list = cls == 0 ? config_.liberal_markers : config_.conservative_markers;
        words.push_back(list[marker_dist_[cls](rng_)]);
        continue;
      }
      current = bernoulli(config_.neutral_chain_rate) ? successors_[current][succ(rng_)] : any(rng_);
      words.push_back(neutral_[current]);
    }
    return join_words(words);
  }

 private:
  const SyntheticCorpusConfig& config_;
  const AttributeRegistry& registry_;
  std::mt19937_64 rng_;
  std::vector<std::string> neutral_;
  std::vector<std::vector<std::size_t>> successors_;
  std::vector<std::discrete_distribution<std::size_t>> marker_dist_;
  std::discrete_distribution<std::size_t> attribute_dist_;
  std::vector<std::vector<KeywordEntry>> keywords_;
};

}  // namespace

std::vector<std::string> default_liberal_markers() {
  return {"equality",   "climate",    "progressive", "diversity",   "inclusive",   "renewable",      "unions",
          "activists",  "solidarity", "justice",     "reforms",     "workers",     "inequality",     "emissions",
          "tolerance",  "refugees",   "grassroots",  "medicare",    "universal",   "affordable",     "housing",
          "transit",    "teachers",   "feminism",    "pluralism",   "labor",       "organizers",     "protest",
          "equity",     "scientists", "environment", "green",       "fairness",    "billionaires",   "corporations",
          "oversight",  "compassion", "community",   "students",    "debt",        "childcare",      "coalition",
          "outreach",   "empathy",    "solar",       "privacy",     "dignity",     "cooperation",    "nonprofit",
          "volunteers", "wind",       "clinics",     "minorities",  "sustainable", "accountability", "immigrants",
          "librarians", "nurses",     "recycling",   "vaccines"};
}

std::vector<std::string> default_conservative_markers() {
  return {"liberty",    "tradition",   "taxpayers",  "freedom",    "faith",        "family",       "patriots",
          "safety",     "enforcement", "sovereignty", "values",    "heritage",     "constitution", "deregulation",
          "markets",    "businesses",  "police",     "troops",     "veterans",     "churches",     "prayer",
          "borders",    "firearms",    "hunting",    "farmers",    "ranchers",     "rural",        "independence",
          "prosperity", "jobs",        "growth",     "savings",    "deficit",      "cuts",         "discipline",
          "order",      "strength",    "defense",    "loyalty",    "honor",        "pride",        "flag",
          "anthem",     "homeschool",  "property",   "ownership",  "competition",  "miners",       "coal",
          "drilling",   "pipeline",    "truckers",   "morality",   "virtue",       "thrift",       "militia",
          "sheriffs",   "entrepreneurs", "landowners", "oil"};
}

std::vector<std::string> neutral_words(std::size_t count, const std::vector<std::string>& avoid) {
  static constexpr std::string_view kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u"};
  static constexpr std::string_view kCodas[] = {"", "", "n", "r", "l", "s"};
  const std::set<std::string> blocked(avoid.begin(), avoid.end());
  std::set<std::string> seen;
  std::vector<std::string> out;
  std::mt19937_64 rng(0x6e657574);
  std::uniform_int_distribution<std::size_t> onset(0, std::size(kOnsets) - 1);
  std::uniform_int_distribution<std::size_t> vowel(0, std::size(kVowels) - 1);
  std::uniform_int_distribution<std::size_t> coda(0, std::size(kCodas) - 1);
  std::uniform_int_distribution<int> syllables(2, 3);
  while (out.size() < count) {
    std::string w;
    const int n = syllables(rng);
    for (int s = 0; s < n; ++s) {
      w += kOnsets[onset(rng)];
      w += kVowels[vowel(rng)];
    }
    w += kCodas[coda(rng)];
    if (blocked.count(w) || !seen.insert(w).second) continue;
    out.push_back(std::move(w));
  }
  return out;
}

double keyword_liberal_rate(const SyntheticCorpusConfig& config, const std::string& attribute,
                            const std::string& option, const std::string& keyword) {
  if (auto it = config.keyword_liberal_rate.find(keyword); it != config.keyword_liberal_rate.end()) return it->second;
  if (auto it = config.option_liberal_rate.find(attribute + "/" + option); it != config.option_liberal_rate.end()) {
    return it->second;
  }
  return 0.5;
}

double prompt_liberal_probability(const SyntheticCorpusConfig& config, PromptTag tag, double keyword_rate) {
  switch (tag) {
    case PromptTag::Indirect:
      return keyword_rate;
    case PromptTag::DirectL:
      return shift_log_odds(keyword_rate, config.direct_liberal_shift);
    case PromptTag::DirectC:
      return shift_log_odds(keyword_rate, -config.direct_conservative_shift);
  }
  return keyword_rate;
}

std::vector<std::string> validation_errors(const SyntheticCorpusConfig& config, const AttributeRegistry& registry) {
  std::vector<std::string> errors;
  auto check_prob = [&](double p, const std::string& name) {
    if (!(p >= 0.0 && p <= 1.0)) errors.push_back(name + " must be in [0,1]");
  };
  if (config.docs_per_class == 0) errors.push_back("docs_per_class must be positive");
  if (config.doc_length == 0) errors.push_back("doc_length must be positive");
  if (config.neutral_vocab_size == 0) errors.push_back("neutral_vocab_size must be positive");
  if (config.liberal_markers.empty()) errors.push_back("liberal_markers must not be empty");
  if (config.conservative_markers.empty()) errors.push_back("conservative_markers must not be empty");
  check_prob(config.marker_density, "marker_density");
  check_prob(config.own_marker_rate, "own_marker_rate");
  check_prob(config.neutral_chain_rate, "neutral_chain_rate");
  check_prob(config.prompt_doc_rate, "prompt_doc_rate");
  for (const auto& [k, v] : config.option_liberal_rate) check_prob(v, "option_liberal_rate[" + k + "]");
  for (const auto& [k, v] : config.keyword_liberal_rate) check_prob(v, "keyword_liberal_rate[" + k + "]");
  for (const auto& [k, v] : config.attribute_weight) {
    if (!(v >= 0.0)) errors.push_back("attribute_weight[" + k + "] must be non-negative");
  }

  const auto prompt = registry.prompt_words();
  const std::set<std::string> reserved(prompt.begin(), prompt.end());
  std::set<std::string> seen;
  for (const auto* list : {&config.liberal_markers, &config.conservative_markers}) {
    for (const auto& m : *list) {
      if (split_words(m).size() != 1) errors.push_back("marker '" + m + "' must be a single word");
      if (reserved.count(m)) errors.push_back("marker '" + m + "' collides with a prompt word");
      if (!seen.insert(m).second) errors.push_back("marker '" + m + "' is listed twice");
    }
  }
  return errors;
}

void validate(const SyntheticCorpusConfig& config, const AttributeRegistry& registry) {
  const auto errors = validation_errors(config, registry);
  if (!errors.empty()) {
    std::string msg = "invalid corpus config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }
}

std::vector<TextDocument> generate_synthetic_corpus(const SyntheticCorpusConfig& config,
                                                    const AttributeRegistry& registry) {
  validate(config, registry);
  Sampler sampler(config, registry);
  std::vector<TextDocument> docs;
  docs.reserve(2 * config.docs_per_class);
  std::size_t per_class[2] = {0, 0};
  while (per_class[0] < config.docs_per_class || per_class[1] < config.docs_per_class) {
    const Frame frame = sampler.draw_frame();
    const Ideology label = sampler.bernoulli(frame.liberal_probability) ? Ideology::Liberal : Ideology::Conservative;
    if (per_class[class_index(label)] == config.docs_per_class) continue;
    ++per_class[class_index(label)];
    docs.push_back({sampler.body_text(frame, label), label});
  }
  return docs;
}

SyntheticCorpusConfig default_corpus_config() {
  SyntheticCorpusConfig c;
  c.liberal_markers = default_liberal_markers();
  c.conservative_markers = default_conservative_markers();
  c.option_liberal_rate = {
      {"gender/male", 0.15},        {"gender/female", 0.85},      {"location/blue", 0.8},
      {"location/red", 0.2},        {"location/lean blue", 0.6},  {"location/lean red", 0.4},
      {"topic/domestic", 0.65},     {"topic/foreign", 0.35},      {"topic/economics", 0.4},
      {"topic/electoral", 0.55},    {"topic/healthcare", 0.75},   {"topic/immigration", 0.25},
      {"topic/social", 0.6},
  };
  c.attribute_weight = {{"gender", 3.0}, {"location", 1.0}, {"topic", 1.0}};
  return c;
}

void to_json(nlohmann::json& j, const SyntheticCorpusConfig& c) {
  j = nlohmann::json{{"docs_per_class", c.docs_per_class},
                     {"doc_length", c.doc_length},
                     {"neutral_vocab_size", c.neutral_vocab_size},
                     {"liberal_markers", c.liberal_markers},
                     {"conservative_markers", c.conservative_markers},
                     {"marker_density", c.marker_density},
                     {"own_marker_rate", c.own_marker_rate},
                     {"marker_zipf", c.marker_zipf},
                     {"neutral_chain_rate", c.neutral_chain_rate},
                     {"prompt_doc_rate", c.prompt_doc_rate},
                     {"direct_liberal_shift", c.direct_liberal_shift},
                     {"direct_conservative_shift", c.direct_conservative_shift},
                     {"option_liberal_rate", c.option_liberal_rate},
                     {"keyword_liberal_rate", c.keyword_liberal_rate},
                     {"attribute_weight", c.attribute_weight},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SyntheticCorpusConfig& c) {
  c = default_corpus_config();
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("docs_per_class", c.docs_per_class);
  get("doc_length", c.doc_length);
  get("neutral_vocab_size", c.neutral_vocab_size);
  get("liberal_markers", c.liberal_markers);
  get("conservative_markers", c.conservative_markers);
  get("marker_density", c.marker_density);
  get("own_marker_rate", c.own_marker_rate);
  get("marker_zipf", c.marker_zipf);
  get("neutral_chain_rate", c.neutral_chain_rate);
  get("prompt_doc_rate", c.prompt_doc_rate);
  get("direct_liberal_shift", c.direct_liberal_shift);
  get("direct_conservative_shift", c.direct_conservative_shift);
  get("option_liberal_rate", c.option_liberal_rate);
  get("keyword_liberal_rate", c.keyword_liberal_rate);
  get("attribute_weight", c.attribute_weight);
  get("seed", c.seed);
}

}  // namespace debias::corpus
