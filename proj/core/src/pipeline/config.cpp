#include "debias/pipeline/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <optional>

namespace debias::pipeline {
namespace {

const std::set<std::string> kTopLevelKeys{
    "registry", "output_dir", "seed",       "corpus",      "split",  "lm",   "lm_training",
    "judge",    "debias_head", "bias_words_per_class", "generation", "calibration", "lambda_grid", "ngram", "jobs"};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::string join_errors(const std::vector<std::string>& errors) {
  std::string msg = "invalid config:";
  for (const auto& e : errors) msg += "\n  " + e;
  return msg;
}

// Longest filled prompt of an attribute, in tokens.
std::size_t longest_prompt(const corpus::AttributeRegistry& registry, const corpus::Attribute& attribute) {
  std::size_t best = 0;
  for (const auto& t : attribute.templates) {
    for (const auto& o : attribute.options) {
      for (const auto& k : o.keywords) {
        best = std::max(best, corpus::split_words(corpus::fill_prompt(t.text, k, registry.placeholder)).size());
      }
    }
  }
  return best;
}

}  // namespace

calib::CalibrationConfig ExperimentConfig::calibration_for(calib::Mode mode, std::optional<double> lambda,
                                                           std::optional<double> sigma) const {
  nlohmann::json j = calibration;
  j["mode"] = calib::to_string(mode);
  auto c = j.get<calib::CalibrationConfig>();
  if (lambda) c.lambda0 = *lambda;
  if (sigma) c.sigma = *sigma;
  return c;
}

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error(join_errors(errors)), errors_(std::move(errors)) {}

ExperimentConfig default_config(const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  c.registry_path = resolve(base_dir, "data/registry.json");
  c.output_dir = resolve(base_dir, "runs/default");
  c.corpus = corpus::default_corpus_config();
  return c;
}

ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                            std::vector<std::string>& errors) {
  if (!doc.is_object()) throw ConfigError({"config root must be an object"});
  ExperimentConfig c = default_config(base_dir);
  for (const auto& [key, value] : doc.items()) {
    if (!kTopLevelKeys.count(key)) errors.push_back("unknown key '" + key + "'");
  }
  auto read = [&](const char* key, auto&& assign) {
    if (!doc.contains(key)) return;
    try {
      assign(doc.at(key));
    } catch (const std::exception& e) {
      errors.push_back(std::string(key) + ": " + e.what());
    }
  };
  read("registry", [&](const auto& v) { c.registry_path = resolve(base_dir, v.template get<std::string>()); });
  read("output_dir", [&](const auto& v) { c.output_dir = resolve(base_dir, v.template get<std::string>()); });
  read("seed", [&](const auto& v) { v.get_to(c.seed); });
  read("corpus", [&](const auto& v) { v.get_to(c.corpus); });
  read("split", [&](const auto& v) { v.get_to(c.split); });
  read("lm", [&](const auto& v) { v.get_to(c.lm); });
  read("lm_training", [&](const auto& v) { v.get_to(c.lm_training); });
  read("judge", [&](const auto& v) { v.get_to(c.judge); });
  read("debias_head", [&](const auto& v) { v.get_to(c.head); });
  read("bias_words_per_class", [&](const auto& v) { v.get_to(c.bias_words_per_class); });
  read("generation", [&](const auto& v) {
    auto& g = c.generation;
    if (v.contains("attributes")) v.at("attributes").get_to(g.attributes);
    if (v.contains("samples_per_prompt")) v.at("samples_per_prompt").get_to(g.samples_per_prompt);
    if (v.contains("max_new_tokens")) v.at("max_new_tokens").get_to(g.max_new_tokens);
    if (v.contains("decode")) v.at("decode").get_to(g.decode);
    if (v.contains("seeds")) v.at("seeds").get_to(g.seeds);
    if (v.contains("tradeoff_seeds")) v.at("tradeoff_seeds").get_to(g.tradeoff_seeds);
  });
  read("calibration", [&](const auto& v) {
    if (!v.is_object()) throw std::invalid_argument("must be an object");
    if (v.contains("mode")) throw std::invalid_argument("mode is chosen per run, not in the config");
    c.calibration = v;
    (void)c.calibration_for(calib::Mode::Cls);
  });
  read("lambda_grid", [&](const auto& v) { v.get_to(c.lambda_grid); });
  read("ngram", [&](const auto& v) {
    if (v.contains("order")) v.at("order").get_to(c.ngram.order);
    if (v.contains("add_k")) v.at("add_k").get_to(c.ngram.add_k);
  });
  read("jobs", [&](const auto& v) { v.get_to(c.jobs); });
  if (!doc.contains("debias_head") || !doc.at("debias_head").contains("width")) c.head.width = c.lm.width;
  return c;
}

ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  std::vector<std::string> errors;
  auto c = parse_config(doc, base_dir, errors);
  if (!errors.empty()) throw ConfigError(errors);
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["registry"] = c.registry_path.string();
  j["output_dir"] = c.output_dir.string();
  j["seed"] = c.seed;
  j["corpus"] = c.corpus;
  j["split"] = c.split;
  j["lm"] = c.lm;
  j["lm_training"] = c.lm_training;
  j["judge"] = c.judge;
  j["debias_head"] = c.head;
  j["bias_words_per_class"] = c.bias_words_per_class;
  j["generation"] = {{"attributes", c.generation.attributes},
                     {"samples_per_prompt", c.generation.samples_per_prompt},
                     {"max_new_tokens", c.generation.max_new_tokens},
                     {"decode", c.generation.decode},
                     {"seeds", c.generation.seeds},
                     {"tradeoff_seeds", c.generation.tradeoff_seeds}};
  j["calibration"] = c.calibration;
  j["lambda_grid"] = c.lambda_grid;
  j["ngram"] = {{"order", c.ngram.order}, {"add_k", c.ngram.add_k}};
  j["jobs"] = c.jobs;
  return j;
}

std::vector<std::string> validate_config(const ExperimentConfig& c) {
  std::vector<std::string> errors;
  auto require = [&](bool ok, const std::string& message) {
    if (!ok) errors.push_back(message);
  };

  std::optional<corpus::AttributeRegistry> registry;
  if (!std::filesystem::exists(c.registry_path)) {
    errors.push_back("registry file not found: " + c.registry_path.string());
  } else {
    try {
      registry = corpus::load_registry(c.registry_path);
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  if (registry) {
    for (const auto& e : corpus::validation_errors(c.corpus, *registry)) errors.push_back("corpus." + e);
  }

  double split_total = 0.0;
  for (double r : c.split) {
    require(r > 0.0, "split ratios must all be positive");
    split_total += r;
  }
  require(std::abs(split_total - 1.0) <= 1e-9, "split ratios must sum to 1");

  require(c.lm.width > 0, "lm.width must be positive");
  require(c.lm.heads > 0 && c.lm.width % std::max<std::size_t>(c.lm.heads, 1) == 0,
          "lm.heads must be positive and divide lm.width");
  require(c.lm.layers > 0, "lm.layers must be positive");
  require(c.lm.mlp_ratio > 0, "lm.mlp_ratio must be positive");
  require(c.lm.init_std > 0.0, "lm.init_std must be positive");
  require(c.lm.context_length >= c.corpus.doc_length + 2 + (c.corpus.prompt_doc_rate > 0 ? 16 : 0),
          "lm.context_length is too short for corpus documents");

  require(c.lm_training.epochs > 0, "lm_training.epochs must be positive");
  require(c.lm_training.batch_size > 0, "lm_training.batch_size must be positive");
  require(c.lm_training.learning_rate > 0.0, "lm_training.learning_rate must be positive");
  require(c.lm_training.min_learning_rate >= 0.0 && c.lm_training.min_learning_rate <= c.lm_training.learning_rate,
          "lm_training.min_learning_rate must lie in [0, learning_rate]");
  require(c.lm_training.grad_clip > 0.0, "lm_training.grad_clip must be positive");

  require(c.judge.embed_width > 0 && c.judge.hidden > 0, "judge widths must be positive");
  require(c.judge.epochs > 0 && c.judge.batch_size > 0, "judge.epochs and judge.batch_size must be positive");
  require(c.judge.learning_rate > 0.0, "judge.learning_rate must be positive");

  require(c.head.width == c.lm.width, "debias_head.width must equal lm.width");
  require(c.head.epochs > 0 && c.head.batch_size > 0, "debias_head.epochs and batch_size must be positive");
  require(c.head.learning_rate > 0.0, "debias_head.learning_rate must be positive");
  require(c.head.prefix_stride > 0 && c.head.min_prefix > 0, "debias_head prefix settings must be positive");
  require(c.head.state == "mean" || c.head.state == "last" || c.head.state == "next",
          "debias_head.state must be mean, last or next");

  require(c.bias_words_per_class > 0, "bias_words_per_class must be positive");

  const auto& g = c.generation;
  require(!g.attributes.empty(), "generation.attributes must not be empty");
  require(g.samples_per_prompt > 0, "generation.samples_per_prompt must be positive");
  require(g.max_new_tokens > 0, "generation.max_new_tokens must be positive");
  require(g.seeds > 0 && g.tradeoff_seeds > 0, "generation seed counts must be positive");
  require(g.decode.temperature > 0.0, "generation.decode.temperature must be positive");
  if (registry) {
    for (const auto& name : g.attributes) {
      try {
        const auto& attr = registry->attribute(name);
        require(1 + longest_prompt(*registry, attr) + g.max_new_tokens - 1 <= c.lm.context_length,
                "prompts of attribute " + name + " plus generation.max_new_tokens exceed lm.context_length");
      } catch (const std::exception&) {
        errors.push_back("generation.attributes: unknown attribute '" + name + "'");
      }
    }
  }

  try {
    for (calib::Mode mode : {calib::Mode::Emb, calib::Mode::Cls}) {
      for (const auto& e : calib::validate(c.calibration_for(mode))) {
        if (std::find(errors.begin(), errors.end(), e) == errors.end()) errors.push_back(e);
      }
    }
  } catch (const std::exception& e) {
    errors.push_back(std::string("calibration: ") + e.what());
  }

  require(!c.lambda_grid.empty(), "lambda_grid must not be empty");
  for (double l : c.lambda_grid) require(l >= 0.0 && l <= 1.0, "lambda_grid values must lie in [0, 1]");
  require(c.ngram.order > 0, "ngram.order must be positive");
  require(c.ngram.add_k > 0.0, "ngram.add_k must be positive");
  require(c.jobs > 0, "jobs must be positive");
  return errors;
}

void append_validation_errors(const ExperimentConfig& config, std::vector<std::string>& errors) {
  for (auto& e : validate_config(config)) {
    if (std::find(errors.begin(), errors.end(), e) == errors.end()) errors.push_back(std::move(e));
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  std::vector<std::string> errors;
  auto config = parse_config(doc, path.parent_path(), errors);
  append_validation_errors(config, errors);
  if (!errors.empty()) throw ConfigError(errors);
  return config;
}

}  // namespace debias::pipeline
