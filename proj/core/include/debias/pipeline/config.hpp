#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/calib/calibration.hpp"
#include "debias/corpus/document.hpp"
#include "debias/corpus/registry.hpp"
#include "debias/corpus/synthetic.hpp"
#include "debias/judge/classifier.hpp"
#include "debias/judge/debias_head.hpp"
#include "debias/lm/sampling.hpp"
#include "debias/lm/train.hpp"
#include "debias/lm/transformer.hpp"

namespace debias::pipeline {

struct GenerationConfig {
  std::vector<std::string> attributes{"gender"};
  /// Samples per filled prompt (M); each keyword gets 10 * M samples.
  std::size_t samples_per_prompt = 1;
  std::size_t max_new_tokens = 50;
  lm::DecodeConfig decode;
  /// Independent generation seeds the bias report averages over.
  std::size_t seeds = 3;
  /// Seeds used by each point of the lambda sweep.
  std::size_t tradeoff_seeds = 1;
};

struct NGramConfig {
  std::size_t order = 3;
  double add_k = 0.1;
};

struct ExperimentConfig {
  std::filesystem::path registry_path;
  std::filesystem::path output_dir;
  std::uint64_t seed = 7;
  corpus::SyntheticCorpusConfig corpus;
  corpus::SplitRatios split{0.70, 0.15, 0.15};
  lm::LmConfig lm;  // vocab_size is filled in from the corpus
  lm::TrainConfig lm_training;
  judge::ClassifierConfig judge;
  judge::HeadConfig head;  // width follows lm.width
  std::size_t bias_words_per_class = 40;
  GenerationConfig generation;
  /// Calibration settings shared by both modes; sigma falls back to the mode
  /// default when the file does not set it.
  nlohmann::json calibration = nlohmann::json::object();
  std::vector<double> lambda_grid{0.0, 0.1, 0.3, 0.5, 0.7, 0.9};
  NGramConfig ngram;
  std::size_t jobs = 1;

  /// Calibration config for one mode, optionally overriding lambda0 and sigma.
  calib::CalibrationConfig calibration_for(calib::Mode mode, std::optional<double> lambda = std::nullopt,
                                           std::optional<double> sigma = std::nullopt) const;
};

/// Thrown by load_config with every problem found.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const noexcept { return errors_; }

 private:
  std::vector<std::string> errors_;
};

/// Defaults for every field; relative paths resolve against `base_dir`.
ExperimentConfig default_config(const std::filesystem::path& base_dir);

/// Parses a config document. Missing keys keep their defaults.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
/// Same, but sections that fail to parse keep their defaults and are reported
/// in `errors`, so validation can still run on the rest.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                              std::vector<std::string>& errors);
/// Appends the errors of validate_config not already in `errors`.
void append_validation_errors(const ExperimentConfig& config, std::vector<std::string>& errors);
nlohmann::json to_json(const ExperimentConfig& config);

/// Every violated invariant, including those of nested configs.
std::vector<std::string> validate_config(const ExperimentConfig& config);

/// Reads, parses and validates. Throws ConfigError (all problems) or
/// std::runtime_error naming an unreadable path.
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace debias::pipeline
