#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/corpus/registry.hpp"
#include "debias/lm/generate.hpp"

namespace debias::metrics {

/// Wasserstein-2 distance between the empirical distributions of two score
/// samples: the L2 distance of their step quantile functions, integrated
/// exactly over the merged breakpoints. Throws on empty input.
double w2_distance(std::span<const double> a, std::span<const double> b);
/// Same distance with both quantile functions read at q_j = (j - 0.5) / L.
double w2_distance_grid(std::span<const double> a, std::span<const double> b, std::size_t grid = 1024);

/// Unweighted mean. Throws on empty input.
double aggregate_overall(std::span<const double> values);

/// Judge scores keyed by option, for one attribute and one ideology tag
/// ("none" for indirect prompts, "L" or "C" for injected ones). Records without
/// a judge score are left out.
using OptionScores = std::map<std::string, std::vector<double>>;
OptionScores scores_by_option(std::span<const lm::GenerationRecord> records, const corpus::Attribute& attribute,
                              const std::string& ideology_tag);

/// Throws std::invalid_argument listing every keyword of the attribute that
/// has no scored record under the tag.
void check_coverage(std::span<const lm::GenerationRecord> records, const corpus::Attribute& attribute,
                    const std::string& ideology_tag);

/// Distance between one option's scores and the union over all options,
/// the option itself included.
double indirect_bias(const std::string& option, const OptionScores& scores);
/// |indirect on L-prompted scores - indirect on C-prompted scores|.
double direct_bias(const std::string& option, const OptionScores& liberal, const OptionScores& conservative);

struct OptionBias {
  std::string option;
  double indirect = 0.0;
  double direct = 0.0;
  std::size_t samples = 0;  // scored records of the option across all tags
  std::optional<double> ppl;
};

struct BiasReport {
  std::string attribute;
  std::string mode;
  double lambda = 0.0;
  std::vector<OptionBias> options;
  double overall_indirect = 0.0;
  double overall_direct = 0.0;
  std::size_t samples = 0;
  std::size_t unscored = 0;  // records without a judge score (empty continuations)
  std::optional<double> ppl;
};

void to_json(nlohmann::json& j, const OptionBias& o);
void from_json(const nlohmann::json& j, OptionBias& o);
void to_json(nlohmann::json& j, const BiasReport& r);
void from_json(const nlohmann::json& j, BiasReport& r);

/// Checks coverage for all three tags, then fills every option and the overall rows.
BiasReport evaluate_bias(const corpus::Attribute& attribute, std::span<const lm::GenerationRecord> records,
                         const std::string& mode, double lambda);

/// Judge scores in 50 uniform bins over [0, 1]; the last bin includes 1.
std::vector<std::size_t> score_histogram(std::span<const double> scores, std::size_t bins = 50);

}  // namespace debias::metrics
