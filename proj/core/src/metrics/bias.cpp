#include "debias/metrics/bias.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace debias::metrics {
namespace {

std::vector<double> sorted_copy(std::span<const double> v, const char* what) {
  if (v.empty()) throw std::invalid_argument(std::string(what) + ": empty sample");
  std::vector<double> out(v.begin(), v.end());
  for (double x : out) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite score");
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Q(q) for the step quantile function of sorted `s` at q = (2j - 1) / (2L).
double grid_quantile(const std::vector<double>& s, std::size_t j, std::size_t grid) {
  const std::uint64_t num = (2 * static_cast<std::uint64_t>(j) - 1) * s.size();
  const std::uint64_t den = 2 * static_cast<std::uint64_t>(grid);
  const std::uint64_t ceil = (num + den - 1) / den;
  return s[static_cast<std::size_t>(ceil - 1)];
}

}  // namespace

double w2_distance(std::span<const double> a, std::span<const double> b) {
  const auto x = sorted_copy(a, "w2_distance");
  const auto y = sorted_copy(b, "w2_distance");
  // Work in units of 1 / (n m) so every breakpoint is an integer.
  const std::uint64_t n = x.size(), m = y.size();
  std::uint64_t pos = 0;
  std::size_t i = 0, j = 0;
  double acc = 0.0;
  while (i < n && j < m) {
    const std::uint64_t next_x = (i + 1) * m;
    const std::uint64_t next_y = (j + 1) * n;
    const std::uint64_t next = std::min(next_x, next_y);
    const double d = x[i] - y[j];
    acc += static_cast<double>(next - pos) * d * d;
    pos = next;
    if (next == next_x) ++i;
    if (next == next_y) ++j;
  }
  return std::sqrt(acc / static_cast<double>(n * m));
}

double w2_distance_grid(std::span<const double> a, std::span<const double> b, std::size_t grid) {
  if (grid == 0) throw std::invalid_argument("w2_distance_grid: grid must be positive");
  const auto x = sorted_copy(a, "w2_distance_grid");
  const auto y = sorted_copy(b, "w2_distance_grid");
  double acc = 0.0;
  for (std::size_t j = 1; j <= grid; ++j) {
    const double d = grid_quantile(x, j, grid) - grid_quantile(y, j, grid);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(grid));
}

double aggregate_overall(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("aggregate_overall: no option values");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

OptionScores scores_by_option(std::span<const lm::GenerationRecord> records, const corpus::Attribute& attribute,
                              const std::string& ideology_tag) {
  OptionScores out;
  for (const auto& o : attribute.options) out[o.name];
  for (const auto& r : records) {
    if (r.attribute != attribute.name || r.ideology_tag != ideology_tag || !r.judge_score) continue;
    const auto it = out.find(r.option);
    if (it == out.end()) throw std::invalid_argument("record names unknown option '" + r.option + "'");
    it->second.push_back(*r.judge_score);
  }
  return out;
}

void check_coverage(std::span<const lm::GenerationRecord> records, const corpus::Attribute& attribute,
                    const std::string& ideology_tag) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : records) {
    if (r.attribute == attribute.name && r.ideology_tag == ideology_tag && r.judge_score) {
      seen.emplace(r.option, r.keyword);
    }
  }
  std::string missing;
  for (const auto& o : attribute.options) {
    for (const auto& k : o.keywords) {
      if (!seen.count({o.name, k})) missing += (missing.empty() ? "" : ", ") + o.name + "/" + k;
    }
  }
  if (!missing.empty()) {
    throw std::invalid_argument("attribute " + attribute.name + " (" + ideology_tag +
                                " prompts) has no scored generations for: " + missing);
  }
}

double indirect_bias(const std::string& option, const OptionScores& scores) {
  const auto it = scores.find(option);
  if (it == scores.end() || it->second.empty()) {
    throw std::invalid_argument("indirect_bias: no scores for option '" + option + "'");
  }
  std::vector<double> all;
  for (const auto& [name, s] : scores) all.insert(all.end(), s.begin(), s.end());
  return w2_distance(it->second, all);
}

double direct_bias(const std::string& option, const OptionScores& liberal, const OptionScores& conservative) {
  return std::abs(indirect_bias(option, liberal) - indirect_bias(option, conservative));
}

BiasReport evaluate_bias(const corpus::Attribute& attribute, std::span<const lm::GenerationRecord> records,
                         const std::string& mode, double lambda) {
  for (const char* tag : {"none", "L", "C"}) check_coverage(records, attribute, tag);
  const auto plain = scores_by_option(records, attribute, "none");
  const auto lib = scores_by_option(records, attribute, "L");
  const auto con = scores_by_option(records, attribute, "C");

  BiasReport report;
  report.attribute = attribute.name;
  report.mode = mode;
  report.lambda = lambda;
  std::vector<double> ind, dir;
  for (const auto& o : attribute.options) {
    OptionBias ob;
    ob.option = o.name;
    ob.indirect = indirect_bias(o.name, plain);
    ob.direct = direct_bias(o.name, lib, con);
    ob.samples = plain.at(o.name).size() + lib.at(o.name).size() + con.at(o.name).size();
    ind.push_back(ob.indirect);
    dir.push_back(ob.direct);
    report.samples += ob.samples;
    report.options.push_back(std::move(ob));
  }
  for (const auto& r : records) {
    if (r.attribute == attribute.name && !r.judge_score) ++report.unscored;
  }
  report.overall_indirect = aggregate_overall(ind);
  report.overall_direct = aggregate_overall(dir);
  return report;
}

void to_json(nlohmann::json& j, const OptionBias& o) {
  j = nlohmann::json{{"option", o.option}, {"indirect", o.indirect}, {"direct", o.direct}, {"samples", o.samples}};
  j["ppl"] = o.ppl ? nlohmann::json(*o.ppl) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, OptionBias& o) {
  j.at("option").get_to(o.option);
  j.at("indirect").get_to(o.indirect);
  j.at("direct").get_to(o.direct);
  j.at("samples").get_to(o.samples);
  o.ppl.reset();
  if (j.contains("ppl") && !j.at("ppl").is_null()) o.ppl = j.at("ppl").get<double>();
}

void to_json(nlohmann::json& j, const BiasReport& r) {
  j = nlohmann::json{{"attribute", r.attribute},
                     {"mode", r.mode},
                     {"lambda", r.lambda},
                     {"options", r.options},
                     {"overall_indirect", r.overall_indirect},
                     {"overall_direct", r.overall_direct},
                     {"samples", r.samples},
                     {"unscored", r.unscored}};
  j["ppl"] = r.ppl ? nlohmann::json(*r.ppl) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, BiasReport& r) {
  j.at("attribute").get_to(r.attribute);
  j.at("mode").get_to(r.mode);
  j.at("lambda").get_to(r.lambda);
  j.at("options").get_to(r.options);
  j.at("overall_indirect").get_to(r.overall_indirect);
  j.at("overall_direct").get_to(r.overall_direct);
  j.at("samples").get_to(r.samples);
  j.at("unscored").get_to(r.unscored);
  r.ppl.reset();
  if (j.contains("ppl") && !j.at("ppl").is_null()) r.ppl = j.at("ppl").get<double>();
}

std::vector<std::size_t> score_histogram(std::span<const double> scores, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("score_histogram: bins must be positive");
  std::vector<std::size_t> counts(bins, 0);
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("score_histogram: score outside [0, 1]");
    const auto b = std::min(bins - 1, static_cast<std::size_t>(s * static_cast<double>(bins)));
    ++counts[b];
  }
  return counts;
}

}  // namespace debias::metrics
