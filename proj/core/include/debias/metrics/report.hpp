#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "debias/metrics/bias.hpp"

namespace debias::metrics {

/// One row per option plus an "overall" row per report, with columns
/// attribute, option, mode, lambda, indirect_bias, direct_bias, ppl,
/// delta_vs_baseline. The delta is baseline indirect bias minus this row's,
/// taken from the report of the same attribute whose mode is `baseline_mode`;
/// a missing baseline throws.
std::string render_tsv(std::span<const BiasReport> reports, const std::string& baseline_mode);

/// Per attribute, one markdown table with a column pair per report and the
/// reduction against the baseline in parentheses.
std::string render_markdown(std::span<const BiasReport> reports, const std::string& baseline_mode);

/// Markdown table of overall values, one row per report (a lambda sweep).
std::string render_tradeoff_markdown(std::span<const BiasReport> sweep);

/// Columns mode, bin_left, bin_right, count; 50 uniform bins per mode.
std::string render_histogram_csv(const std::map<std::string, std::vector<double>>& scores_by_mode,
                                 std::size_t bins = 50);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace debias::metrics
