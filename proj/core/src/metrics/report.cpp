#include "debias/metrics/report.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

namespace debias::metrics {
namespace {

const BiasReport& baseline_for(std::span<const BiasReport> reports, const std::string& attribute,
                               const std::string& baseline_mode) {
  for (const auto& r : reports) {
    if (r.attribute == attribute && r.mode == baseline_mode) return r;
  }
  throw std::invalid_argument("no baseline report '" + baseline_mode + "' for attribute " + attribute);
}

std::string number(double v) { return fmt::format("{:.6f}", v); }
std::string optional_number(const std::optional<double>& v) { return v ? number(*v) : "NA"; }

std::vector<std::string> attributes_in_order(std::span<const BiasReport> reports) {
  std::vector<std::string> out;
  for (const auto& r : reports) {
    if (std::find(out.begin(), out.end(), r.attribute) == out.end()) out.push_back(r.attribute);
  }
  return out;
}

}  // namespace

std::string render_tsv(std::span<const BiasReport> reports, const std::string& baseline_mode) {
  std::string out = "attribute\toption\tmode\tlambda\tindirect_bias\tdirect_bias\tppl\tdelta_vs_baseline\n";
  for (const auto& r : reports) {
    const BiasReport& base = baseline_for(reports, r.attribute, baseline_mode);
    for (std::size_t i = 0; i < r.options.size(); ++i) {
      const auto& o = r.options[i];
      if (base.options.size() != r.options.size() || base.options[i].option != o.option) {
        throw std::invalid_argument("baseline options differ from report options for " + r.attribute);
      }
      out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", r.attribute, o.option, r.mode, number(r.lambda),
                         number(o.indirect), number(o.direct), optional_number(o.ppl),
                         number(base.options[i].indirect - o.indirect));
    }
    out += fmt::format("{}\toverall\t{}\t{}\t{}\t{}\t{}\t{}\n", r.attribute, r.mode, number(r.lambda),
                       number(r.overall_indirect), number(r.overall_direct), optional_number(r.ppl),
                       number(base.overall_indirect - r.overall_indirect));
  }
  return out;
}

std::string render_markdown(std::span<const BiasReport> reports, const std::string& baseline_mode) {
  std::string out;
  for (const auto& attribute : attributes_in_order(reports)) {
    const BiasReport& base = baseline_for(reports, attribute, baseline_mode);
    std::vector<const BiasReport*> cols;
    for (const auto& r : reports) {
      if (r.attribute == attribute) cols.push_back(&r);
    }
    out += "### " + attribute + "\n\n| option |";
    std::string rule = "|---|";
    for (const auto* r : cols) {
      const std::string label = r->mode == baseline_mode ? r->mode : fmt::format("{} (lambda {:.2f})", r->mode, r->lambda);
      out += " " + label + " Ind.B. | " + label + " Dir.B. |";
      rule += "---:|---:|";
    }
    out += "\n" + rule + "\n";
    auto cell = [&](double value, double baseline, bool is_base) {
      return is_base ? fmt::format(" {:.3f} |", value) : fmt::format(" {:.3f} (↓{:.3f}) |", value, baseline - value);
    };
    for (std::size_t i = 0; i < base.options.size(); ++i) {
      out += "| " + base.options[i].option + " |";
      for (const auto* r : cols) {
        const bool is_base = r == &base;
        out += cell(r->options.at(i).indirect, base.options[i].indirect, is_base);
        out += cell(r->options.at(i).direct, base.options[i].direct, is_base);
      }
      out += "\n";
    }
    out += "| **Overall** |";
    for (const auto* r : cols) {
      const bool is_base = r == &base;
      out += cell(r->overall_indirect, base.overall_indirect, is_base);
      out += cell(r->overall_direct, base.overall_direct, is_base);
    }
    out += "\n\n";
  }
  return out;
}

std::string render_tradeoff_markdown(std::span<const BiasReport> sweep) {
  std::string out = "| attribute | lambda | Ind.B. | Dir.B. | PPL |\n|---|---:|---:|---:|---:|\n";
  for (const auto& r : sweep) {
    out += fmt::format("| {} | {:.1f} | {:.3f} | {:.3f} | {} |\n", r.attribute, r.lambda, r.overall_indirect,
                       r.overall_direct, r.ppl ? fmt::format("{:.2f}", *r.ppl) : std::string("NA"));
  }
  return out;
}

std::string render_histogram_csv(const std::map<std::string, std::vector<double>>& scores_by_mode, std::size_t bins) {
  std::string out = "mode,bin_left,bin_right,count\n";
  for (const auto& [mode, scores] : scores_by_mode) {
    const auto counts = score_histogram(scores, bins);
    for (std::size_t b = 0; b < bins; ++b) {
      out += fmt::format("{},{:.2f},{:.2f},{}\n", mode, static_cast<double>(b) / static_cast<double>(bins),
                         static_cast<double>(b + 1) / static_cast<double>(bins), counts[b]);
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace debias::metrics
