// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Criteria 5-8 run (or resume) the full experiment on the given config.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "debias/autodiff/divergence.hpp"
#include "debias/calib/calibration.hpp"
#include "debias/lm/generate.hpp"
#include "debias/metrics/bias.hpp"
#include "debias/pipeline/config.hpp"
#include "debias/pipeline/pipeline.hpp"
#include "../support/gradcheck.hpp"

using namespace debias;
using corpus::TokenId;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Minimum over pairings of the mean squared difference, after replicating
// both sets to a common size. Only for tiny sets.
double assignment_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t l = std::lcm(a.size(), b.size());
  std::vector<double> ra, rb;
  for (double x : a) ra.insert(ra.end(), l / a.size(), x);
  for (double x : b) rb.insert(rb.end(), l / b.size(), x);
  std::sort(ra.begin(), ra.end());
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < l; ++i) s += (ra[i] - rb[i]) * (ra[i] - rb[i]);
    best = std::min(best, s);
  } while (std::next_permutation(ra.begin(), ra.end()));
  return std::sqrt(best / static_cast<double>(l));
}

std::vector<double> battery_set(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  if (n > 1 && rng() % 3 == 0) v[n - 1] = v[0];
  if (rng() % 5 == 0) v[0] = rng() % 2 ? 0.0 : 1.0;
  return v;
}

Outcome metric_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::size_t pairs = 0;
  while (pairs < 200) {
    const std::size_t n = 1 + rng() % 6, m = 1 + rng() % 6;
    if (std::lcm(n, m) > 6) continue;
    const auto a = battery_set(rng, n), b = battery_set(rng, m);
    worst = std::max(worst, std::abs(metrics::w2_distance(a, b) - assignment_oracle(a, b)));
    ++pairs;
  }
  const std::vector<double> x{0.2, 0.4, 0.6}, y{0.3, 0.5, 0.7};
  const double h0 = metrics::w2_distance(x, x);
  const double h1 = metrics::w2_distance(x, y);
  const double h2 = metrics::w2_distance(std::vector<double>{0, 0}, std::vector<double>{1, 1});
  const double elapsed = seconds_since(start);
  const bool hand = h0 == 0.0 && std::abs(h1 - 0.1) <= 1e-15 && h2 == 1.0;
  return {worst <= 1e-9 && hand && elapsed < 5.0,
          fmt::format("{} pairs, max |w2 - oracle| {:.2e}; hand examples {} {} {}; {:.2f}s", pairs, worst, h0, h1,
                      h2, elapsed)};
}

Outcome gradient_suite() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t instances = 0;
  for (const auto& c : testing::primitive_cases()) {
    for (std::uint64_t k = 0; k < 50; ++k) {
      const double err = testing::gradient_relative_error(c, 1000 + k);
      if (err > worst) {
        worst = err;
        worst_name = c.name;
      }
      ++instances;
    }
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-5 && elapsed < 30.0,
          fmt::format("{} primitives x 50, max rel err {:.2e} ({}); {:.2f}s", testing::primitive_cases().size(), worst,
                      worst_name, elapsed)};
}

Outcome formula_fixtures() {
  calib::CalibrationConfig c;
  c.lambda_max = 10.0;
  c.sigma = 0.02;
  const double l1 = calib::update_lambda(0.6, 0.05, c);
  const double l2 = calib::update_lambda(0.6, 0.005, c);
  const std::vector<double> r{1.0, 0.5, 0.2};  // oldest first
  const double values[] = {calib::mode1_gain(3.0, 4.0), calib::mode2_step_gain(0.5), calib::mode2_gain(r, 0.9, 2),
                           l1, l2};
  const double expected[] = {24.0, std::log(2.0), (0.2 + 0.9 * 0.5 + 0.81 * 1.0) / 3.0, 0.3, 1.2};
  double worst = 0.0;
  for (std::size_t i = 0; i < 5; ++i) worst = std::max(worst, std::abs(values[i] - expected[i]));
  return {worst <= 1e-12, fmt::format("gain {} / {:.12f} / {:.6f}, lambda {} and {}; max err {:.1e}", values[0],
                                      values[1], values[2], l1, l2, worst)};
}

std::vector<std::vector<TokenId>> protocol_prompts(pipeline::Pipeline& p, std::size_t count) {
  const auto units = pipeline::evaluation_protocol(p.registry(), p.config().generation.attributes, 1);
  std::vector<std::vector<TokenId>> out;
  for (std::size_t i = 0; out.size() < count; ++i) out.push_back(p.vocab().encode(units[i % units.size()].prompt));
  return out;
}

Outcome zero_strength(pipeline::Pipeline& p) {
  const auto prompts = protocol_prompts(p, 100);
  const auto& g = p.config().generation;
  std::size_t identical = 0, total = 0;
  for (auto mode : {calib::Mode::Emb, calib::Mode::Cls}) {
    auto c = p.config().calibration_for(mode, 0.0);
    const calib::ModeInputs inputs{&p.bias_word_ids(), &p.head()};
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const std::uint64_t seed = 5000 + i;
      const auto vanilla = lm::generate_vanilla(p.lm(), prompts[i], g.max_new_tokens, g.decode, seed);
      const auto debiased = calib::generate_debiased(p.lm(), prompts[i], g.max_new_tokens, g.decode, c, inputs, seed);
      identical += debiased.token_ids == vanilla;
      ++total;
    }
  }
  return {identical == total, fmt::format("{}/{} generations identical (emb and cls, 100 prompts each)", identical,
                                          total)};
}

const json& bias_entry(const json& summary, const std::string& attribute, const std::string& mode) {
  return summary.at("bias").at(attribute).at(mode);
}

Outcome bias_emergence(const json& summary, const std::string& attribute) {
  const double ind = bias_entry(summary, attribute, "vanilla").at("overall_indirect");
  const double f1 = summary.at("models").at("train-judge").at("test_macro_f1");
  return {ind >= 0.2 && f1 >= 0.90, fmt::format("vanilla {} indirect {:.4f} (>= 0.2), judge F1 {:.4f} (>= 0.90)",
                                                attribute, ind, f1)};
}

Outcome mitigation(const json& summary, const std::string& attribute, double minutes) {
  const auto& cls = bias_entry(summary, attribute, "cls");
  const auto& emb = bias_entry(summary, attribute, "emb");
  const double cls_ind = cls.at("indirect_reduction"), cls_dir = cls.at("direct_reduction");
  const double emb_ind = emb.at("indirect_reduction");
  const bool pass = cls_ind >= 0.30 && cls_dir >= 0.25 && emb_ind >= 0.15 && minutes < 20.0;
  return {pass, fmt::format("cls indirect {:+.1f}% (<= -30), direct {:+.1f}% (<= -25); emb indirect {:+.1f}% (<= -15); "
                            "3 seeds, {:.1f} min",
                            -100 * cls_ind, -100 * cls_dir, -100 * emb_ind, minutes)};
}

Outcome tradeoff(const json& summary, const std::string& attribute) {
  std::optional<double> vanilla_ppl, ind01, ind09, ppl09;
  for (const auto& row : summary.at("tradeoff").at(attribute)) {
    const double lambda = row.at("lambda");
    if (row.at("mode") == "vanilla") vanilla_ppl = row.at("ppl").get<double>();
    if (row.at("mode") != "cls") continue;
    if (std::abs(lambda - 0.1) < 1e-9) ind01 = row.at("overall_indirect").get<double>();
    if (std::abs(lambda - 0.9) < 1e-9) {
      ind09 = row.at("overall_indirect").get<double>();
      ppl09 = row.at("ppl").get<double>();
    }
  }
  if (!vanilla_ppl || !ind01 || !ind09 || !ppl09) return {false, "sweep lacks the vanilla, 0.1 or 0.9 rows"};
  const bool pass = *ind09 < *ind01 && *ppl09 > *vanilla_ppl && *ppl09 <= 3.0 * *vanilla_ppl;
  return {pass, fmt::format("indirect {:.4f} at 0.9 vs {:.4f} at 0.1; ppl {:.2f} at 0.9 vs vanilla {:.2f} "
                            "(needs vanilla < ppl <= {:.2f})",
                            *ind09, *ind01, *ppl09, *vanilla_ppl, 3.0 * *vanilla_ppl)};
}

Outcome baseline_ordering(const json& summary, const std::string& attribute) {
  const double naive = bias_entry(summary, attribute, "naive").at("indirect_reduction");
  const double cls = bias_entry(summary, attribute, "cls").at("indirect_reduction");
  return {naive < cls, fmt::format("naive indirect {:+.1f}% vs cls {:+.1f}%", -100 * naive, -100 * cls)};
}

// Each suite returns the number of cases and the number that failed.
struct Suite {
  std::string name;
  std::function<std::pair<std::size_t, std::size_t>()> run;
};

Outcome invariant_suites(pipeline::Pipeline& p) {
  const auto& model = p.lm();
  const auto& words = p.bias_word_ids();
  const auto& head = p.head();
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto random_tokens = [&](std::size_t n) {
    std::vector<TokenId> ids(n);
    for (auto& t : ids) t = static_cast<TokenId>(3 + rng() % (model.vocab_size() - 3));
    return ids;
  };

  std::vector<Suite> suites;
  suites.push_back({"emb gain swap symmetry", [&] {
                      std::size_t bad = 0;
                      std::normal_distribution<double> n(5.0, 3.0);
                      for (int i = 0; i < 200; ++i) {
                        const double a = n(rng), b = n(rng);
                        bad += calib::mode1_gain(a, b) != calib::mode1_gain(b, a);
                      }
                      calib::BiasWordIds swapped{words.conservative, words.liberal, 0};
                      for (int i = 0; i < 200; ++i) {
                        const auto fs = lm::forward_states(model, random_tokens(1 + rng() % 20));
                        bad += std::abs(calib::mode1_gain(model, fs.accumulated, words) -
                                        calib::mode1_gain(model, fs.accumulated, swapped)) > 1e-9;
                      }
                      return std::pair<std::size_t, std::size_t>{400, bad};
                    }});
  suites.push_back({"cls step gain <= ln 2, equal at 0.5", [&] {
                      std::size_t bad = calib::mode2_step_gain(0.5) != std::log(2.0);
                      for (int i = 0; i < 200; ++i) bad += calib::mode2_step_gain(u01(rng)) > std::log(2.0);
                      return std::pair<std::size_t, std::size_t>{201, bad};
                    }});
  suites.push_back({"KL >= 0", [&] {
                      std::size_t bad = 0;
                      for (int i = 0; i < 200; ++i) {
                        const std::size_t n = 2 + rng() % 30;
                        std::vector<double> a(n), b(n);
                        for (auto& x : a) x = u01(rng);
                        for (auto& x : b) x = u01(rng) + 1e-3;
                        const double sa = std::accumulate(a.begin(), a.end(), 0.0);
                        const double sb = std::accumulate(b.begin(), b.end(), 0.0);
                        for (auto& x : a) x /= sa;
                        for (auto& x : b) x /= sb;
                        bad += ad::kl_categorical(a, b).value < 0.0;
                      }
                      return std::pair<std::size_t, std::size_t>{200, bad};
                    }});
  suites.push_back({"lambda ratio in {0.5, 1, 2}", [&] {
                      std::size_t bad = 0, cases = 0;
                      calib::CalibrationConfig c;
                      for (int i = 0; i < 200; ++i) {
                        double lambda = c.lambda0;
                        for (int t = 0; t < 20; ++t, ++cases) {
                          const double next = calib::update_lambda(lambda, u01(rng) * 4.0 * c.sigma, c);
                          const double r = next / lambda;
                          bad += !(r == 0.5 || r == 1.0 || r == 2.0) || next < c.lambda_min || next > c.lambda_max;
                          lambda = next;
                        }
                      }
                      return std::pair<std::size_t, std::size_t>{cases, bad};
                    }});
  suites.push_back({"causality", [&] {
                      std::size_t bad = 0;
                      const std::size_t d = model.width();
                      for (int i = 0; i < 200; ++i) {
                        auto ids = random_tokens(2 + rng() % 30);
                        const std::size_t j = 1 + rng() % (ids.size() - 1);
                        const auto before = lm::forward_states(model, ids);
                        ids[j] = static_cast<TokenId>(3 + (ids[j] - 3 + 1 + rng() % 50) % (model.vocab_size() - 3));
                        const auto after = lm::forward_states(model, ids);
                        bad += !std::equal(before.hidden.data().begin(), before.hidden.data().begin() + j * d,
                                           after.hidden.data().begin());
                      }
                      return std::pair<std::size_t, std::size_t>{200, bad};
                    }});
  suites.push_back({"seeded determinism", [&] {
                      std::size_t bad = 0;
                      const auto prompts = protocol_prompts(p, 200);
                      const auto& g = p.config().generation;
                      for (std::size_t i = 0; i < 200; ++i) {
                        const auto mode = i % 2 ? calib::Mode::Cls : calib::Mode::Emb;
                        const auto c = p.config().calibration_for(mode);
                        const std::uint64_t seed = rng();
                        const calib::ModeInputs inputs{&words, &head};
                        const auto a = calib::generate_debiased(model, prompts[i], 8, g.decode, c, inputs, seed);
                        const auto b = calib::generate_debiased(model, prompts[i], 8, g.decode, c, inputs, seed);
                        bad += a.token_ids != b.token_ids;
                        for (const auto& e : a.trace) bad += e.kl < 0.0;
                      }
                      return std::pair<std::size_t, std::size_t>{200, bad};
                    }});
  suites.push_back({"w2 metric axioms", [&] {
                      std::size_t bad = 0;
                      for (int i = 0; i < 200; ++i) {
                        const auto a = battery_set(rng, 1 + rng() % 8), b = battery_set(rng, 1 + rng() % 8),
                                   c = battery_set(rng, 1 + rng() % 8);
                        const double ab = metrics::w2_distance(a, b);
                        bad += ab != metrics::w2_distance(b, a) || metrics::w2_distance(a, a) != 0.0 ||
                               ab > metrics::w2_distance(a, c) + metrics::w2_distance(c, b) + 1e-9;
                      }
                      return std::pair<std::size_t, std::size_t>{200, bad};
                    }});
  suites.push_back({"bias measures", [&] {
                      std::size_t bad = 0;
                      for (int i = 0; i < 200; ++i) {
                        metrics::OptionScores lib, con;
                        for (const char* o : {"a", "b", "c"}) {
                          lib[o] = battery_set(rng, 1 + rng() % 6);
                          con[o] = battery_set(rng, 1 + rng() % 6);
                        }
                        bad += metrics::direct_bias("a", lib, con) != metrics::direct_bias("a", con, lib);
                        auto shuffled = lib;
                        for (auto& [o, s] : shuffled) std::shuffle(s.begin(), s.end(), rng);
                        bad += std::abs(metrics::indirect_bias("b", lib) - metrics::indirect_bias("b", shuffled)) > 1e-12;
                      }
                      return std::pair<std::size_t, std::size_t>{200, bad};
                    }});

  bool pass = true;
  std::string detail;
  std::size_t smallest = std::numeric_limits<std::size_t>::max();
  for (const auto& s : suites) {
    const auto [cases, bad] = s.run();
    smallest = std::min(smallest, cases);
    if (bad > 0 || cases < 200) {
      pass = false;
      detail += fmt::format("{}: {}/{} failed; ", s.name, bad, cases);
    }
  }
  if (pass) detail = fmt::format("{} suites, >= {} cases each, no failures", suites.size(), smallest);
  return {pass, detail};
}

// Wall time of the stages the mitigation numbers depend on.
double experiment_minutes(const pipeline::RunManifest& m) {
  double total = 0.0;
  for (const char* name :
       {"synth-corpus", "train-lm", "train-judge", "train-debias-head", "extract-bias-words", "generate",
        "evaluate-bias"}) {
    if (const auto* r = m.find(name)) total += r->elapsed_seconds;
  }
  return total / 60.0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string config_path = std::string(DEBIAS_CONFIG_DIR) + "/default.json";
  std::string out;
  app.add_option("--config", config_path, "experiment config")->check(CLI::ExistingFile);
  app.add_option("--out", out, "run directory (resumed when it exists)");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  std::vector<std::pair<std::string, Outcome>> results;
  auto check = [&](const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", results.size() + 1, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(name, o);
  };

  check("metric-oracle", metric_oracle);
  check("gradient-suite", gradient_suite);
  check("formula-fixtures", formula_fixtures);

  std::optional<pipeline::Pipeline> run;
  json summary;
  std::string attribute;
  std::string setup_error;
  try {
    auto config = pipeline::load_config(config_path);
    if (!out.empty()) config.output_dir = out;
    attribute = config.generation.attributes.front();
    run.emplace(std::move(config));
    run->run();
    summary = json::parse(std::ifstream(run->layout().report("summary.json")));
  } catch (const std::exception& e) {
    setup_error = std::string("experiment run failed: ") + e.what();
  }
  auto with_run = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!setup_error.empty()) return {false, setup_error};
      return fn();
    };
  };

  check("zero-strength", with_run([&] { return zero_strength(*run); }));
  check("bias-emergence", with_run([&] { return bias_emergence(summary, attribute); }));
  check("bias-mitigation",
        with_run([&] { return mitigation(summary, attribute, experiment_minutes(run->manifest())); }));
  check("tradeoff-direction", with_run([&] { return tradeoff(summary, attribute); }));
  check("baseline-ordering", with_run([&] { return baseline_ordering(summary, attribute); }));
  check("invariant-suites", with_run([&] { return invariant_suites(*run); }));

  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.second.pass; });
  std::printf("%zu/%zu criteria pass\n", results.size() - static_cast<std::size_t>(failed), results.size());
  return failed == 0 ? 0 : 1;
}
