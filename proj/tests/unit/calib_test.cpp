#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include <nlohmann/json.hpp>

#include "../support/planted.hpp"
#include "debias/calib/calibration.hpp"
#include "debias/corpus/lexicon.hpp"
#include "debias/lm/generate.hpp"
#include "debias/lm/train.hpp"

using namespace debias;
using namespace debias::calib;

namespace {

struct Models {
  lm::TransformerLM lm;
  judge::DebiasHead head;
  BiasWordIds words;
};

const Models& models() {
  static const Models m = [] {
    const auto& f = debias::testing::planted_fixture();
    lm::LmConfig mc;
    mc.vocab_size = f.vocab.size();
    mc.context_length = 64;
    mc.width = 16;
    mc.layers = 1;
    lm::TrainConfig tc;
    tc.epochs = 2;
    tc.warmup_steps = 5;
    auto trained = lm::train_lm(f.splits.train, f.splits.valid, mc, tc);
    judge::HeadConfig hc;
    hc.width = 16;
    hc.epochs = 10;
    auto head = judge::train_debias_head(trained.model, f.splits.train, f.splits.test, hc);
    const auto lexicon = corpus::extract_bias_words(f.splits.train, f.vocab, 10);
    return Models{std::move(trained.model), std::move(head.head), resolve_bias_words(lexicon, f.vocab)};
  }();
  return m;
}

std::vector<corpus::TokenId> random_prompt(std::mt19937_64& rng) {
  const auto& f = debias::testing::planted_fixture();
  const auto& attr = f.registry.attributes.front();
  const auto& tmpl = attr.templates[rng() % attr.templates.size()];
  const auto& opt = attr.options[rng() % attr.options.size()];
  return f.vocab.encode(corpus::fill_prompt(tmpl.text, opt.keywords.front(), f.registry.placeholder));
}

// softmax of a logit vector computed independently of the library.
std::vector<double> oracle_softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - mx);
  for (double& v : p) v /= s;
  return p;
}

// LM whose output projection is set by hand: vocab 4, width 2, only E[0][0] nonzero.
lm::TransformerLM tiny_lm(double a) {
  lm::LmConfig c;
  c.vocab_size = 4;
  c.width = 2;
  c.heads = 1;
  c.layers = 1;
  c.context_length = 4;
  lm::TransformerLM m(c);
  auto& e = *m.parameters()[0];
  for (double& v : e.data()) v = 0.0;
  e.at(0, 0) = a;
  return m;
}

}  // namespace

TEST(Formula, Mode1GainByHand) {
  EXPECT_NEAR(mode1_gain(3.0, 4.0), 24.0, 1e-12);
  EXPECT_DOUBLE_EQ(mode1_gain(2.5, 2.5), 2.0 * 2.5 * 2.5);
}

TEST(Formula, Mode1GainIsSwapSymmetric) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 300.0);
  for (int i = 0; i < 500; ++i) {
    const double a = u(rng), b = u(rng);
    EXPECT_EQ(mode1_gain(a, b), mode1_gain(b, a));
  }
}

TEST(Formula, Mode1GainOnModelIsSwapSymmetric) {
  const auto& m = models();
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  BiasWordIds swapped{m.words.conservative, m.words.liberal, 0};
  for (int i = 0; i < 200; ++i) {
    std::vector<double> s(m.lm.width());
    for (double& v : s) v = n(rng);
    EXPECT_NEAR(mode1_gain(m.lm, s, m.words), mode1_gain(m.lm, s, swapped), 1e-9);
  }
}

TEST(Formula, DistanceIsNegativeLogProbability) {
  const auto m = tiny_lm(std::log(std::exp(2.0) - 3.0));
  const std::vector<double> state{1.0, 0.0};
  // p(1) = 1 / (e^a + 3) = e^-2
  EXPECT_NEAR(dist_to_word(m, state, 1), 2.0, 1e-12);
  const auto certain = tiny_lm(800.0);
  EXPECT_NEAR(dist_to_word(certain, state, 0), 0.0, 1e-12);
  EXPECT_THROW(dist_to_word(m, state, 4), std::out_of_range);
}

TEST(Formula, DistanceMatchesOracleAndIsMonotone) {
  const auto& m = models();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> s(m.lm.width());
    for (double& v : s) v = n(rng);
    std::vector<double> z(m.lm.vocab_size(), 0.0);
    const auto& e = m.lm.output_projection();
    for (std::size_t v = 0; v < z.size(); ++v) {
      for (std::size_t k = 0; k < s.size(); ++k) z[v] += e.at(v, k) * s[k];
    }
    const auto p = oracle_softmax(z);
    const std::size_t a = rng() % z.size(), b = rng() % z.size();
    const double da = dist_to_word(m.lm, s, a), db = dist_to_word(m.lm, s, b);
    EXPECT_NEAR(da, -std::log(p[a]), 1e-9);
    EXPECT_GT(da, 0.0);
    if (p[a] > p[b] * (1 + 1e-9)) EXPECT_LT(da, db);
  }
}

TEST(Formula, Mode2StepGainExamples) {
  EXPECT_NEAR(mode2_step_gain(0.5), std::log(2.0), 1e-12);
  EXPECT_NEAR(mode2_step_gain(0.9), -std::log(0.9), 1e-12);
  EXPECT_NEAR(mode2_step_gain(0.1), -std::log(0.9), 1e-12);
  EXPECT_TRUE(std::isfinite(mode2_step_gain(0.0)));
  EXPECT_TRUE(std::isfinite(mode2_step_gain(1.0)));
}

TEST(Formula, Mode2StepGainPeaksAtHalfAndIsContinuous) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double ln2 = std::log(2.0);
  for (int i = 0; i < 1000; ++i) {
    const double p = u(rng);
    const double r = mode2_step_gain(p);
    EXPECT_LE(r, ln2 + 1e-15);
    if (p != 0.5) EXPECT_LT(r, ln2);
  }
  for (double eps : {1e-3, 1e-6, 1e-9}) {
    EXPECT_NEAR(mode2_step_gain(0.5 - eps), mode2_step_gain(0.5 + eps), 4 * eps);
    EXPECT_NEAR(mode2_step_gain(0.5 - eps), ln2, 4 * eps);
  }
}

TEST(Formula, Mode2GainWindow) {
  const std::vector<double> r{1.0, 0.5, 0.2};
  EXPECT_NEAR(mode2_gain(r, 0.9, 2), (0.81 * 1.0 + 0.9 * 0.5 + 0.2) / 3.0, 1e-12);
  EXPECT_NEAR(mode2_gain(r, 0.9, 2), 0.486667, 1e-6);
  EXPECT_DOUBLE_EQ(mode2_gain(r, 0.9, 0), 0.2);
  // Longer histories only see the last window + 1 entries.
  const std::vector<double> longer{7.0, 7.0, 1.0, 0.5, 0.2};
  EXPECT_DOUBLE_EQ(mode2_gain(longer, 0.9, 2), mode2_gain(r, 0.9, 2));
  // Truncated at the start: divisor is the number of entries present.
  const std::vector<double> two{1.0, 0.5};
  EXPECT_NEAR(mode2_gain(two, 0.9, 5), (0.9 * 1.0 + 0.5) / 2.0, 1e-12);
  EXPECT_THROW(mode2_gain(std::vector<double>{}, 0.9, 2), std::invalid_argument);
}

TEST(Formula, Mode2GainOfConstantIsBounded) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 200; ++i) {
    const double c = u(rng) * std::log(2.0);
    const double gamma = u(rng);
    const std::size_t tau = rng() % 8;
    const std::vector<double> r(tau + 1, c);
    double geo = 0.0;
    for (std::size_t j = 0; j <= tau; ++j) geo += std::pow(gamma, static_cast<double>(j));
    const double d = mode2_gain(r, gamma, tau);
    EXPECT_NEAR(d, c * geo / static_cast<double>(tau + 1), 1e-12);
    EXPECT_LE(d, c + 1e-15);
  }
}

TEST(Formula, RewardExamples) {
  EXPECT_DOUBLE_EQ(reward(0.3, 0.3, 1.7), 1.7);
  EXPECT_NEAR(reward(0.25, 0.5, 2.0), 1.0, 1e-15);
  EXPECT_EQ(reward(0.9, 0.1, 0.0), 0.0);
  EXPECT_TRUE(std::isfinite(reward(0.5, 0.0, 1.0)));
}

TEST(Formula, LambdaUpdateCases) {
  CalibrationConfig c;
  c.sigma = 0.02;
  EXPECT_NEAR(update_lambda(0.6, 0.05, c), 0.3, 1e-12);
  EXPECT_NEAR(update_lambda(0.6, 0.005, c), 1.2, 1e-12);
  EXPECT_EQ(update_lambda(0.6, 0.02, c), 0.6);
  EXPECT_NEAR(update_lambda(0.6, 0.04, c), 0.3, 1e-12);
  EXPECT_NEAR(update_lambda(0.6, 0.01, c), 1.2, 1e-12);
  EXPECT_EQ(update_lambda(8.0, 0.0, c), 8.0);      // 16 would leave the clamp
  EXPECT_EQ(update_lambda(1.5e-3, 1.0, c), 1.5e-3);  // so would 7.5e-4
  c.lambda_min = 0.0;
  EXPECT_EQ(update_lambda(0.0, 0.0, c), 0.0);
}

TEST(Formula, LambdaRatioAndClampsOnRandomTrajectories) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> kl(0.0, 0.1);
  CalibrationConfig c;
  for (int run = 0; run < 200; ++run) {
    c.sigma = 0.005 + kl(rng) / 4;
    double lambda = c.lambda0;
    for (int t = 0; t < 50; ++t) {
      const double next = update_lambda(lambda, kl(rng), c);
      const double ratio = next / lambda;
      EXPECT_TRUE(ratio == 0.5 || ratio == 1.0 || ratio == 2.0) << ratio;
      EXPECT_GE(next, c.lambda_min);
      EXPECT_LE(next, c.lambda_max);
      lambda = next;
    }
  }
}

TEST(Config, ValidationCollectsEveryError) {
  CalibrationConfig c;
  c.gamma = 1.0;
  c.sigma = 0.0;
  c.steps = 0;
  EXPECT_EQ(validate(c).size(), 3u);
  EXPECT_TRUE(validate(CalibrationConfig{}).empty());
}

TEST(Config, ZeroStrengthAndRewardEstimator) {
  CalibrationConfig c;
  c.lambda0 = 0.0;
  EXPECT_TRUE(validate(c).empty());
  c.lambda0 = 1e-4;
  EXPECT_EQ(validate(c).size(), 1u);
  c.lambda0 = 0.6;
  c.reward = "advantage";
  ASSERT_EQ(validate(c).size(), 1u);
  EXPECT_EQ(validate(c).front(), "calibration.reward must be expected or sampled");
  c.reward = "sampled";
  EXPECT_EQ(nlohmann::json(c).get<CalibrationConfig>().reward, "sampled");
  EXPECT_EQ(nlohmann::json::object().get<CalibrationConfig>().reward, "expected");
}

TEST(Config, SigmaDefaultFollowsMode) {
  const auto emb = nlohmann::json{{"mode", "emb"}}.get<CalibrationConfig>();
  EXPECT_EQ(emb.sigma, 0.02);
  const auto cls = nlohmann::json{{"mode", "cls"}}.get<CalibrationConfig>();
  EXPECT_EQ(cls.sigma, 0.05);
  EXPECT_THROW(parse_mode("vanilla"), std::invalid_argument);
  const CalibrationConfig back = nlohmann::json(emb).get<CalibrationConfig>();
  EXPECT_EQ(back.sigma, emb.sigma);
  EXPECT_EQ(back.mode, Mode::Emb);
}

TEST(Calibrator, RequiresModeInputs) {
  const auto& m = models();
  CalibrationConfig c;
  c.mode = Mode::Cls;
  EXPECT_THROW(TokenCalibrator(m.lm, c, ModeInputs{}, lm::DecodeConfig{}), std::invalid_argument);
  c.mode = Mode::Emb;
  BiasWordIds empty;
  EXPECT_THROW(TokenCalibrator(m.lm, c, ModeInputs{&empty, nullptr}, lm::DecodeConfig{}), std::invalid_argument);
}

TEST(Calibrator, ZeroStrengthReproducesVanillaGeneration) {
  const auto& m = models();
  std::mt19937_64 rng(21);
  for (Mode mode : {Mode::Emb, Mode::Cls}) {
    CalibrationConfig c;
    c.mode = mode;
    c.sigma = default_sigma(mode);
    c.lambda0 = 0.0;
    for (int i = 0; i < 100; ++i) {
      const auto prompt = random_prompt(rng);
      const std::uint64_t seed = rng();
      const auto vanilla = lm::generate_vanilla(m.lm, prompt, 20, lm::DecodeConfig{}, seed);
      const auto debiased =
          generate_debiased(m.lm, prompt, 20, lm::DecodeConfig{}, c, ModeInputs{&m.words, &m.head}, seed);
      ASSERT_EQ(debiased.token_ids, vanilla) << to_string(mode) << " prompt " << i;
      ASSERT_EQ(debiased.trace.size(), vanilla.size());
      for (const auto& e : debiased.trace) {
        EXPECT_EQ(e.lambda, 0.0);
        EXPECT_LE(e.kl, 1e-15);
        EXPECT_EQ(e.token_id, e.vanilla_token_id);
      }
    }
  }
}

TEST(Calibrator, TraceInvariantsOnSeededRuns) {
  const auto& m = models();
  std::mt19937_64 rng(33);
  for (Mode mode : {Mode::Emb, Mode::Cls}) {
    CalibrationConfig c;
    c.mode = mode;
    c.sigma = default_sigma(mode);
    std::size_t steps = 0, improved = 0, changed = 0;
    for (int i = 0; i < 20; ++i) {
      const auto prompt = random_prompt(rng);
      const std::uint64_t seed = rng();
      const auto a = generate_debiased(m.lm, prompt, 15, lm::DecodeConfig{}, c, ModeInputs{&m.words, &m.head}, seed);
      const auto b = generate_debiased(m.lm, prompt, 15, lm::DecodeConfig{}, c, ModeInputs{&m.words, &m.head}, seed);
      ASSERT_EQ(a.token_ids, b.token_ids);
      ASSERT_EQ(a.trace.size(), a.token_ids.size());
      double prev = c.lambda0;
      for (std::size_t t = 0; t < a.trace.size(); ++t) {
        const auto& e = a.trace[t];
        EXPECT_EQ(e.step, t + 1);
        EXPECT_EQ(e.token_id, a.token_ids[t]);
        EXPECT_GE(e.kl, 0.0);
        EXPECT_TRUE(std::isfinite(e.reward));
        const double ratio = e.lambda / prev;
        EXPECT_TRUE(ratio == 0.5 || ratio == 1.0 || ratio == 2.0) << ratio;
        EXPECT_GE(e.lambda, c.lambda_min);
        EXPECT_LE(e.lambda, c.lambda_max);
        prev = e.lambda;
        ++steps;
        improved += e.objective_final >= e.objective_initial - 1e-9;
        changed += e.token_id != e.vanilla_token_id;
      }
    }
    EXPECT_GE(steps, 200u);
    EXPECT_GE(static_cast<double>(improved), 0.95 * static_cast<double>(steps)) << to_string(mode);
    RecordProperty(std::string(to_string(mode)) + "_changed_tokens", static_cast<int>(changed));
  }
}

TEST(Calibrator, RewardEstimatorsAgreeAtZeroPerturbation) {
  // At delta-h = 0 the likelihood ratio is 1, so both objectives start equal;
  // the trace reward is ratio * gain under either estimator.
  const auto& m = models();
  std::mt19937_64 rng(8);
  for (Mode mode : {Mode::Emb, Mode::Cls}) {
    for (int i = 0; i < 10; ++i) {
      const auto prompt = lm::prompt_context(random_prompt(rng));
      lm::DecodeState state(m.lm);
      for (auto t : prompt) state.push(t);
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      TraceEntry e[2];
      for (int k = 0; k < 2; ++k) {
        CalibrationConfig c;
        c.mode = mode;
        c.sigma = default_sigma(mode);
        c.reward = k == 0 ? "expected" : "sampled";
        TokenCalibrator cal(m.lm, c, ModeInputs{&m.words, &m.head}, lm::DecodeConfig{});
        e[k] = cal.step(state.last_hidden(), state.accumulated_hidden(), u);
      }
      EXPECT_NEAR(e[0].objective_initial, e[1].objective_initial, 1e-9 * std::abs(e[0].objective_initial) + 1e-12);
      for (const auto& x : e) {
        const double ratio = x.reward / x.gain;
        EXPECT_GT(ratio, 0.0);
        EXPECT_TRUE(std::isfinite(ratio));
      }
    }
  }
}

TEST(Calibrator, ClsGainUsesRecordedHistory) {
  const auto& m = models();
  CalibrationConfig c;
  c.window = 2;
  TokenCalibrator cal(m.lm, c, ModeInputs{nullptr, &m.head}, lm::DecodeConfig{});
  lm::DecodeState state(m.lm);
  std::mt19937_64 rng(3);
  const auto prompt = lm::prompt_context(random_prompt(rng));
  for (auto t : prompt) state.push(t);
  for (int i = 0; i < 5; ++i) {
    const auto e = cal.step(state.last_hidden(), state.accumulated_hidden(), 0.5);
    const auto h = cal.gain_history();
    ASSERT_EQ(h.size(), static_cast<std::size_t>(i + 1));
    EXPECT_NEAR(e.gain, mode2_gain(h, c.gamma, c.window), 1e-12);
    state.push(e.token_id);
  }
}

TEST(Calibrator, TraceJsonRoundTrip) {
  TraceEntry e;
  e.step = 3;
  e.lambda = 0.3;
  e.kl = 0.01;
  e.gain = 0.6;
  e.reward = 0.55;
  e.token_id = 17;
  e.vanilla_token_id = 12;
  e.reverted = true;
  const auto j = nlohmann::json(e);
  for (const char* key : {"step", "lambda", "kl", "gain", "reward", "token_id", "vanilla_token_id", "reverted_flag"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  const auto back = j.get<TraceEntry>();
  EXPECT_EQ(back.token_id, 17u);
  EXPECT_TRUE(back.reverted);
}
