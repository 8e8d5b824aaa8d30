#include "debias/calib/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "debias/autodiff/divergence.hpp"
#include "debias/autodiff/ops.hpp"
#include "debias/autodiff/optim.hpp"
#include "debias/lm/generate.hpp"

namespace debias::calib {
namespace {

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

Pairs row_pairs(std::span<const TokenId> ids) {
  Pairs out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.emplace_back(0, id);
  return out;
}

// log softmax(E x) as a [1 x V] row.
ad::Var output_log_probs(ad::Graph& g, const lm::TransformerLM& model, ad::Var x) {
  return ad::log_softmax(ad::matmul(x, g.constant_ref(model.output_projection()), true));
}

ad::Var summed_distance(ad::Var log_probs, const Pairs& at) {
  return ad::scale(ad::sum(ad::gather(log_probs, at)), -1.0);
}

struct Evaluation {
  double objective = 0.0;
  double kl = 0.0;
  double gain = 0.0;
  double reward = 0.0;
  double step_gain = 0.0;  // cls only: r at this perturbation
};

}  // namespace

std::string_view to_string(Mode mode) noexcept { return mode == Mode::Emb ? "emb" : "cls"; }

Mode parse_mode(std::string_view text) {
  if (text == "emb") return Mode::Emb;
  if (text == "cls") return Mode::Cls;
  throw std::invalid_argument("unknown calibration mode '" + std::string(text) + "' (expected emb or cls)");
}

double default_sigma(Mode mode) noexcept { return mode == Mode::Emb ? 0.02 : 0.05; }

std::vector<std::string> validate(const CalibrationConfig& c) {
  std::vector<std::string> errors;
  if (!(c.gamma > 0.0 && c.gamma < 1.0)) errors.push_back("calibration.gamma must be in (0,1)");
  if (!(c.sigma > 0.0)) errors.push_back("calibration.sigma must be positive");
  if (c.steps == 0) errors.push_back("calibration.steps must be at least 1");
  if (!(c.learning_rate > 0.0)) errors.push_back("calibration.learning_rate must be positive");
  if (!(c.lambda_min >= 0.0) || !(c.lambda_max >= c.lambda_min)) {
    errors.push_back("calibration lambda bounds must satisfy 0 <= lambda_min <= lambda_max");
  } else if (c.lambda0 != 0.0 && !(c.lambda0 >= c.lambda_min && c.lambda0 <= c.lambda_max)) {
    errors.push_back("calibration.lambda0 must be 0 or lie within [lambda_min, lambda_max]");
  }
  if (c.reward != "expected" && c.reward != "sampled") {
    errors.push_back("calibration.reward must be expected or sampled");
  }
  return errors;
}

void to_json(nlohmann::json& j, const CalibrationConfig& c) {
  j = nlohmann::json{{"mode", to_string(c.mode)},
                     {"lambda0", c.lambda0},
                     {"sigma", c.sigma},
                     {"steps", c.steps},
                     {"window", c.window},
                     {"gamma", c.gamma},
                     {"learning_rate", c.learning_rate},
                     {"lambda_min", c.lambda_min},
                     {"lambda_max", c.lambda_max},
                     {"reward", c.reward}};
}

void from_json(const nlohmann::json& j, CalibrationConfig& c) {
  c = CalibrationConfig{};
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  c.sigma = default_sigma(c.mode);
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("lambda0", c.lambda0);
  get("sigma", c.sigma);
  get("steps", c.steps);
  get("window", c.window);
  get("gamma", c.gamma);
  get("learning_rate", c.learning_rate);
  get("lambda_min", c.lambda_min);
  get("lambda_max", c.lambda_max);
  get("reward", c.reward);
}

BiasWordIds resolve_bias_words(const corpus::BiasLexicon& lexicon, const corpus::Vocab& vocab) {
  BiasWordIds out;
  auto resolve = [&](const std::vector<std::string>& words, std::vector<TokenId>& ids) {
    for (const auto& w : words) {
      if (vocab.contains(w)) {
        ids.push_back(vocab.id(w));
      } else {
        spdlog::warn("bias word '{}' is not in the vocabulary; skipped", w);
        ++out.skipped;
      }
    }
  };
  resolve(lexicon.liberal, out.liberal);
  resolve(lexicon.conservative, out.conservative);
  return out;
}

double dist_to_word(const lm::TransformerLM& model, std::span<const double> state, TokenId word) {
  if (word >= model.vocab_size()) throw std::out_of_range("dist_to_word: token id outside the vocabulary");
  std::vector<double> logits(model.vocab_size());
  model.project(state, logits);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return (mx + std::log(z)) - logits[word];
}

double mode1_gain(double liberal_distance, double conservative_distance) noexcept {
  return liberal_distance * liberal_distance + conservative_distance * conservative_distance -
         std::abs(liberal_distance - conservative_distance);
}

double mode1_gain(const lm::TransformerLM& model, std::span<const double> state, const BiasWordIds& words) {
  if (words.liberal.empty() && words.conservative.empty()) {
    throw std::invalid_argument("mode1_gain: both bias word lists are empty");
  }
  double s_l = 0.0, s_c = 0.0;
  for (TokenId w : words.liberal) s_l += dist_to_word(model, state, w);
  for (TokenId w : words.conservative) s_c += dist_to_word(model, state, w);
  return mode1_gain(s_l, s_c);
}

double mode2_step_gain(double p) noexcept {
  p = std::clamp(p, ad::kProbabilityFloor, 1.0 - ad::kProbabilityFloor);
  return p >= 0.5 ? -std::log(p) : -std::log1p(-p);
}

double mode2_gain(std::span<const double> gains, double discount, std::size_t window) {
  if (gains.empty()) throw std::invalid_argument("mode2_gain: empty gain window");
  const std::size_t m = std::min(gains.size(), window + 1);
  double total = 0.0;
  double w = 1.0;
  for (std::size_t j = 0; j < m; ++j) {
    total += w * gains[gains.size() - 1 - j];
    w *= discount;
  }
  return total / static_cast<double>(m);
}

double reward(double p_debiased, double p_vanilla, double gain) noexcept {
  return std::max(p_debiased, ad::kProbabilityFloor) / std::max(p_vanilla, ad::kProbabilityFloor) * gain;
}

double update_lambda(double lambda, double kl, const CalibrationConfig& config) noexcept {
  double next = lambda;
  if (kl >= 2.0 * config.sigma) {
    next = lambda / 2.0;
  } else if (kl <= config.sigma / 2.0) {
    next = lambda * 2.0;
  }
  return next >= config.lambda_min && next <= config.lambda_max ? next : lambda;
}

void to_json(nlohmann::json& j, const TraceEntry& e) {
  j = nlohmann::json{{"step", e.step},
                     {"lambda", e.lambda},
                     {"kl", e.kl},
                     {"gain", e.gain},
                     {"reward", e.reward},
                     {"token_id", e.token_id},
                     {"vanilla_token_id", e.vanilla_token_id},
                     {"reverted_flag", e.reverted},
                     {"objective_initial", e.objective_initial},
                     {"objective_final", e.objective_final}};
}

void from_json(const nlohmann::json& j, TraceEntry& e) {
  j.at("step").get_to(e.step);
  j.at("lambda").get_to(e.lambda);
  j.at("kl").get_to(e.kl);
  j.at("gain").get_to(e.gain);
  j.at("reward").get_to(e.reward);
  j.at("token_id").get_to(e.token_id);
  j.at("vanilla_token_id").get_to(e.vanilla_token_id);
  j.at("reverted_flag").get_to(e.reverted);
  e.objective_initial = j.value("objective_initial", 0.0);
  e.objective_final = j.value("objective_final", 0.0);
}

void write_trace_jsonl(const std::filesystem::path& path, std::span<const TraceEntry> trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : trace) out << nlohmann::json(e).dump() << '\n';
}

TokenCalibrator::TokenCalibrator(const lm::TransformerLM& model, CalibrationConfig config, ModeInputs inputs,
                                 lm::DecodeConfig decode)
    : model_(&model), config_(config), inputs_(inputs), decode_(decode), lambda_(config.lambda0) {
  if (const auto errors = validate(config_); !errors.empty()) {
    throw std::invalid_argument("invalid calibration config: " + errors.front());
  }
  if (config_.mode == Mode::Emb) {
    if (!inputs_.words) throw std::invalid_argument("emb calibration needs bias word ids");
    if (inputs_.words->liberal.empty() && inputs_.words->conservative.empty()) {
      throw std::invalid_argument("emb calibration: both bias word lists are empty");
    }
    for (const auto* list : {&inputs_.words->liberal, &inputs_.words->conservative}) {
      for (TokenId w : *list) {
        if (w >= model.vocab_size()) throw std::out_of_range("bias word id outside the vocabulary");
      }
    }
    liberal_at_ = row_pairs(inputs_.words->liberal);
    conservative_at_ = row_pairs(inputs_.words->conservative);
  } else {
    if (!inputs_.head) throw std::invalid_argument("cls calibration needs a debias head");
    if (inputs_.head->config().width != model.width()) {
      throw std::invalid_argument("cls calibration: head width does not match the LM");
    }
    head_state_ = inputs_.head->config().state;
  }
  expected_reward_ = config_.reward == "expected";
}

TraceEntry TokenCalibrator::step(std::span<const double> last_hidden, std::span<const double> accumulated, double u) {
  const lm::TransformerLM& model = *model_;
  const std::size_t d = model.width();
  if (last_hidden.size() != d || accumulated.size() != d) {
    throw std::invalid_argument("TokenCalibrator::step: state width does not match the LM");
  }
  ++steps_done_;
  TraceEntry entry;
  entry.step = steps_done_;
  entry.lambda = lambda_;

  std::vector<double> logits(model.vocab_size());
  model.project(last_hidden, logits);
  const TokenId vanilla = lm::sample_token(logits, decode_, u);
  entry.vanilla_token_id = vanilla;

  const ad::Tensor last_row = ad::Tensor::row(std::vector<double>(last_hidden.begin(), last_hidden.end()));
  const ad::Tensor mean_row = ad::Tensor::row(std::vector<double>(accumulated.begin(), accumulated.end()));

  // Reference log-probabilities through the same ops the loop uses, so that a
  // zero perturbation reproduces them bit for bit.
  ad::Tensor ref_log_probs;
  {
    ad::Graph g;
    ref_log_probs = output_log_probs(g, model, g.constant_ref(last_row)).value();
  }
  ad::Tensor ref_probs(ref_log_probs.shape());
  for (std::size_t i = 0; i < ref_probs.size(); ++i) ref_probs[i] = std::exp(ref_log_probs[i]);
  const Pairs vanilla_at{{0, vanilla}};
  const double ref_vanilla_log_prob = ref_log_probs[vanilla];

  // Discounted sum of the recorded cls gains that precede this step.
  const std::size_t window_len = std::min(history_.size() + 1, config_.window + 1);
  double past = 0.0;
  {
    double w = config_.gamma;
    for (std::size_t j = 1; j < window_len; ++j) {
      past += w * history_[history_.size() - j];
      w *= config_.gamma;
    }
  }

  const double lambda = lambda_;
  auto evaluate = [&](ad::Tensor& delta, bool with_backward) {
    ad::Graph g;
    ad::Var dh = with_backward ? g.param(delta) : g.constant_ref(delta);
    ad::Var lp = output_log_probs(g, model, ad::add(g.constant_ref(last_row), dh));
    ad::Var kl = ad::sum(ad::mul(g.constant_ref(ref_probs), ad::sub(g.constant_ref(ref_log_probs), lp)));

    Evaluation ev;
    ad::Var gain;
    if (config_.mode == Mode::Emb) {
      // Distances are read from the distribution the token is emitted from.
      ad::Var s_l = liberal_at_.empty() ? g.constant(ad::Tensor::scalar(0.0)) : summed_distance(lp, liberal_at_);
      ad::Var s_c =
          conservative_at_.empty() ? g.constant(ad::Tensor::scalar(0.0)) : summed_distance(lp, conservative_at_);
      gain = ad::sub(ad::add(ad::square(s_l), ad::square(s_c)), ad::abs(ad::sub(s_l, s_c)));
    } else {
      ad::Var state;
      if (head_state_ == "next") {
        state = ad::matmul(ad::exp(lp), g.constant_ref(model.output_projection()));
      } else {
        state = ad::add(g.constant_ref(head_state_ == "last" ? last_row : mean_row), dh);
      }
      ad::Var head_lp = ad::log_softmax(inputs_.head->logits_graph(g, state));
      // The decision class has probability >= 0.5, so its log needs no clamp.
      const std::size_t y = head_lp.value()[1] >= head_lp.value()[0] ? 1 : 0;
      const Pairs at{{0, y}};
      ad::Var r = ad::scale(ad::gather(head_lp, at), -1.0);
      ev.step_gain = r.value().item();
      gain = ad::scale(ad::add_scalar(r, past), 1.0 / static_cast<double>(window_len));
    }
    ad::Var ratio = ad::exp(ad::add_scalar(ad::gather(lp, vanilla_at), -ref_vanilla_log_prob));
    ad::Var rew = ad::mul(ratio, gain);
    ad::Var objective = ad::sub(ad::scale(expected_reward_ ? gain : rew, lambda), kl);

    ev.objective = objective.value().item();
    ev.kl = std::max(0.0, kl.value().item());
    ev.gain = gain.value().item();
    ev.reward = rew.value().item();
    if (!std::isfinite(ev.objective)) throw ad::NonFiniteError("calibration objective", objective.id());
    if (with_backward) g.backward(ad::scale(objective, -1.0));
    return ev;
  };

  ad::Tensor delta({1, d});
  Evaluation final_eval;
  try {
    delta.set_requires_grad(true);
    ad::AdamState adam(ad::AdamConfig{config_.learning_rate, 0.9, 0.999, 1e-8}, std::vector<std::size_t>{d});
    // With no reward weight the objective is -KL, maximised exactly at zero
    // perturbation. Adam would only amplify rounding noise there.
    const std::size_t inner_steps = lambda == 0.0 ? 0 : config_.steps;
    for (std::size_t k = 0; k < inner_steps; ++k) {
      delta.zero_grad();
      const Evaluation ev = evaluate(delta, true);
      if (k == 0) entry.objective_initial = ev.objective;
      adam.step(delta.data(), delta.grad());
    }
    delta.set_requires_grad(false);
    final_eval = evaluate(delta, false);
  } catch (const ad::NonFiniteError& e) {
    spdlog::warn("calibration step {}: {}; perturbation reverted", entry.step, e.what());
    delta = ad::Tensor({1, d});
    entry.reverted = true;
    final_eval = evaluate(delta, false);
  }

  entry.kl = final_eval.kl;
  entry.gain = final_eval.gain;
  entry.reward = final_eval.reward;
  entry.objective_final = final_eval.objective;
  if (entry.reverted || lambda == 0.0) entry.objective_initial = final_eval.objective;

  std::vector<double> shifted(last_hidden.begin(), last_hidden.end());
  for (std::size_t i = 0; i < d; ++i) shifted[i] += delta[i];
  model.project(shifted, logits);
  entry.token_id = lm::sample_token(logits, decode_, u);

  if (config_.mode == Mode::Cls) history_.push_back(final_eval.step_gain);
  if (!entry.reverted) lambda_ = update_lambda(lambda_, entry.kl, config_);
  return entry;
}

DebiasedGeneration generate_debiased(const lm::TransformerLM& model, std::span<const TokenId> prompt,
                                     std::size_t steps, const lm::DecodeConfig& decode,
                                     const CalibrationConfig& config, const ModeInputs& inputs, std::uint64_t seed) {
  lm::check_budget(model, prompt.size(), steps);
  DebiasedGeneration out;
  TokenCalibrator calibrator(model, config, inputs, decode);
  if (steps == 0) return out;
  std::mt19937_64 rng(seed);
  lm::DecodeState state(model);
  for (TokenId t : lm::prompt_context(prompt)) state.push(t);
  for (std::size_t s = 0; s < steps; ++s) {
    const TraceEntry e = calibrator.step(state.last_hidden(), state.accumulated_hidden(), lm::next_uniform(rng));
    out.token_ids.push_back(e.token_id);
    out.trace.push_back(e);
    if (e.token_id == corpus::kEotId || s + 1 == steps) break;
    state.push(e.token_id);
  }
  return out;
}

}  // namespace debias::calib
