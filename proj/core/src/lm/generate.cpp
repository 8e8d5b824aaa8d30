#include "debias/lm/generate.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace debias::lm {

void to_json(nlohmann::json& j, const GenerationRecord& r) {
  j = nlohmann::json{{"attribute", r.attribute},     {"option", r.option},     {"keyword", r.keyword},
                     {"template_id", r.template_id}, {"ideology_tag", r.ideology_tag}, {"mode", r.mode},
                     {"lambda", r.lambda},           {"rng_seed", r.rng_seed}, {"token_ids", r.token_ids},
                     {"text", r.text}};
  j["judge_score"] = r.judge_score ? nlohmann::json(*r.judge_score) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, GenerationRecord& r) {
  j.at("attribute").get_to(r.attribute);
  j.at("option").get_to(r.option);
  j.at("keyword").get_to(r.keyword);
  j.at("template_id").get_to(r.template_id);
  j.at("ideology_tag").get_to(r.ideology_tag);
  j.at("mode").get_to(r.mode);
  j.at("lambda").get_to(r.lambda);
  j.at("rng_seed").get_to(r.rng_seed);
  j.at("token_ids").get_to(r.token_ids);
  j.at("text").get_to(r.text);
  if (j.contains("judge_score") && !j.at("judge_score").is_null()) {
    r.judge_score = j.at("judge_score").get<double>();
  } else {
    r.judge_score.reset();
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<GenerationRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

std::vector<GenerationRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing generation log " + path.string());
  std::vector<GenerationRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<GenerationRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

std::vector<TokenId> prompt_context(std::span<const TokenId> prompt) {
  std::vector<TokenId> ctx{corpus::kEotId};
  ctx.insert(ctx.end(), prompt.begin(), prompt.end());
  return ctx;
}

void check_budget(const TransformerLM& model, std::size_t prompt_length, std::size_t steps) {
  if (prompt_length == 0) throw std::invalid_argument("generation needs a non-empty prompt");
  // +1 for the start token; the last sampled token is never fed back.
  if (1 + prompt_length + (steps > 0 ? steps - 1 : 0) > model.config().context_length) {
    throw std::length_error("prompt of " + std::to_string(prompt_length) + " tokens plus " + std::to_string(steps) +
                            " new tokens exceeds context length " + std::to_string(model.config().context_length));
  }
}

std::vector<TokenId> generate_vanilla(const TransformerLM& model, std::span<const TokenId> prompt, std::size_t steps,
                                      const DecodeConfig& decode, std::uint64_t seed) {
  check_budget(model, prompt.size(), steps);
  std::vector<TokenId> out;
  if (steps == 0) return out;
  std::mt19937_64 rng(seed);
  DecodeState state(model);
  for (TokenId t : prompt_context(prompt)) state.push(t);
  std::vector<double> logits(model.vocab_size());
  for (std::size_t s = 0; s < steps; ++s) {
    model.project(state.last_hidden(), logits);
    const TokenId next = sample_token(logits, decode, next_uniform(rng));
    out.push_back(next);
    if (next == corpus::kEotId || s + 1 == steps) break;
    state.push(next);
  }
  return out;
}

}  // namespace debias::lm
