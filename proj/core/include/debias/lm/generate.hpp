#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/lm/sampling.hpp"
#include "debias/lm/transformer.hpp"

namespace debias::lm {

struct GenerationRecord {
  std::string attribute;
  std::string option;
  std::string keyword;
  int template_id = 0;
  std::string ideology_tag = "none";  // none, L or C
  std::string mode = "vanilla";       // vanilla, emb, cls or naive
  double lambda = 0.0;
  std::uint64_t rng_seed = 0;
  std::vector<TokenId> token_ids;  // generated continuation only
  std::string text;                // prompt followed by the continuation
  std::optional<double> judge_score;
};

void to_json(nlohmann::json& j, const GenerationRecord& r);
void from_json(const nlohmann::json& j, GenerationRecord& r);

void write_jsonl(const std::filesystem::path& path, const std::vector<GenerationRecord>& records);
/// Throws std::runtime_error naming the path when it is missing or malformed.
std::vector<GenerationRecord> read_jsonl(const std::filesystem::path& path);

/// Model context for a prompt: the <eot> start token followed by the prompt.
std::vector<TokenId> prompt_context(std::span<const TokenId> prompt);

/// Throws std::length_error when the prompt plus `steps` new tokens would not
/// fit the model context.
void check_budget(const TransformerLM& model, std::size_t prompt_length, std::size_t steps);

/// Samples up to `steps` tokens after the prompt, one uniform draw per step
/// from mt19937_64(seed). Stops after emitting <eot>, which is kept.
std::vector<TokenId> generate_vanilla(const TransformerLM& model, std::span<const TokenId> prompt, std::size_t steps,
                                      const DecodeConfig& decode, std::uint64_t seed);

}  // namespace debias::lm
