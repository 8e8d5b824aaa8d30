#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/calib/calibration.hpp"
#include "debias/corpus/document.hpp"
#include "debias/corpus/lexicon.hpp"
#include "debias/corpus/registry.hpp"
#include "debias/corpus/vocab.hpp"
#include "debias/judge/classifier.hpp"
#include "debias/judge/debias_head.hpp"
#include "debias/lm/generate.hpp"
#include "debias/lm/ngram.hpp"
#include "debias/lm/transformer.hpp"
#include "debias/metrics/bias.hpp"
#include "debias/pipeline/config.hpp"

namespace debias::pipeline {

using corpus::TokenId;

inline constexpr std::string_view kToolVersion = "0.1.0";

enum class Stage {
  SynthCorpus,
  TrainLm,
  TrainJudge,
  TrainDebiasHead,
  ExtractBiasWords,
  Generate,
  EvaluateBias,
  EvaluateTradeoff,
  Report,
};
inline constexpr std::array<Stage, 9> kStages{Stage::SynthCorpus,      Stage::TrainLm,  Stage::TrainJudge,
                                              Stage::TrainDebiasHead,  Stage::ExtractBiasWords,
                                              Stage::Generate,         Stage::EvaluateBias,
                                              Stage::EvaluateTradeoff, Stage::Report};
std::string_view to_string(Stage stage) noexcept;
Stage parse_stage(std::string_view name);

/// Hex FNV-1a 64 of the bytes.
std::string content_hash(std::string_view bytes);

/// Files of a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path corpus() const { return root / "corpus.tsv"; }
  std::filesystem::path split(std::string_view name) const { return root / (std::string(name) + ".tsv"); }
  std::filesystem::path vocab() const { return root / "vocab.txt"; }
  std::filesystem::path lm() const { return root / "lm.ckpt"; }
  std::filesystem::path judge() const { return root / "judge.ckpt"; }
  std::filesystem::path head() const { return root / "debias_head.ckpt"; }
  std::filesystem::path bias_words() const { return root / "bias_words.json"; }
  /// generations/{mode}_s{seed}.jsonl
  std::filesystem::path generations(std::string_view mode, std::size_t seed_index) const;
  /// generations/sweep/cls_lambda{lambda}_s{seed}.jsonl
  std::filesystem::path sweep_generations(double lambda, std::size_t seed_index) const;
  std::filesystem::path ppl_reference() const { return root / "generations" / "ppl_reference.jsonl"; }
  /// traces/{mode}_s{seed}.jsonl
  std::filesystem::path trace(std::string_view mode, std::size_t seed_index) const;
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path report(std::string_view name) const { return reports() / std::string(name); }
};

struct StageRecord {
  std::string name;
  std::vector<std::string> artifacts;  // relative to the run directory
  std::string completed_at;            // UTC, ISO 8601
  double elapsed_seconds = 0.0;
  nlohmann::json details = nlohmann::json::object();
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;  // of config.json as stored in the run directory
  std::string tool_version{kToolVersion};
  std::string created_at;
  std::vector<StageRecord> stages;
  std::optional<std::string> last_completed;
  std::optional<std::string> failed_stage;
  std::string failure;

  const StageRecord* find(std::string_view name) const;
};

void to_json(nlohmann::json& j, const StageRecord& r);
void from_json(const nlohmann::json& j, StageRecord& r);
void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

/// One generation unit of the evaluation protocol.
struct PromptUnit {
  std::string attribute;
  std::string option;
  std::string keyword;
  int template_id = 0;
  std::string ideology_tag;  // none, L or C
  std::string prompt;
  std::size_t sample = 0;
};

/// Every keyword of every listed attribute under every template, times
/// `samples_per_prompt`, in registry order.
std::vector<PromptUnit> evaluation_protocol(const corpus::AttributeRegistry& registry,
                                            const std::vector<std::string>& attributes,
                                            std::size_t samples_per_prompt);

/// Per-sample generation seed. Mode and lambda are deliberately not part of
/// it, so every mode sees the same random stream for the same unit.
std::uint64_t generation_seed(std::uint64_t global, std::string_view stream, std::size_t seed_index,
                              const PromptUnit& unit);

/// Judge score of a continuation with reserved ids removed; empty
/// continuations have none.
std::optional<double> score_continuation(const judge::BiasClassifier& judge, std::span<const TokenId> ids);

/// Mean of per-seed reports; sample counts are summed.
metrics::BiasReport average_reports(const std::vector<metrics::BiasReport>& per_seed);

struct GenerateOptions {
  std::string mode = "vanilla";  // vanilla, emb, cls or naive
  std::optional<double> lambda;
  std::optional<double> sigma;
};

/// An experiment run rooted at config.output_dir. Every stage reads its
/// inputs from the run directory and records its outputs in the manifest.
class Pipeline {
 public:
  /// Creates the run directory or reopens it. Reopening with a config whose
  /// bytes differ from the stored config.json throws. The stored copy leaves
  /// out output_dir and jobs.
  explicit Pipeline(ExperimentConfig config);

  const ExperimentConfig& config() const noexcept { return config_; }
  const RunLayout& layout() const noexcept { return layout_; }
  const RunManifest& manifest() const noexcept { return manifest_; }
  bool completed(std::string_view stage) const;

  void synth_corpus();
  void train_lm();
  void train_judge();
  void train_debias_head();
  void extract_bias_words();
  /// One mode over every generation seed; naive rewrites the vanilla logs.
  void generate(const GenerateOptions& options);
  void baseline_naive();
  void evaluate_bias();
  void evaluate_tradeoff();
  void report();

  /// All stages in order, skipping those the manifest lists as completed
  /// whose artifacts still exist.
  void run();

  /// Artifacts of this run, loaded on first use. Throw naming the producing
  /// stage when the file is missing.
  const corpus::AttributeRegistry& registry();
  const corpus::Vocab& vocab();
  const lm::TransformerLM& lm();
  const judge::BiasClassifier& judge();
  const judge::DebiasHead& head();
  const calib::BiasWordIds& bias_word_ids();

 private:
  template <typename Fn>
  void stage(const std::string& name, Fn&& body);
  void record(const std::string& name, const std::vector<std::filesystem::path>& artifacts, nlohmann::json details,
              double elapsed_seconds);
  void save_manifest() const;

  corpus::Splits<corpus::Document> encoded_splits(std::size_t max_length);
  std::vector<TokenId> bias_word_list();

  std::vector<lm::GenerationRecord> run_generation(const std::string& stream, std::size_t seed_index,
                                                   const std::string& mode,
                                                   const std::optional<calib::CalibrationConfig>& calibration,
                                                   const std::filesystem::path* trace_path);
  std::vector<lm::GenerationRecord> load_generations(const std::filesystem::path& path) const;
  std::vector<lm::GenerationRecord> ppl_reference_records();
  const lm::NGramLM& ppl_model();
  void attach_ppl(metrics::BiasReport& report, const std::vector<lm::GenerationRecord>& records);

  ExperimentConfig config_;
  RunLayout layout_;
  RunManifest manifest_;
  std::optional<corpus::AttributeRegistry> registry_;
  std::optional<corpus::Vocab> vocab_;
  std::optional<lm::TransformerLM> lm_;
  std::optional<judge::BiasClassifier> judge_;
  std::optional<judge::DebiasHead> head_;
  std::optional<calib::BiasWordIds> bias_words_;
  std::optional<lm::NGramLM> ppl_model_;
};

}  // namespace debias::pipeline
