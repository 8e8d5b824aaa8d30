#include "debias/pipeline/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "debias/corpus/synthetic.hpp"
#include "debias/lm/train.hpp"
#include "debias/metrics/naive.hpp"
#include "debias/metrics/report.hpp"
#include "debias/util/parallel.hpp"
#include "debias/util/seed.hpp"

namespace debias::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 9> kStageNames{
    "synth-corpus",       "train-lm", "train-judge",       "train-debias-head", "extract-bias-words",
    "generate",           "evaluate-bias", "evaluate-tradeoff", "report"};

constexpr std::array<std::string_view, 4> kModes{"vanilla", "emb", "cls", "naive"};
constexpr const char* kSeedDerivation =
    "derive_seed(seed, stream, seed_index, attribute, option, keyword, template_id, sample)";

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void require_file(const fs::path& path, std::string_view producer) {
  if (!fs::exists(path)) {
    throw std::runtime_error("missing " + path.string() + " (run " + std::string(producer) + " first)");
  }
}

std::vector<std::string> continuation_texts(const std::vector<lm::GenerationRecord>& records,
                                            const corpus::Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(vocab.decode(r.token_ids));
  return out;
}

const corpus::PromptTemplate& find_template(const corpus::Attribute& attribute, int id) {
  for (const auto& t : attribute.templates) {
    if (t.id == id) return t;
  }
  throw std::invalid_argument("attribute " + attribute.name + " has no template " + std::to_string(id));
}

std::string tag_name(corpus::PromptTag tag) {
  switch (tag) {
    case corpus::PromptTag::Indirect:
      return "none";
    case corpus::PromptTag::DirectL:
      return "L";
    case corpus::PromptTag::DirectC:
      return "C";
  }
  return "none";
}

bool is_mode(std::string_view mode) { return std::find(kModes.begin(), kModes.end(), mode) != kModes.end(); }

}  // namespace

std::string_view to_string(Stage stage) noexcept { return kStageNames[static_cast<std::size_t>(stage)]; }

Stage parse_stage(std::string_view name) {
  for (std::size_t i = 0; i < kStageNames.size(); ++i) {
    if (kStageNames[i] == name) return kStages[i];
  }
  throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

std::string content_hash(std::string_view bytes) { return fmt::format("{:016x}", fnv1a64(bytes)); }

fs::path RunLayout::generations(std::string_view mode, std::size_t seed_index) const {
  return root / "generations" / fmt::format("{}_s{}.jsonl", mode, seed_index);
}

fs::path RunLayout::sweep_generations(double lambda, std::size_t seed_index) const {
  return root / "generations" / "sweep" / fmt::format("cls_lambda{:.2f}_s{}.jsonl", lambda, seed_index);
}

fs::path RunLayout::trace(std::string_view mode, std::size_t seed_index) const {
  return root / "traces" / fmt::format("{}_s{}.jsonl", mode, seed_index);
}

const StageRecord* RunManifest::find(std::string_view name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

void to_json(json& j, const StageRecord& r) {
  j = json{{"name", r.name},
           {"artifacts", r.artifacts},
           {"completed_at", r.completed_at},
           {"elapsed_seconds", r.elapsed_seconds},
           {"details", r.details}};
}

void from_json(const json& j, StageRecord& r) {
  j.at("name").get_to(r.name);
  j.at("artifacts").get_to(r.artifacts);
  j.at("completed_at").get_to(r.completed_at);
  r.elapsed_seconds = j.value("elapsed_seconds", 0.0);
  r.details = j.value("details", json::object());
}

void to_json(json& j, const RunManifest& m) {
  j = json{{"run_id", m.run_id},
           {"config_hash", m.config_hash},
           {"tool_version", m.tool_version},
           {"created_at", m.created_at},
           {"stages", m.stages},
           {"last_completed_stage", m.last_completed ? json(*m.last_completed) : json(nullptr)},
           {"failed_stage", m.failed_stage ? json(*m.failed_stage) : json(nullptr)},
           {"failure", m.failure}};
}

void from_json(const json& j, RunManifest& m) {
  j.at("run_id").get_to(m.run_id);
  j.at("config_hash").get_to(m.config_hash);
  j.at("tool_version").get_to(m.tool_version);
  j.at("created_at").get_to(m.created_at);
  j.at("stages").get_to(m.stages);
  m.last_completed.reset();
  m.failed_stage.reset();
  if (j.contains("last_completed_stage") && !j.at("last_completed_stage").is_null()) {
    m.last_completed = j.at("last_completed_stage").get<std::string>();
  }
  if (j.contains("failed_stage") && !j.at("failed_stage").is_null()) {
    m.failed_stage = j.at("failed_stage").get<std::string>();
  }
  m.failure = j.value("failure", "");
}

RunManifest read_manifest(const fs::path& path) {
  try {
    return json::parse(read_file(path)).get<RunManifest>();
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
  }
}

std::vector<PromptUnit> evaluation_protocol(const corpus::AttributeRegistry& registry,
                                            const std::vector<std::string>& attributes,
                                            std::size_t samples_per_prompt) {
  std::vector<PromptUnit> units;
  for (const auto& name : attributes) {
    const auto& attribute = registry.attribute(name);
    for (const auto& option : attribute.options) {
      for (const auto& keyword : option.keywords) {
        for (const auto& t : attribute.templates) {
          const auto prompt = corpus::fill_prompt(t.text, keyword, registry.placeholder);
          for (std::size_t s = 0; s < samples_per_prompt; ++s) {
            units.push_back({attribute.name, option.name, keyword, t.id, tag_name(t.tag), prompt, s});
          }
        }
      }
    }
  }
  return units;
}

std::uint64_t generation_seed(std::uint64_t global, std::string_view stream, std::size_t seed_index,
                              const PromptUnit& unit) {
  return derive_seed(global, stream, static_cast<std::uint64_t>(seed_index), std::string_view(unit.attribute),
                     std::string_view(unit.option), std::string_view(unit.keyword),
                     static_cast<std::uint64_t>(unit.template_id), static_cast<std::uint64_t>(unit.sample));
}

std::optional<double> score_continuation(const judge::BiasClassifier& judge, std::span<const TokenId> ids) {
  std::vector<TokenId> words;
  for (TokenId id : ids) {
    if (!corpus::Vocab::is_reserved(id)) words.push_back(id);
  }
  if (words.empty()) return std::nullopt;
  return judge.score(words);
}

metrics::BiasReport average_reports(const std::vector<metrics::BiasReport>& per_seed) {
  if (per_seed.empty()) throw std::invalid_argument("average_reports: no reports");
  metrics::BiasReport out = per_seed.front();
  const double n = static_cast<double>(per_seed.size());
  for (std::size_t k = 1; k < per_seed.size(); ++k) {
    const auto& r = per_seed[k];
    if (r.attribute != out.attribute || r.mode != out.mode || r.options.size() != out.options.size()) {
      throw std::invalid_argument("average_reports: reports describe different runs");
    }
    for (std::size_t i = 0; i < r.options.size(); ++i) {
      out.options[i].indirect += r.options[i].indirect;
      out.options[i].direct += r.options[i].direct;
      out.options[i].samples += r.options[i].samples;
    }
    out.overall_indirect += r.overall_indirect;
    out.overall_direct += r.overall_direct;
    out.samples += r.samples;
    out.unscored += r.unscored;
  }
  for (auto& o : out.options) {
    o.indirect /= n;
    o.direct /= n;
  }
  out.overall_indirect /= n;
  out.overall_direct /= n;
  return out;
}

Pipeline::Pipeline(ExperimentConfig config) : config_(std::move(config)), layout_{config_.output_dir} {
  fs::create_directories(layout_.root);
  // Where the run lives and how many threads it uses do not change results.
  json identity = to_json(config_);
  identity.erase("output_dir");
  identity.erase("jobs");
  const std::string text = identity.dump(2) + "\n";
  const std::string hash = content_hash(text);
  if (fs::exists(layout_.config())) {
    const std::string stored = read_file(layout_.config());
    if (stored != text) {
      throw std::runtime_error("run directory " + layout_.root.string() + " holds a different config (" +
                               content_hash(stored) + " vs " + hash + "); choose another output directory");
    }
  } else {
    metrics::write_text(layout_.config(), text);
  }
  if (fs::exists(layout_.manifest())) {
    manifest_ = read_manifest(layout_.manifest());
    if (manifest_.config_hash != hash) {
      throw std::runtime_error("manifest " + layout_.manifest().string() + " does not match config.json");
    }
  } else {
    manifest_.created_at = utc_now();
    manifest_.config_hash = hash;
    manifest_.run_id = fmt::format("{}-{}", manifest_.created_at, hash.substr(0, 8));
    save_manifest();
  }
}

bool Pipeline::completed(std::string_view stage) const {
  const auto* r = manifest_.find(stage);
  if (!r) return false;
  for (const auto& a : r->artifacts) {
    if (!fs::exists(layout_.root / a)) return false;
  }
  return true;
}

void Pipeline::save_manifest() const { metrics::write_text(layout_.manifest(), json(manifest_).dump(2) + "\n"); }

void Pipeline::record(const std::string& name, const std::vector<fs::path>& artifacts, json details,
                      double elapsed_seconds) {
  StageRecord r;
  r.name = name;
  for (const auto& a : artifacts) r.artifacts.push_back(fs::relative(a, layout_.root).generic_string());
  r.completed_at = utc_now();
  r.elapsed_seconds = elapsed_seconds;
  r.details = std::move(details);
  std::erase_if(manifest_.stages, [&](const StageRecord& s) { return s.name == name; });
  manifest_.stages.push_back(std::move(r));
  manifest_.last_completed = name;
  manifest_.failed_stage.reset();
  manifest_.failure.clear();
  save_manifest();
}

// `body` returns the stage's artifacts and details.
template <typename Fn>
void Pipeline::stage(const std::string& name, Fn&& body) {
  spdlog::info("stage {} started", name);
  const auto start = std::chrono::steady_clock::now();
  try {
    auto [artifacts, details] = body();
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    record(name, artifacts, std::move(details), elapsed);
    spdlog::info("stage {} done in {:.1f}s", name, elapsed);
  } catch (const std::exception& e) {
    manifest_.failed_stage = name;
    manifest_.failure = e.what();
    save_manifest();
    throw;
  }
}

const corpus::AttributeRegistry& Pipeline::registry() {
  if (!registry_) registry_ = corpus::load_registry(config_.registry_path);
  return *registry_;
}

const corpus::Vocab& Pipeline::vocab() {
  if (!vocab_) {
    require_file(layout_.vocab(), "synth-corpus");
    std::ifstream in(layout_.vocab());
    std::vector<std::string> words;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) words.push_back(line);
    }
    vocab_.emplace(std::move(words));
  }
  return *vocab_;
}

corpus::Splits<corpus::Document> Pipeline::encoded_splits(std::size_t max_length) {
  corpus::Splits<corpus::Document> out;
  for (const char* name : {"train", "valid", "test"}) {
    require_file(layout_.split(name), "synth-corpus");
  }
  out.train = corpus::encode(corpus::read_tsv(layout_.split("train")), vocab(), max_length);
  out.valid = corpus::encode(corpus::read_tsv(layout_.split("valid")), vocab(), max_length);
  out.test = corpus::encode(corpus::read_tsv(layout_.split("test")), vocab(), max_length);
  return out;
}

const lm::TransformerLM& Pipeline::lm() {
  if (!lm_) {
    require_file(layout_.lm(), "train-lm");
    lm_.emplace(lm::TransformerLM::load(layout_.lm()));
  }
  return *lm_;
}

const judge::BiasClassifier& Pipeline::judge() {
  if (!judge_) {
    require_file(layout_.judge(), "train-judge");
    judge_.emplace(judge::BiasClassifier::load(layout_.judge()));
  }
  return *judge_;
}

const judge::DebiasHead& Pipeline::head() {
  if (!head_) {
    require_file(layout_.head(), "train-debias-head");
    head_.emplace(judge::DebiasHead::load(layout_.head()));
  }
  return *head_;
}

const calib::BiasWordIds& Pipeline::bias_word_ids() {
  if (!bias_words_) {
    require_file(layout_.bias_words(), "extract-bias-words");
    const auto doc = json::parse(read_file(layout_.bias_words()));
    corpus::BiasLexicon lexicon;
    doc.at("liberal").get_to(lexicon.liberal);
    doc.at("conservative").get_to(lexicon.conservative);
    bias_words_ = calib::resolve_bias_words(lexicon, vocab());
  }
  return *bias_words_;
}

std::vector<TokenId> Pipeline::bias_word_list() {
  const auto& w = bias_word_ids();
  std::vector<TokenId> out = w.liberal;
  out.insert(out.end(), w.conservative.begin(), w.conservative.end());
  return out;
}

void Pipeline::synth_corpus() {
  stage("synth-corpus", [&] {
    auto cc = config_.corpus;
    cc.seed = derive_seed(config_.seed, "synth-corpus");
    const std::uint64_t split_seed = derive_seed(config_.seed, "synth-corpus", "split");
    const auto docs = corpus::generate_synthetic_corpus(cc, registry());
    corpus::write_tsv(layout_.corpus(), docs);
    const auto splits = corpus::split_dataset(docs, config_.split, split_seed);
    corpus::write_tsv(layout_.split("train"), splits.train);
    corpus::write_tsv(layout_.split("valid"), splits.valid);
    corpus::write_tsv(layout_.split("test"), splits.test);

    std::vector<std::string> texts;
    for (const auto& d : docs) texts.push_back(d.text);
    const auto built = corpus::build_vocab(texts, registry().prompt_words());
    std::string listing;
    for (TokenId id = corpus::kReservedCount; id < built.size(); ++id) listing += built.word(id) + "\n";
    metrics::write_text(layout_.vocab(), listing);
    vocab_.reset();

    json details{{"documents", docs.size()},
                 {"train", splits.train.size()},
                 {"valid", splits.valid.size()},
                 {"test", splits.test.size()},
                 {"vocab_size", built.size()},
                 {"corpus_seed", cc.seed},
                 {"split_seed", split_seed}};
    return std::pair{std::vector<fs::path>{layout_.corpus(), layout_.split("train"), layout_.split("valid"),
                                           layout_.split("test"), layout_.vocab()},
                     details};
  });
}

void Pipeline::train_lm() {
  stage("train-lm", [&] {
    auto mc = config_.lm;
    mc.vocab_size = vocab().size();
    mc.seed = derive_seed(config_.seed, "train-lm", "init");
    auto tc = config_.lm_training;
    tc.seed = derive_seed(config_.seed, "train-lm", "batches");
    tc.checkpoint_path.reset();
    const auto data = encoded_splits(mc.context_length - 1);
    auto result = lm::train_lm(data.train, data.valid, mc, tc);
    if (result.diverged) spdlog::warn("train-lm stopped early on a non-finite loss; keeping the last good weights");
    result.model.save(layout_.lm());
    json history = json::array();
    for (const auto& e : result.history) {
      history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid_loss", e.valid_loss}});
    }
    json details{{"parameters", result.model.parameter_count()},
                 {"initial_valid_loss", result.initial_valid_loss},
                 {"best_valid_loss", result.best_valid_loss},
                 {"test_loss", lm::mean_token_nll(result.model, data.test)},
                 {"diverged", result.diverged},
                 {"history", history},
                 {"init_seed", mc.seed},
                 {"batch_seed", tc.seed}};
    lm_.emplace(std::move(result.model));
    spdlog::info("lm valid loss {:.4f} -> {:.4f}", result.initial_valid_loss, result.best_valid_loss);
    return std::pair{std::vector<fs::path>{layout_.lm()}, details};
  });
}

void Pipeline::train_judge() {
  stage("train-judge", [&] {
    auto jc = config_.judge;
    jc.vocab_size = vocab().size();
    jc.seed = derive_seed(config_.seed, "train-judge");
    const auto data = encoded_splits(0);
    auto result = judge::train_judge(data.train, data.valid, data.test, jc);
    if (result.report.test_macro_f1 < 0.9) {
      spdlog::warn("judge test macro-F1 {:.3f} is below 0.90", result.report.test_macro_f1);
    }
    result.classifier.save(layout_.judge());
    judge_.emplace(std::move(result.classifier));
    json details{{"train_loss", result.report.train_loss},
                 {"valid_macro_f1", result.report.valid_macro_f1},
                 {"test_macro_f1", result.report.test_macro_f1},
                 {"test_accuracy", result.report.test_accuracy},
                 {"seed", jc.seed}};
    spdlog::info("judge test macro-F1 {:.4f}", result.report.test_macro_f1);
    return std::pair{std::vector<fs::path>{layout_.judge()}, details};
  });
}

void Pipeline::train_debias_head() {
  stage("train-debias-head", [&] {
    auto hc = config_.head;
    hc.seed = derive_seed(config_.seed, "train-debias-head");
    const auto& model = lm();
    const auto data = encoded_splits(model.config().context_length - 1);
    auto result = judge::train_debias_head(model, data.train, data.test, hc);
    result.head.save(layout_.head());
    head_.emplace(std::move(result.head));
    json details{{"train_accuracy", result.train_accuracy},
                 {"test_accuracy", result.test_accuracy},
                 {"test_prefix_accuracy", result.test_prefix_accuracy},
                 {"seed", hc.seed}};
    spdlog::info("debias head test accuracy {:.4f} (prefixes {:.4f})", result.test_accuracy,
                 result.test_prefix_accuracy);
    return std::pair{std::vector<fs::path>{layout_.head()}, details};
  });
}

void Pipeline::extract_bias_words() {
  stage("extract-bias-words", [&] {
    const auto data = encoded_splits(0);
    const auto lexicon = corpus::extract_bias_words(data.train, vocab(), config_.bias_words_per_class);
    if (lexicon.short_list) spdlog::warn("fewer than {} skewed words on one side", config_.bias_words_per_class);
    json doc{{"liberal", lexicon.liberal}, {"conservative", lexicon.conservative}, {"short_list", lexicon.short_list}};
    metrics::write_text(layout_.bias_words(), doc.dump(2) + "\n");
    bias_words_.reset();
    json details{{"liberal", lexicon.liberal.size()}, {"conservative", lexicon.conservative.size()}};
    return std::pair{std::vector<fs::path>{layout_.bias_words()}, details};
  });
}

std::vector<lm::GenerationRecord> Pipeline::run_generation(const std::string& stream, std::size_t seed_index,
                                                           const std::string& mode,
                                                           const std::optional<calib::CalibrationConfig>& calibration,
                                                           const fs::path* trace_path) {
  const auto units = evaluation_protocol(registry(), config_.generation.attributes,
                                         config_.generation.samples_per_prompt);
  // Load everything up front; workers only read.
  const auto& words = vocab();
  const auto& model = lm();
  const auto& scorer = judge();
  calib::ModeInputs inputs;
  if (calibration) {
    if (calibration->mode == calib::Mode::Emb) {
      inputs.words = &bias_word_ids();
    } else {
      inputs.head = &head();
    }
  }
  const auto& g = config_.generation;
  std::vector<lm::GenerationRecord> records(units.size());
  std::vector<std::vector<calib::TraceEntry>> traces(trace_path ? units.size() : 0);
  parallel_for(units.size(), config_.jobs, [&](std::size_t i) {
    const auto& u = units[i];
    auto& r = records[i];
    r.attribute = u.attribute;
    r.option = u.option;
    r.keyword = u.keyword;
    r.template_id = u.template_id;
    r.ideology_tag = u.ideology_tag;
    r.mode = mode;
    r.rng_seed = generation_seed(config_.seed, stream, seed_index, u);
    const auto prompt = words.encode(u.prompt);
    if (calibration) {
      r.lambda = calibration->lambda0;
      auto out = calib::generate_debiased(model, prompt, g.max_new_tokens, g.decode, *calibration, inputs, r.rng_seed);
      r.token_ids = std::move(out.token_ids);
      if (trace_path) traces[i] = std::move(out.trace);
    } else {
      r.token_ids = lm::generate_vanilla(model, prompt, g.max_new_tokens, g.decode, r.rng_seed);
    }
    auto full = prompt;
    full.insert(full.end(), r.token_ids.begin(), r.token_ids.end());
    r.text = words.decode(full);
    r.judge_score = score_continuation(scorer, r.token_ids);
  });
  if (trace_path) {
    std::string out;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      for (const auto& e : traces[i]) {
        json j = e;
        j["sample"] = i;
        out += j.dump() + "\n";
      }
    }
    metrics::write_text(*trace_path, out);
  }
  return records;
}

std::vector<lm::GenerationRecord> Pipeline::load_generations(const fs::path& path) const {
  if (!fs::exists(path)) throw std::runtime_error("missing generation log " + path.string() + " (run generate first)");
  return lm::read_jsonl(path);
}

void Pipeline::generate(const GenerateOptions& options) {
  if (!is_mode(options.mode)) throw std::invalid_argument("unknown mode '" + options.mode + "'");
  if (options.mode == "naive") {
    baseline_naive();
    return;
  }
  const bool vanilla = options.mode == "vanilla";
  if (vanilla && (options.lambda || options.sigma)) {
    spdlog::warn("--lambda and --sigma are ignored for vanilla generation");
  }
  std::optional<calib::CalibrationConfig> calibration;
  if (!vanilla) {
    calibration = config_.calibration_for(calib::parse_mode(options.mode), options.lambda, options.sigma);
    if (const auto errors = calib::validate(*calibration); !errors.empty()) throw ConfigError(errors);
  }
  stage("generate/" + options.mode, [&] {
    std::vector<fs::path> artifacts;
    for (std::size_t k = 0; k < config_.generation.seeds; ++k) {
      const auto trace = layout_.trace(options.mode, k);
      const auto records = run_generation("generate", k, options.mode, calibration, vanilla ? nullptr : &trace);
      const auto path = layout_.generations(options.mode, k);
      fs::create_directories(path.parent_path());
      lm::write_jsonl(path, records);
      artifacts.push_back(path);
      if (!vanilla) artifacts.push_back(trace);
      spdlog::info("generate {} seed {}: {} samples", options.mode, k, records.size());
    }
    json details{{"mode", options.mode}, {"seeds", config_.generation.seeds}, {"seed_derivation", kSeedDerivation}};
    if (calibration) details["calibration"] = *calibration;
    return std::pair{artifacts, details};
  });
}

void Pipeline::baseline_naive() {
  stage("generate/naive", [&] {
    const auto& words = vocab();
    const metrics::NaiveSwapper swapper(lm().token_embedding(), bias_word_list());
    const auto& scorer = judge();
    const auto& reg = registry();
    std::vector<fs::path> artifacts;
    for (std::size_t k = 0; k < config_.generation.seeds; ++k) {
      auto records = load_generations(layout_.generations("vanilla", k));
      for (auto& r : records) {
        const auto& t = find_template(reg.attribute(r.attribute), r.template_id);
        auto full = words.encode(corpus::fill_prompt(t.text, r.keyword, reg.placeholder));
        r.mode = "naive";
        r.token_ids = swapper.apply(r.token_ids);
        full.insert(full.end(), r.token_ids.begin(), r.token_ids.end());
        r.text = words.decode(full);
        r.judge_score = score_continuation(scorer, r.token_ids);
      }
      const auto path = layout_.generations("naive", k);
      lm::write_jsonl(path, records);
      artifacts.push_back(path);
    }
    json details{{"swapped_words", swapper.table().size()}, {"source", "vanilla"}};
    return std::pair{artifacts, details};
  });
}

std::vector<lm::GenerationRecord> Pipeline::ppl_reference_records() {
  const auto path = layout_.ppl_reference();
  if (fs::exists(path)) return lm::read_jsonl(path);
  auto records = run_generation("ppl-reference", 0, "vanilla", std::nullopt, nullptr);
  fs::create_directories(path.parent_path());
  lm::write_jsonl(path, records);
  return records;
}

const lm::NGramLM& Pipeline::ppl_model() {
  if (!ppl_model_) {
    const auto texts = continuation_texts(ppl_reference_records(), vocab());
    ppl_model_ = lm::train_ngram(texts, config_.ngram.order, config_.ngram.add_k);
  }
  return *ppl_model_;
}

void Pipeline::attach_ppl(metrics::BiasReport& report, const std::vector<lm::GenerationRecord>& records) {
  const auto& model = ppl_model();
  std::vector<lm::GenerationRecord> all;
  for (const auto& r : records) {
    if (r.attribute == report.attribute) all.push_back(r);
  }
  if (all.empty()) return;
  report.ppl = lm::perplexity(model, continuation_texts(all, vocab()));
  for (auto& o : report.options) {
    std::vector<lm::GenerationRecord> mine;
    for (const auto& r : all) {
      if (r.option == o.option) mine.push_back(r);
    }
    if (!mine.empty()) o.ppl = lm::perplexity(model, continuation_texts(mine, vocab()));
  }
}

void Pipeline::evaluate_bias() {
  stage("evaluate-bias", [&] {
    std::vector<std::string> modes;
    for (auto m : kModes) {
      const bool present = fs::exists(layout_.generations(m, 0));
      if (m == "vanilla" && !present) load_generations(layout_.generations(m, 0));
      if (present) {
        modes.emplace_back(m);
      } else {
        spdlog::warn("no {} generations; leaving the mode out of the bias report", m);
      }
    }
    std::vector<metrics::BiasReport> reports;
    json per_seed = json::object();
    std::map<std::string, std::vector<double>> histogram;
    for (const auto& name : config_.generation.attributes) {
      const auto& attribute = registry().attribute(name);
      for (const auto& mode : modes) {
        std::vector<metrics::BiasReport> seeds;
        std::vector<lm::GenerationRecord> all;
        for (std::size_t k = 0; k < config_.generation.seeds; ++k) {
          const auto records = load_generations(layout_.generations(mode, k));
          const double lambda = records.empty() ? 0.0 : records.front().lambda;
          seeds.push_back(metrics::evaluate_bias(attribute, records, mode, lambda));
          all.insert(all.end(), records.begin(), records.end());
        }
        auto avg = average_reports(seeds);
        attach_ppl(avg, all);
        per_seed[name][mode] = seeds;
        for (const auto& r : all) {
          if (r.attribute == name && r.judge_score) histogram[mode].push_back(*r.judge_score);
        }
        spdlog::info("{} {}: indirect {:.4f} direct {:.4f}", name, mode, avg.overall_indirect, avg.overall_direct);
        reports.push_back(std::move(avg));
      }
    }
    const json doc{{"reports", reports}, {"per_seed", per_seed}};
    metrics::write_text(layout_.report("bias.json"), doc.dump(2) + "\n");
    metrics::write_text(layout_.report("bias.tsv"), metrics::render_tsv(reports, "vanilla"));
    metrics::write_text(layout_.report("bias.md"), metrics::render_markdown(reports, "vanilla"));
    metrics::write_text(layout_.report("histogram.csv"), metrics::render_histogram_csv(histogram));
    json details{{"modes", modes}, {"seeds", config_.generation.seeds}};
    return std::pair{std::vector<fs::path>{layout_.report("bias.json"), layout_.report("bias.tsv"),
                                           layout_.report("bias.md"), layout_.report("histogram.csv"),
                                           layout_.ppl_reference()},
                     details};
  });
}

void Pipeline::evaluate_tradeoff() {
  stage("evaluate-tradeoff", [&] {
    const std::size_t seeds = config_.generation.tradeoff_seeds;
    std::vector<fs::path> artifacts;
    std::vector<metrics::BiasReport> reports;
    for (const auto& name : config_.generation.attributes) {
      const auto& attribute = registry().attribute(name);
      std::vector<metrics::BiasReport> base;
      std::vector<lm::GenerationRecord> base_all;
      for (std::size_t k = 0; k < seeds; ++k) {
        const auto records = load_generations(layout_.generations("vanilla", k));
        base.push_back(metrics::evaluate_bias(attribute, records, "vanilla", 0.0));
        base_all.insert(base_all.end(), records.begin(), records.end());
      }
      auto vanilla = average_reports(base);
      attach_ppl(vanilla, base_all);
      reports.push_back(std::move(vanilla));

      for (double lambda : config_.lambda_grid) {
        const auto calibration = config_.calibration_for(calib::Mode::Cls, lambda);
        std::vector<metrics::BiasReport> point;
        std::vector<lm::GenerationRecord> point_all;
        for (std::size_t k = 0; k < seeds; ++k) {
          const auto path = layout_.sweep_generations(lambda, k);
          std::vector<lm::GenerationRecord> records;
          if (fs::exists(path)) {
            records = lm::read_jsonl(path);
          } else {
            records = run_generation("generate", k, "cls", calibration, nullptr);
            fs::create_directories(path.parent_path());
            lm::write_jsonl(path, records);
          }
          if (std::find(artifacts.begin(), artifacts.end(), path) == artifacts.end()) artifacts.push_back(path);
          point.push_back(metrics::evaluate_bias(attribute, records, "cls", lambda));
          point_all.insert(point_all.end(), records.begin(), records.end());
        }
        auto avg = average_reports(point);
        attach_ppl(avg, point_all);
        spdlog::info("{} lambda {:.2f}: indirect {:.4f} ppl {:.3f}", name, lambda, avg.overall_indirect,
                     avg.ppl.value_or(0.0));
        reports.push_back(std::move(avg));
      }
    }
    const json doc{{"reports", reports}};
    metrics::write_text(layout_.report("tradeoff.json"), doc.dump(2) + "\n");
    metrics::write_text(layout_.report("tradeoff.tsv"), metrics::render_tsv(reports, "vanilla"));
    metrics::write_text(layout_.report("tradeoff.md"), metrics::render_tradeoff_markdown(reports));
    artifacts.push_back(layout_.report("tradeoff.json"));
    artifacts.push_back(layout_.report("tradeoff.tsv"));
    artifacts.push_back(layout_.report("tradeoff.md"));
    json details{{"lambda_grid", config_.lambda_grid}, {"seeds", seeds}};
    return std::pair{artifacts, details};
  });
}

void Pipeline::report() {
  stage("report", [&] {
    require_file(layout_.report("bias.json"), "evaluate-bias");
    require_file(layout_.report("tradeoff.json"), "evaluate-tradeoff");
    const auto bias = json::parse(read_file(layout_.report("bias.json")))
                          .at("reports")
                          .get<std::vector<metrics::BiasReport>>();
    const auto sweep = json::parse(read_file(layout_.report("tradeoff.json")))
                           .at("reports")
                           .get<std::vector<metrics::BiasReport>>();

    json summary;
    summary["config_hash"] = manifest_.config_hash;
    for (const auto& r : bias) {
      const metrics::BiasReport* base = nullptr;
      for (const auto& b : bias) {
        if (b.attribute == r.attribute && b.mode == "vanilla") base = &b;
      }
      json entry{{"lambda", r.lambda},
                 {"overall_indirect", r.overall_indirect},
                 {"overall_direct", r.overall_direct},
                 {"ppl", r.ppl ? json(*r.ppl) : json(nullptr)},
                 {"samples", r.samples},
                 {"unscored", r.unscored}};
      if (base && base->overall_indirect > 0.0) {
        entry["indirect_reduction"] = 1.0 - r.overall_indirect / base->overall_indirect;
      }
      if (base && base->overall_direct > 0.0) {
        entry["direct_reduction"] = 1.0 - r.overall_direct / base->overall_direct;
      }
      summary["bias"][r.attribute][r.mode] = entry;
    }
    for (const auto& r : sweep) {
      summary["tradeoff"][r.attribute].push_back({{"mode", r.mode},
                                                  {"lambda", r.lambda},
                                                  {"overall_indirect", r.overall_indirect},
                                                  {"overall_direct", r.overall_direct},
                                                  {"ppl", r.ppl ? json(*r.ppl) : json(nullptr)}});
    }
    for (const char* s : {"train-lm", "train-judge", "train-debias-head"}) {
      if (const auto* rec = manifest_.find(s)) {
        json d = rec->details;
        d.erase("history");
        summary["models"][s] = d;
      }
    }
    metrics::write_text(layout_.report("summary.json"), summary.dump(2) + "\n");

    std::string md = "# Bias report\n\n" + metrics::render_markdown(bias, "vanilla") + "\n# Trade-off\n\n" +
                     metrics::render_tradeoff_markdown(sweep);
    metrics::write_text(layout_.report("report.md"), md);
    return std::pair{std::vector<fs::path>{layout_.report("summary.json"), layout_.report("report.md")}, json::object()};
  });
}

void Pipeline::run() {
  auto once = [&](const char* name, auto&& fn) {
    if (completed(name)) {
      spdlog::info("stage {} already completed; skipping", name);
      return;
    }
    fn();
  };
  once("synth-corpus", [&] { synth_corpus(); });
  once("train-lm", [&] { train_lm(); });
  once("train-judge", [&] { train_judge(); });
  once("train-debias-head", [&] { train_debias_head(); });
  once("extract-bias-words", [&] { extract_bias_words(); });
  once("generate", [&] {
    stage("generate", [&] {
      std::vector<fs::path> artifacts;
      for (auto m : kModes) {
        const std::string name = "generate/" + std::string(m);
        if (!completed(name)) generate({std::string(m), std::nullopt, std::nullopt});
        for (const auto& a : manifest_.find(name)->artifacts) artifacts.push_back(layout_.root / a);
      }
      return std::pair{artifacts, json{{"modes", kModes}}};
    });
  });
  once("evaluate-bias", [&] { evaluate_bias(); });
  once("evaluate-tradeoff", [&] { evaluate_tradeoff(); });
  once("report", [&] { report(); });
}

}  // namespace debias::pipeline
