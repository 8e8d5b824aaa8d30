#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "debias/pipeline/config.hpp"
#include "debias/pipeline/pipeline.hpp"

namespace {

using debias::pipeline::ExperimentConfig;

struct Flags {
  std::string config;
  std::string mode = "vanilla";
  std::optional<double> lambda;
  std::optional<double> sigma;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;
};

std::string one_line(std::string text) {
  for (std::size_t pos = text.find('\n'); pos != std::string::npos; pos = text.find('\n', pos)) {
    text.replace(pos, 1, "; ");
  }
  return text;
}

// Flags override the file; DEBIAS_OUT_DIR is used when neither --out nor
// the file names an output directory.
ExperimentConfig resolve_config(const Flags& flags, bool validate) {
  const std::filesystem::path path(flags.config);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  std::vector<std::string> errors;
  auto config = debias::pipeline::parse_config(doc, path.parent_path(), errors);
  if (!flags.out.empty()) {
    config.output_dir = std::filesystem::absolute(flags.out);
  } else if (const char* env = std::getenv("DEBIAS_OUT_DIR"); env && *env && !doc.contains("output_dir")) {
    config.output_dir = std::filesystem::absolute(env);
  }
  if (flags.seed) config.seed = *flags.seed;
  if (flags.jobs) config.jobs = *flags.jobs;
  if (validate) debias::pipeline::append_validation_errors(config, errors);
  if (!errors.empty()) throw debias::pipeline::ConfigError(errors);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("debias"));
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

  CLI::App app{"Political debiasing of language model generation by reinforced calibration"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Help for every command");
  Flags flags;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", flags.seed, "Global seed override");
    cmd->add_option("--out", flags.out, "Run directory override");
    cmd->add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
    return cmd;
  };

  const std::vector<std::pair<std::string, std::string>> plain{
      {"synth-corpus", "Generate the planted-bias corpus, splits and vocabulary"},
      {"train-lm", "Train the transformer language model"},
      {"train-judge", "Train the judge classifier"},
      {"train-debias-head", "Train the debias head on LM states"},
      {"extract-bias-words", "Extract the liberal and conservative word lists"},
      {"evaluate-bias", "Score generation logs and write the bias report"},
      {"evaluate-tradeoff", "Sweep lambda for cls and report bias against perplexity"},
      {"baseline-naive", "Apply the word-swap baseline to vanilla generations"},
      {"report", "Write summary.json and report.md"},
      {"run", "Run every stage, resuming after the last completed one"},
  };
  for (const auto& [name, help] : plain) common(app.add_subcommand(name, help));

  auto* generate = common(app.add_subcommand("generate", "Generate continuations for the evaluation prompts"));
  generate->add_option("--mode", flags.mode, "vanilla, emb, cls or naive")
      ->check(CLI::IsMember({"vanilla", "emb", "cls", "naive"}));
  generate->add_option("--lambda", flags.lambda, "Initial calibration strength")->check(CLI::NonNegativeNumber);
  generate->add_option("--sigma", flags.sigma, "KL threshold")->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate-config", "Check a config and list every problem");
  validate->add_option("--config", flags.config, "Experiment config (JSON)")->required();
  validate->add_option("--out", flags.out, "Run directory override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "debias: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "validate-config") {
      try {
        resolve_config(flags, true);
      } catch (const debias::pipeline::ConfigError& e) {
        for (const auto& err : e.errors()) std::cout << err << "\n";
        std::cerr << "debias: " << e.errors().size() << " config error(s) in " << flags.config << "\n";
        return 1;
      }
      std::cout << "config OK\n";
      return 0;
    }

    debias::pipeline::Pipeline pipeline(resolve_config(flags, true));
    if (command == "synth-corpus") pipeline.synth_corpus();
    else if (command == "train-lm") pipeline.train_lm();
    else if (command == "train-judge") pipeline.train_judge();
    else if (command == "train-debias-head") pipeline.train_debias_head();
    else if (command == "extract-bias-words") pipeline.extract_bias_words();
    else if (command == "generate") pipeline.generate({flags.mode, flags.lambda, flags.sigma});
    else if (command == "baseline-naive") pipeline.baseline_naive();
    else if (command == "evaluate-bias") pipeline.evaluate_bias();
    else if (command == "evaluate-tradeoff") pipeline.evaluate_tradeoff();
    else if (command == "report") pipeline.report();
    else if (command == "run") pipeline.run();
  } catch (const std::exception& e) {
    std::cerr << "debias: " << command << ": " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
