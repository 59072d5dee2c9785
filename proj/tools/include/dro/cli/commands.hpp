#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dro/classifiers.hpp"
#include "dro/cli/run_config.hpp"
#include "dro/data.hpp"
#include "dro/router.hpp"

namespace dro::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

// {"run_config": ..., "tool_version": ...}; merged into every JSON artifact.
nlohmann::json provenance(const RunConfig& config);

void write_text(const fs::path& path, const std::string& text);
void write_json(const fs::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const fs::path& path);

struct ExtractOptions {
  fs::path manifest_dir;
  std::optional<fs::path> vocab_in;  // lock columns to an existing vocabulary
  std::optional<fs::path> vocab_out;
  fs::path dataset_out;
  std::optional<fs::path> labels;    // CSV with columns id,label
};

struct ExtractSummary {
  std::size_t manifests = 0;
  std::size_t skipped = 0;
  std::size_t oov_total = 0;
  data::IntentVocabulary vocabulary;
  std::map<std::string, std::size_t> action_counts;   // manifests declaring each action
  std::map<std::string, std::size_t> category_counts;
};

// Sample id is the file name without its extension.
ExtractSummary cmd_extract(const RunConfig& config, const ExtractOptions& options, std::ostream& out);
data::IntentVocabulary cmd_vocab(const RunConfig& config, const fs::path& manifest_dir, const fs::path& vocab_out);

struct TrainOutputs {
  router::TrainedRouter router;
  clf::Classifier classifier;
  std::optional<clf::Classifier> vault_assessor;
};

// Writes router.json, classifier.json, trace.csv, train_report.json and,
// when requested, vault_assessor.json into out_dir.
TrainOutputs cmd_train(const RunConfig& config, const fs::path& train_csv, const fs::path& validation_csv,
                       const fs::path& out_dir, bool with_vault_assessor = false);

// conf_id is "<conf_index>-<first 8 hex digits of the router config hash>".
std::string conf_id(std::size_t conf_index, const router::RouterConfig& config);

// Writes report.json, routing.csv and appends C0 samples to vault.jsonl.
router::RoutingReport cmd_eval(const fs::path& router_ckpt, const fs::path& classifier_ckpt, const fs::path& test_csv,
                               const std::optional<fs::path>& vault_assessor_ckpt, const fs::path& out_dir,
                               std::size_t conf_index = 1);

struct SweepPoint {
  std::size_t index = 0;  // 1-based
  std::string series;     // "lambda", "mu" or "grid"
  double lambda = 0.0;
  double mu = 0.0;
  std::string conf_id;
  std::optional<losses::LossBreakdown> final_loss;
  std::optional<router::RoutingReport> report;
  std::optional<std::string> error;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  double chosen_lambda = 0.0;
  std::string chosen_reason;
};

// Smallest lambda whose H(Y|X) >= 1e-3 and whose R_SAT is within 30% of the
// series minimum. Falls back to the smallest lambda meeting the R_SAT bound.
std::optional<double> pick_best_lambda(const std::vector<SweepPoint>& lambda_series);

SweepResult cmd_sweep(const RunConfig& config, const fs::path& train_csv, const fs::path& validation_csv,
                      const fs::path& test_csv, const fs::path& out_dir, bool with_vault_assessor = false);

// Writes full.csv, train.csv, validation.csv, test.csv, planted.csv and synth.json.
data::SyntheticData cmd_synth(const RunConfig& config, const fs::path& out_dir);

clf::BenchmarkResult cmd_bench(const RunConfig& config, const fs::path& train_csv, const fs::path& test_csv,
                               const fs::path& out_dir, std::ostream& out);

// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace dro::cli
