#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dro/cli/commands.hpp"
#include "dro/error.hpp"
#include "dro/version.hpp"

namespace dro::cli {
namespace {

using nlohmann::json;

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string log_level = "info";
};

json read_overrides(const Globals& g) {
  if (!g.config) return json::object();
  try {
    return read_json(*g.config);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

void set_path(json& doc, std::initializer_list<const char*> path, const json& value) {
  json* node = &doc;
  for (const char* key : path) node = &(*node)[key];
  *node = value;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep routing: unsupervised triage of samples between a classifier and a vault"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config, "Run config JSON; missing keys take their defaults");
  app.add_option("--seed", g.seed, "Seed for the router, classifier and synthetic generator");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}))
      ->capture_default_str();

  ExtractOptions extract;
  std::string extract_out;
  auto* c_extract = app.add_subcommand("extract", "Parse decoded manifests into a binary intent dataset");
  c_extract->add_option("manifest_dir", extract.manifest_dir)->required();
  c_extract->add_option("--vocab", extract.vocab_in, "Lock columns to an existing vocabulary")->check(CLI::ExistingFile);
  c_extract->add_option("--vocab-out", extract.vocab_out, "Write the vocabulary here");
  c_extract->add_option("--labels", extract.labels, "CSV with columns id,label")->check(CLI::ExistingFile);
  c_extract->add_option("--dataset", extract_out, "Dataset CSV (default <out>/dataset.csv)");
  bool fail_fast = false;
  c_extract->add_flag("--fail-fast", fail_fast, "Abort on the first malformed manifest");

  std::string vocab_dir;
  auto* c_vocab = app.add_subcommand("vocab", "Build an intent vocabulary from manifests");
  c_vocab->add_option("manifest_dir", vocab_dir)->required();

  std::string train_csv, val_csv, test_csv;
  std::optional<double> lambda, mu;
  std::optional<std::size_t> epochs;
  bool with_assessor = false;
  auto* c_train = app.add_subcommand("train", "Train the router and downstream classifier, then assign routes");
  c_train->add_option("train_csv", train_csv)->required()->check(CLI::ExistingFile);
  c_train->add_option("validation_csv", val_csv)->required()->check(CLI::ExistingFile);
  c_train->add_option("--lambda", lambda);
  c_train->add_option("--mu", mu);
  c_train->add_option("--epochs", epochs);
  c_train->add_flag("--with-vault-assessor", with_assessor, "Also train a classifier scoring the vault route");

  std::string router_ckpt, clf_ckpt;
  std::optional<std::string> assessor_ckpt;
  std::size_t conf_index = 1;
  auto* c_eval = app.add_subcommand("eval", "Route a labelled test set and report per-route metrics");
  c_eval->add_option("router_ckpt", router_ckpt)->required()->check(CLI::ExistingFile);
  c_eval->add_option("classifier_ckpt", clf_ckpt)->required()->check(CLI::ExistingFile);
  c_eval->add_option("test_csv", test_csv)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--vault-assessor", assessor_ckpt)->check(CLI::ExistingFile);
  c_eval->add_option("--conf-index", conf_index)->capture_default_str();

  bool full_grid = false;
  auto* c_sweep = app.add_subcommand("sweep", "Train and evaluate every lambda/mu grid point");
  c_sweep->add_option("train_csv", train_csv)->required()->check(CLI::ExistingFile);
  c_sweep->add_option("validation_csv", val_csv)->required()->check(CLI::ExistingFile);
  c_sweep->add_option("test_csv", test_csv)->required()->check(CLI::ExistingFile);
  c_sweep->add_flag("--full-grid", full_grid, "Cross product instead of the two sequential series");
  c_sweep->add_flag("--with-vault-assessor", with_assessor);

  auto* c_synth = app.add_subcommand("synth", "Generate the planted synthetic dataset and its splits");

  auto* c_bench = app.add_subcommand("bench", "Train and score the six baseline classifiers");
  c_bench->add_option("train_csv", train_csv)->required()->check(CLI::ExistingFile);
  c_bench->add_option("test_csv", test_csv)->required()->check(CLI::ExistingFile);

  auto* c_config = app.add_subcommand("config", "Print the resolved run config");
  auto* c_schema = app.add_subcommand("schema", "Print the run config JSON schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  static const bool stderr_logger = [] {
    spdlog::set_default_logger(spdlog::stderr_color_mt("dro"));
    return true;
  }();
  (void)stderr_logger;
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  spdlog::set_pattern("[%l] %v");

  try {
    json overrides = read_overrides(g);
    if (g.seed) {
      set_path(overrides, {"router", "seed"}, *g.seed);
      set_path(overrides, {"classifier", "seed"}, *g.seed);
      set_path(overrides, {"data", "synthetic", "seed"}, *g.seed);
    }
    if (lambda) set_path(overrides, {"router", "lambda"}, *lambda);
    if (mu) set_path(overrides, {"router", "mu"}, *mu);
    if (epochs) set_path(overrides, {"router", "epochs"}, *epochs);
    if (fail_fast) set_path(overrides, {"data", "fail_fast"}, true);
    if (full_grid) set_path(overrides, {"sweep", "full_grid"}, true);
    const RunConfig config = resolve_config(overrides);
    const fs::path out_dir = g.out;

    if (*c_extract) {
      extract.dataset_out = extract_out.empty() ? out_dir / "dataset.csv" : fs::path(extract_out);
      cmd_extract(config, extract, out);
    } else if (*c_vocab) {
      const auto vocab = cmd_vocab(config, vocab_dir, out_dir / "vocab.txt");
      out << "vocabulary " << vocab.size() << " entries, fingerprint " << vocab.fingerprint() << '\n';
    } else if (*c_train) {
      const auto result = cmd_train(config, train_csv, val_csv, out_dir, with_assessor);
      const auto& last = result.router.trace().back();
      out << "final epoch: l_total=" << last.l_total << " r_sat=" << last.r_sat << " h_y=" << last.h_y
          << " h_y_given_x=" << last.h_y_given_x << '\n';
    } else if (*c_eval) {
      std::optional<fs::path> assessor;
      if (assessor_ckpt) assessor = *assessor_ckpt;
      const auto report = cmd_eval(router_ckpt, clf_ckpt, test_csv, assessor, out_dir, conf_index);
      out << router::to_json(report).dump(2) << '\n';
    } else if (*c_sweep) {
      const auto result = cmd_sweep(config, train_csv, val_csv, test_csv, out_dir, with_assessor);
      out << "ran " << result.points.size() << " configurations; chosen lambda " << result.chosen_lambda << " ("
          << result.chosen_reason << ")\n";
    } else if (*c_synth) {
      const auto syn = cmd_synth(config, out_dir);
      out << "wrote " << syn.dataset.size() << " samples to " << out_dir.string() << '\n';
    } else if (*c_bench) {
      cmd_bench(config, train_csv, test_csv, out_dir, out);
    } else if (*c_config) {
      out << to_json(config).dump(2) << '\n';
    } else if (*c_schema) {
      out << run_config_schema().dump(2) << '\n';
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const DomainError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

} // namespace dro::cli
