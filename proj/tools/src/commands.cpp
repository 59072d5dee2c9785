#include "dro/cli/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dro/error.hpp"
#include "dro/rng.hpp"
#include "dro/version.hpp"

namespace dro::cli {
namespace {

using nlohmann::json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fmt_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string fmt_optional(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

json with_provenance(json doc, const json& run_config) {
  doc["run_config"] = run_config;
  doc["tool_version"] = version();
  return doc;
}

std::vector<fs::path> manifest_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("manifest directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no manifests found in " + dir.string());
  return files;
}

struct ParsedCorpus {
  std::vector<std::string> ids;
  std::vector<data::ManifestIntents> intents;
  std::size_t skipped = 0;
};

ParsedCorpus parse_corpus(const fs::path& dir, bool fail_fast) {
  ParsedCorpus corpus;
  for (const auto& file : manifest_files(dir)) {
    try {
      corpus.intents.push_back(data::parse_manifest(read_text(file)));
      corpus.ids.push_back(file.stem().string());
    } catch (const DataError& e) {
      if (fail_fast) throw DataError(file.string() + ": " + e.what());
      spdlog::warn("skipping {}: {}", file.string(), e.what());
      ++corpus.skipped;
    }
  }
  if (corpus.intents.empty()) throw DataError("no manifest in " + dir.string() + " could be parsed");
  return corpus;
}

std::vector<std::set<std::string>> selected(const ParsedCorpus& corpus, data::IntentClasses classes) {
  std::vector<std::set<std::string>> out;
  out.reserve(corpus.intents.size());
  for (const auto& m : corpus.intents) out.push_back(data::select(m, classes));
  return out;
}

std::string trace_csv(const std::vector<losses::LossBreakdown>& trace) {
  std::string out = "epoch,l_total,r_sat,h_y,h_y_given_x,lambda,mu\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& b = trace[i];
    out += std::to_string(i + 1) + ',' + fmt_double(b.l_total) + ',' + fmt_double(b.r_sat) + ',' + fmt_double(b.h_y) +
           ',' + fmt_double(b.h_y_given_x) + ',' + fmt_double(b.lambda) + ',' + fmt_double(b.mu) + '\n';
  }
  return out;
}

const char* kRoutingHeader =
    "conf_id,lambda,mu,ratio_c0,coverage,c0_acc,c0_fpr,c1_acc,c1_fpr,a_benchmark,a_deeprouter,lift_a\n";

std::string routing_row(const router::RoutingReport& r) {
  const auto acc = [](const std::optional<clf::MetricPair>& m) {
    return m ? std::optional<double>(m->accuracy) : std::nullopt;
  };
  const auto fpr = [](const std::optional<clf::MetricPair>& m) { return m ? m->fpr : std::nullopt; };
  return r.conf_id + ',' + fmt_double(r.lambda) + ',' + fmt_double(r.mu) + ',' + fmt_double(r.ratio_c0) + ',' +
         fmt_double(r.coverage) + ',' + fmt_optional(acc(r.c0)) + ',' + fmt_optional(fpr(r.c0)) + ',' +
         fmt_optional(acc(r.c1)) + ',' + fmt_optional(fpr(r.c1)) + ',' + fmt_double(r.a_benchmark) + ',' +
         fmt_optional(r.a_deeprouter) + ',' + fmt_optional(r.lift_a) + '\n';
}

// The dataset the downstream classifier sees under the router's feature mode.
data::Dataset downstream_dataset(const data::Dataset& ds, const nn::MlpParams& params, router::FeatureMode mode) {
  if (mode == router::FeatureMode::identity) return ds;
  data::Dataset out;
  out.ids = ds.ids;
  out.labels = ds.labels;
  out.columns = router::modified_columns(ds.columns, params.n_outputs(), mode);
  out.features = router::modify_features(ds.features, nn::forward(params, ds.features), mode);
  return out;
}

} // namespace

json provenance(const RunConfig& config) { return {{"run_config", to_json(config)}, {"tool_version", version()}}; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

ExtractSummary cmd_extract(const RunConfig& config, const ExtractOptions& options, std::ostream& out) {
  const ParsedCorpus corpus = parse_corpus(options.manifest_dir, config.fail_fast);
  const auto sets = selected(corpus, config.intent_classes);

  ExtractSummary summary;
  summary.manifests = corpus.intents.size();
  summary.skipped = corpus.skipped;
  summary.vocabulary = options.vocab_in ? data::load_vocabulary(*options.vocab_in) : data::build_vocabulary(sets);
  if (summary.vocabulary.empty()) throw DataError("vocabulary is empty: no intents were extracted");
  for (const auto& m : corpus.intents) {
    for (const auto& a : m.actions) ++summary.action_counts[a];
    for (const auto& c : m.categories) ++summary.category_counts[c];
  }

  data::Dataset ds;
  ds.ids = corpus.ids;
  ds.columns = summary.vocabulary.entries();
  ds.features = Matrix(sets.size(), summary.vocabulary.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    auto v = data::vectorize(sets[i], summary.vocabulary);
    summary.oov_total += v.oov_count;
    std::copy(v.features.begin(), v.features.end(), ds.features.row(i).begin());
  }
  if (options.labels) {
    const data::Dataset label_file = data::load_dataset(*options.labels);
    const auto& labels = label_file.require_labels();
    std::map<std::string, int> by_id;
    for (std::size_t i = 0; i < label_file.size(); ++i) by_id[label_file.ids[i]] = labels[i];
    ds.labels.emplace();
    for (const auto& id : ds.ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("no label for sample '" + id + "' in " + options.labels->string());
      ds.labels->push_back(it->second);
    }
  }
  if (options.dataset_out.has_parent_path()) fs::create_directories(options.dataset_out.parent_path());
  data::save_dataset(options.dataset_out, ds);
  if (options.vocab_out) data::save_vocabulary(*options.vocab_out, summary.vocabulary);

  out << "parsed " << summary.manifests << " manifests";
  if (summary.skipped > 0) out << " (" << summary.skipped << " skipped)";
  out << "; vocabulary " << summary.vocabulary.size() << " entries, fingerprint " << summary.vocabulary.fingerprint()
      << '\n';
  const auto print_top = [&](const char* name, const std::map<std::string, std::size_t>& counts) {
    std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    out << name << ": " << counts.size() << " distinct\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(10, sorted.size()); ++i)
      out << "  " << std::setw(6) << sorted[i].second << "  " << sorted[i].first << '\n';
  };
  print_top("actions", summary.action_counts);
  print_top("categories", summary.category_counts);
  if (options.vocab_in) out << "out-of-vocabulary intents: " << summary.oov_total << '\n';

  json report = {{"manifests", summary.manifests},
                 {"skipped", summary.skipped},
                 {"oov_total", summary.oov_total},
                 {"vocabulary_size", summary.vocabulary.size()},
                 {"vocabulary_fingerprint", summary.vocabulary.fingerprint()},
                 {"intent_classes", data::to_string(config.intent_classes)},
                 {"action_counts", summary.action_counts},
                 {"category_counts", summary.category_counts}};
  fs::path report_path = options.dataset_out;
  report_path.replace_extension(".extract.json");
  write_json(report_path, with_provenance(report, to_json(config)));
  return summary;
}

data::IntentVocabulary cmd_vocab(const RunConfig& config, const fs::path& manifest_dir, const fs::path& vocab_out) {
  const ParsedCorpus corpus = parse_corpus(manifest_dir, config.fail_fast);
  auto vocab = data::build_vocabulary(selected(corpus, config.intent_classes));
  data::save_vocabulary(vocab_out, vocab);
  return vocab;
}

TrainOutputs cmd_train(const RunConfig& config, const fs::path& train_csv, const fs::path& validation_csv,
                       const fs::path& out_dir, bool with_vault_assessor) {
  const data::Dataset train = data::load_dataset(train_csv);
  const data::Dataset validation = data::load_dataset(validation_csv, train.fingerprint());
  (void)train.require_labels();
  (void)validation.require_labels();
  const json run_config = to_json(config);

  spdlog::info("training router on {} samples x {} features (lambda={}, mu={})", train.size(), train.dims(),
               config.router.weights.lambda, config.router.weights.mu);
  auto trained = router::train_router(train.features, config.router);

  const auto mode = config.router.feature_mode;
  const data::Dataset train_down = downstream_dataset(train, trained.params, mode);
  spdlog::info("training downstream {}", config.classifier.algorithm_name());
  clf::Classifier classifier = clf::train_classifier(config.classifier, train_down);
  std::optional<clf::Classifier> assessor;
  if (with_vault_assessor) {
    clf::ClassifierConfig ac = config.classifier;
    ac.seed = config.classifier.seed + 1;
    assessor = clf::train_classifier(ac, train_down);
  }

  auto assigned = router::assign_routes(trained.params, validation, classifier, mode);
  router::TrainedRouter trained_router(trained.params, assigned.assignment, config.router, trained.epoch_trace,
                                       train.fingerprint());

  write_json(out_dir / "router.json", with_provenance(router::to_json(trained_router), run_config));
  write_json(out_dir / "classifier.json", with_provenance(clf::to_json(classifier), run_config));
  if (assessor) write_json(out_dir / "vault_assessor.json", with_provenance(clf::to_json(*assessor), run_config));
  write_text(out_dir / "trace.csv", trace_csv(trained.epoch_trace));

  json clusters = json::array();
  for (std::size_t k = 0; k < assigned.assignment.size(); ++k)
    clusters.push_back({{"cluster", k},
                        {"role", router::to_string(assigned.assignment[k])},
                        {"validation_size", assigned.cluster_sizes[k]},
                        {"train_size", trained.cluster_sizes[k]},
                        {"validation_accuracy", assigned.cluster_accuracy[k] ? json(*assigned.cluster_accuracy[k])
                                                                             : json(nullptr)}});
  std::vector<std::string> warnings = trained.warnings;
  warnings.insert(warnings.end(), assigned.warnings.begin(), assigned.warnings.end());
  json trace = json::array();
  for (const auto& b : trained.epoch_trace) trace.push_back(losses::to_json(b));
  json report = {{"train_samples", train.size()},
                 {"validation_samples", validation.size()},
                 {"schema_fingerprint", train.fingerprint()},
                 {"downstream", config.classifier.algorithm_name()},
                 {"optimizer_steps", trained.optimizer_steps},
                 {"selected_attempt", trained.selected_restart},
                 {"vat_fallbacks", trained.vat_fallbacks},
                 {"clusters", clusters},
                 {"training_loss_trace", trace},
                 {"warnings", warnings}};
  write_json(out_dir / "train_report.json", with_provenance(report, run_config));
  return {std::move(trained_router), std::move(classifier), std::move(assessor)};
}

std::string conf_id(std::size_t conf_index, const router::RouterConfig& config) {
  return std::to_string(conf_index) + "-" + config.hash().substr(0, 8);
}

router::RoutingReport cmd_eval(const fs::path& router_ckpt, const fs::path& classifier_ckpt, const fs::path& test_csv,
                               const std::optional<fs::path>& vault_assessor_ckpt, const fs::path& out_dir,
                               std::size_t conf_index) {
  const json router_doc = read_json(router_ckpt);
  const router::TrainedRouter trained = router::router_from_json(router_doc);
  const clf::Classifier classifier = clf::classifier_from_json(read_json(classifier_ckpt));
  std::optional<clf::Classifier> assessor;
  if (vault_assessor_ckpt) assessor = clf::classifier_from_json(read_json(*vault_assessor_ckpt));

  const data::Dataset test = data::load_dataset(test_csv, trained.vocabulary_fingerprint());
  const std::string expected = data::fingerprint(router::modified_columns(
      test.columns, trained.params().n_outputs(), trained.config().feature_mode));
  if (classifier.schema_fingerprint() != expected)
    throw DataError("classifier checkpoint schema " + classifier.schema_fingerprint() + " does not match " + expected);
  if (assessor && assessor->schema_fingerprint() != expected)
    throw DataError("vault assessor schema " + assessor->schema_fingerprint() + " does not match " + expected);

  fs::create_directories(out_dir);
  router::VaultQueue vault(out_dir / "vault.jsonl");
  auto report = router::evaluate_routing(trained, test, classifier, assessor ? &*assessor : nullptr, &vault,
                                         conf_id(conf_index, trained.config()));
  json doc = router::to_json(report);
  doc["vault_appended"] = vault.appended();
  doc["run_config"] = router_doc.value("run_config", json(nullptr));
  doc["tool_version"] = version();
  write_json(out_dir / "report.json", doc);
  write_text(out_dir / "routing.csv", std::string(kRoutingHeader) + routing_row(report));
  return report;
}

std::optional<double> pick_best_lambda(const std::vector<SweepPoint>& lambda_series) {
  std::vector<const SweepPoint*> ok;
  for (const auto& p : lambda_series)
    if (p.final_loss) ok.push_back(&p);
  if (ok.empty()) return std::nullopt;
  std::sort(ok.begin(), ok.end(), [](const SweepPoint* a, const SweepPoint* b) { return a->lambda < b->lambda; });
  double min_sat = ok.front()->final_loss->r_sat;
  for (const auto* p : ok) min_sat = std::min(min_sat, p->final_loss->r_sat);
  const double bound = min_sat + 0.3 * std::abs(min_sat);
  for (const auto* p : ok)
    if (p->final_loss->h_y_given_x >= 1e-3 && p->final_loss->r_sat <= bound) return p->lambda;
  for (const auto* p : ok)
    if (p->final_loss->r_sat <= bound) return p->lambda;
  return std::nullopt;
}

SweepResult cmd_sweep(const RunConfig& config, const fs::path& train_csv, const fs::path& validation_csv,
                      const fs::path& test_csv, const fs::path& out_dir, bool with_vault_assessor) {
  {
    // Fail before any training when the three files disagree.
    const auto fp = data::load_dataset(train_csv).fingerprint();
    data::load_dataset(validation_csv, fp);
    data::load_dataset(test_csv, fp);
  }
  SweepResult result;
  std::size_t next_index = 1;

  auto run_point = [&](const std::string& series, double lambda, double mu) {
    SweepPoint p;
    p.index = next_index++;
    p.series = series;
    p.lambda = lambda;
    p.mu = mu;
    RunConfig pc = config;
    pc.router.weights.lambda = lambda;
    pc.router.weights.mu = mu;
    if (config.sweep.seed_mode == SeedMode::derived) pc.router.seed = derive_seed(config.router.seed, {p.index});
    p.conf_id = conf_id(p.index, pc.router);
    const fs::path dir = out_dir / "points" / p.conf_id;
    spdlog::info("sweep point {} ({} series): lambda={} mu={}", p.index, series, lambda, mu);
    try {
      pc.router.validate();
      auto trained = cmd_train(pc, train_csv, validation_csv, dir, with_vault_assessor);
      p.final_loss = trained.router.trace().back();
      const std::optional<fs::path> assessor =
          with_vault_assessor ? std::optional<fs::path>(dir / "vault_assessor.json") : std::nullopt;
      p.report = cmd_eval(dir / "router.json", dir / "classifier.json", test_csv, assessor, dir, p.index);
    } catch (const std::exception& e) {
      spdlog::error("sweep point {} failed: {}", p.index, e.what());
      p.error = e.what();
    }
    result.points.push_back(std::move(p));
  };

  if (config.sweep.full_grid) {
    for (double l : config.sweep.lambda_grid)
      for (double m : config.sweep.mu_grid) run_point("grid", l, m);
    result.chosen_lambda = config.sweep.best_lambda.value_or(config.router.weights.lambda);
    result.chosen_reason = config.sweep.best_lambda ? "configured" : "full grid: router.lambda";
  } else {
    for (double l : config.sweep.lambda_grid) run_point("lambda", l, config.sweep.fixed_mu);
    if (config.sweep.best_lambda) {
      result.chosen_lambda = *config.sweep.best_lambda;
      result.chosen_reason = "configured";
    } else if (auto best = pick_best_lambda(result.points)) {
      result.chosen_lambda = *best;
      result.chosen_reason = "smallest lambda with H(Y|X) >= 1e-3 and R_SAT within 30% of the minimum";
    } else {
      result.chosen_lambda = config.router.weights.lambda;
      result.chosen_reason = "no lambda point succeeded: router.lambda";
    }
    for (double m : config.sweep.mu_grid) run_point("mu", result.chosen_lambda, m);
  }

  std::string losses_csv = "conf_id,series,lambda,mu,l_total,h_y_given_x,r_sat,h_y\n";
  std::string routing = kRoutingHeader;
  json points = json::array();
  for (const auto& p : result.points) {
    json jp = {{"index", p.index}, {"series", p.series}, {"lambda", p.lambda}, {"mu", p.mu}, {"conf_id", p.conf_id}};
    if (p.final_loss) {
      const auto& b = *p.final_loss;
      losses_csv += p.conf_id + ',' + p.series + ',' + fmt_double(p.lambda) + ',' + fmt_double(p.mu) + ',' +
                    fmt_double(b.l_total) + ',' + fmt_double(b.h_y_given_x) + ',' + fmt_double(b.r_sat) + ',' +
                    fmt_double(b.h_y) + '\n';
      jp["losses"] = losses::to_json(b);
    }
    if (p.report) {
      routing += routing_row(*p.report);
      jp["routing"] = router::to_json(*p.report);
    }
    jp["error"] = p.error ? json(*p.error) : json(nullptr);
    points.push_back(jp);
  }
  write_text(out_dir / "losses.csv", losses_csv);
  write_text(out_dir / "routing.csv", routing);
  json summary = {{"points", points},
                  {"runs", result.points.size()},
                  {"failed", std::count_if(result.points.begin(), result.points.end(),
                                           [](const SweepPoint& p) { return p.error.has_value(); })},
                  {"chosen_lambda", result.chosen_lambda},
                  {"chosen_reason", result.chosen_reason}};
  write_json(out_dir / "sweep.json", with_provenance(summary, to_json(config)));
  return result;
}

data::SyntheticData cmd_synth(const RunConfig& config, const fs::path& out_dir) {
  auto syn = data::generate_synthetic(config.synthetic);
  fs::create_directories(out_dir);
  const auto& ds = syn.dataset;
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(config.synthetic.seed, {7}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(config.train_fraction * static_cast<double>(ds.size()));
  const auto n_val = static_cast<std::size_t>(config.validation_fraction * static_cast<double>(ds.size()));
  auto take = [&](std::size_t from, std::size_t to) {
    std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(from),
                                  order.begin() + static_cast<std::ptrdiff_t>(to));
    std::sort(rows.begin(), rows.end());
    return ds.subset(rows);
  };
  data::save_dataset(out_dir / "full.csv", ds);
  data::save_dataset(out_dir / "train.csv", take(0, n_train));
  data::save_dataset(out_dir / "validation.csv", take(n_train, n_train + n_val));
  data::save_dataset(out_dir / "test.csv", take(n_train + n_val, ds.size()));
  std::string planted = "id,ambiguous\n";
  for (std::size_t i = 0; i < ds.size(); ++i) planted += ds.ids[i] + ',' + std::to_string(syn.ambiguous[i]) + '\n';
  write_text(out_dir / "planted.csv", planted);
  const auto n_amb = std::count(syn.ambiguous.begin(), syn.ambiguous.end(), 1);
  json doc = {{"samples", ds.size()},
              {"features", ds.dims()},
              {"ambiguous", n_amb},
              {"train", n_train},
              {"validation", n_val},
              {"test", ds.size() - n_train - n_val},
              {"rule_weights", syn.rule_weights},
              {"rule_threshold", syn.rule_threshold},
              {"schema_fingerprint", ds.fingerprint()}};
  write_json(out_dir / "synth.json", with_provenance(doc, to_json(config)));
  return syn;
}

clf::BenchmarkResult cmd_bench(const RunConfig& config, const fs::path& train_csv, const fs::path& test_csv,
                               const fs::path& out_dir, std::ostream& out) {
  const data::Dataset train = data::load_dataset(train_csv);
  const data::Dataset test = data::load_dataset(test_csv, train.fingerprint());
  fs::create_directories(out_dir);
  auto result = clf::benchmark_suite(train, test, config.classifier.seed, config.classifier);
  const std::string csv = clf::benchmark_csv(result);
  write_text(out_dir / "bench.csv", csv);
  write_json(out_dir / "bench.json", with_provenance(clf::to_json(result), to_json(config)));
  out << std::left << std::setw(5) << "id" << std::setw(16) << "algorithm" << std::setw(10) << "accuracy" << "fpr\n";
  for (const auto& r : result.rows) {
    out << std::setw(5) << r.b_id << std::setw(16) << r.algorithm << std::setw(10) << std::fixed
        << std::setprecision(3) << r.metrics.accuracy;
    if (r.metrics.fpr) out << *r.metrics.fpr;
    out << '\n';
  }
  out.unsetf(std::ios::floatfield);
  return result;
}

} // namespace dro::cli
