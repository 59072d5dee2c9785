#include "dro/router.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <numeric>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dro/error.hpp"
#include "dro/rng.hpp"
#include "dro/version.hpp"

namespace dro::router {
namespace {

using nlohmann::json;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void warn(std::vector<std::string>& sink, std::string message) {
  spdlog::warn("{}", message);
  sink.push_back(std::move(message));
}

} // namespace

std::string to_string(Role r) { return r == Role::classifier ? "C1_classifier" : "C0_vault"; }

Role role_from_string(const std::string& name) {
  if (name == "C1_classifier") return Role::classifier;
  if (name == "C0_vault") return Role::vault;
  throw DataError("unknown route role '" + name + "'");
}

std::string to_string(BiasInit b) { return b == BiasInit::centered ? "centered" : "zero"; }

BiasInit bias_init_from_string(const std::string& name) {
  if (name == "centered") return BiasInit::centered;
  if (name == "zero") return BiasInit::zero;
  throw ConfigError("unknown bias init '" + name + "'");
}

std::string to_string(FeatureMode m) { return m == FeatureMode::append_posterior ? "append_posterior" : "identity"; }

FeatureMode feature_mode_from_string(const std::string& name) {
  if (name == "identity") return FeatureMode::identity;
  if (name == "append_posterior") return FeatureMode::append_posterior;
  throw ConfigError("unknown feature mode '" + name + "'");
}

void RouterConfig::validate() const {
  if (n_routes < 2) throw ConfigError("router needs at least 2 routes");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_batch_size < 1) throw ConfigError("eval batch_size must be >= 1");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("hidden widths must be positive");
  weights.validate();
  vat.validate();
  optimizer.validate();
}

std::string RouterConfig::hash() const { return data::fingerprint({to_json(*this).dump()}); }

json to_json(const RouterConfig& c) {
  return {{"n_routes", c.n_routes},
          {"lambda", c.weights.lambda},
          {"mu", c.weights.mu},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"restarts", c.restarts},
          {"eval_batch_size", c.eval_batch_size},
          {"feature_mode", to_string(c.feature_mode)},
          {"vat",
           {{"epsilon", c.vat.epsilon},
            {"xi", c.vat.xi},
            {"power_iterations", c.vat.power_iterations},
            {"mode", vat::to_string(c.vat.mode)},
            {"clip", c.vat.clip}}},
          {"net", {{"hidden", c.hidden}, {"activation", "relu"}, {"bias_init", to_string(c.bias_init)}}},
          {"optimizer",
           {{"kind", nn::to_string(c.optimizer.kind)},
            {"learning_rate", c.optimizer.learning_rate},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon}}}};
}

RouterConfig router_config_from_json(const json& doc) {
  RouterConfig c;
  try {
    c.n_routes = doc.at("n_routes").get<std::size_t>();
    c.weights.lambda = doc.at("lambda").get<double>();
    c.weights.mu = doc.at("mu").get<double>();
    c.epochs = doc.at("epochs").get<std::size_t>();
    c.batch_size = doc.at("batch_size").get<std::size_t>();
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.restarts = doc.at("restarts").get<std::size_t>();
    c.eval_batch_size = doc.at("eval_batch_size").get<std::size_t>();
    c.feature_mode = feature_mode_from_string(doc.at("feature_mode").get<std::string>());
    const auto& v = doc.at("vat");
    c.vat.epsilon = v.at("epsilon").get<double>();
    c.vat.xi = v.at("xi").get<double>();
    c.vat.power_iterations = v.at("power_iterations").get<int>();
    c.vat.mode = vat::mode_from_string(v.at("mode").get<std::string>());
    c.vat.clip = v.at("clip").get<bool>();
    c.hidden = doc.at("net").at("hidden").get<std::vector<std::size_t>>();
    c.bias_init = bias_init_from_string(doc.at("net").at("bias_init").get<std::string>());
    const auto& o = doc.at("optimizer");
    c.optimizer.kind = nn::optimizer_from_string(o.at("kind").get<std::string>());
    c.optimizer.learning_rate = o.at("learning_rate").get<double>();
    c.optimizer.beta1 = o.at("beta1").get<double>();
    c.optimizer.beta2 = o.at("beta2").get<double>();
    c.optimizer.epsilon = o.at("epsilon").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed router config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t argmax_cluster(std::span<const double> posterior) {
  if (posterior.empty()) throw ShapeError("empty posterior");
  std::size_t best = 0;
  for (std::size_t k = 1; k < posterior.size(); ++k)
    if (posterior[k] > posterior[best]) best = k;
  return best;
}

namespace {

// An epoch whose mean H(Y) is below this fraction of ln K counts as collapsed.
constexpr double kCollapseFraction = 0.1;

// One training run from the given seed. With `may_abandon` set the run stops
// at the first collapsed epoch and returns a truncated trace.
TrainingResult train_once(const Matrix& features, const RouterConfig& config, std::uint64_t seed, bool record_steps,
                          bool may_abandon, bool& collapsed) {
  collapsed = false;
  const double collapse_floor = kCollapseFraction * std::log(static_cast<double>(config.n_routes));
  const std::size_t n = features.rows();
  std::vector<std::size_t> widths{features.cols()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(config.n_routes);

  TrainingResult result;
  result.params = nn::init_params(widths, derive_seed(seed, {0}));
  if (config.bias_init == BiasInit::centered) nn::center_biases(result.params, features);
  nn::OptimizerState state(config.optimizer, result.params);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, {1, epoch}));
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);

    double sum_sat = 0.0, sum_hy = 0.0, sum_hyx = 0.0;
    std::size_t batches = 0, clamped = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                   perm.begin() + static_cast<std::ptrdiff_t>(end));
      Matrix batch = features.select_rows(idx);
      nn::ForwardTape tape = nn::forward_tape(result.params, batch);
      auto pert = vat::perturbations(result.params, batch, config.vat, derive_seed(seed, {2, epoch, batches}),
                                     &tape.probs);
      result.vat_fallbacks += pert.fallbacks;
      Matrix augmented = vat::augment(batch, pert.r, config.vat.clip);
      auto obj = losses::total_objective(result.params, tape, augmented, config.weights);
      nn::optimizer_step(result.params, obj.grads, state);
      ++result.optimizer_steps;
      clamped += obj.clamped;

      sum_sat += obj.breakdown.r_sat;
      sum_hy += obj.breakdown.h_y;
      sum_hyx += obj.breakdown.h_y_given_x;
      ++batches;
      if (record_steps) result.step_trace.push_back(obj.breakdown);
    }
    const double nb = static_cast<double>(batches);
    result.epoch_trace.push_back(losses::total_loss(sum_sat / nb, sum_hy / nb, sum_hyx / nb, config.weights));
    const auto& b = result.epoch_trace.back();
    spdlog::debug("epoch {}: l_total={:.6f} r_sat={:.6f} h_y={:.6f} h_y_given_x={:.6f}", epoch + 1, b.l_total, b.r_sat,
                  b.h_y, b.h_y_given_x);
    if (clamped > 0) spdlog::warn("epoch {}: {} perturbed probabilities clamped at {}", epoch + 1, clamped, nn::kLogClamp);
    if (b.h_y < collapse_floor) {
      collapsed = true;
      if (may_abandon) break;
    }
  }
  if (result.vat_fallbacks > 0)
    spdlog::info("vat fell back to random directions for {} samples", result.vat_fallbacks);
  return result;
}

} // namespace

TrainingResult train_router(const Matrix& features, const RouterConfig& config, bool record_steps) {
  config.validate();
  if (features.rows() == 0 || features.cols() == 0) throw DataError("router training set is empty");
  if (!features.all_finite()) throw DomainError("router training features must be finite");
  const std::size_t n = features.rows();
  if (n < 2 * config.batch_size)
    spdlog::info("training on {} samples with batch size {}: fewer than two batches per epoch", n,
                 config.batch_size);

  // Attempt 0 uses the configured seed. A collapsed attempt is abandoned and
  // the next one starts; the final attempt always runs every epoch. Without
  // the information term collapse is the optimum, so one attempt suffices.
  const std::size_t attempts = config.weights.lambda > 0.0 ? config.restarts : 1;
  TrainingResult result;
  for (std::size_t r = 0; r < attempts; ++r) {
    const std::uint64_t seed = r == 0 ? config.seed : derive_seed(config.seed, {3, r});
    bool collapsed = false;
    const bool last = r + 1 == attempts;
    result = train_once(features, config, seed, record_steps, !last, collapsed);
    result.selected_restart = r;
    if (!collapsed) break;
    if (!last)
      spdlog::info("attempt {} collapsed at epoch {}; restarting", r + 1, result.epoch_trace.size());
    else if (attempts > 1)
      warn(result.warnings, "all " + std::to_string(attempts) + " training attempts collapsed to one cluster");
  }

  result.cluster_sizes.assign(config.n_routes, 0);
  Matrix post = nn::forward(result.params, features);
  for (std::size_t i = 0; i < n; ++i) ++result.cluster_sizes[argmax_cluster(post.row(i))];
  for (std::size_t k = 0; k < config.n_routes; ++k)
    if (result.cluster_sizes[k] == 0)
      warn(result.warnings, "degenerate cluster " + std::to_string(k) + ": no training samples assigned");
  return result;
}

AssignmentResult choose_routes(const std::vector<std::optional<double>>& cluster_accuracy,
                               const std::vector<std::size_t>& cluster_sizes) {
  if (cluster_accuracy.size() != cluster_sizes.size() || cluster_sizes.empty())
    throw ShapeError("cluster statistics have inconsistent lengths");
  AssignmentResult out;
  out.cluster_accuracy = cluster_accuracy;
  out.cluster_sizes = cluster_sizes;
  out.assignment.assign(cluster_sizes.size(), Role::vault);

  std::optional<std::size_t> best;
  std::size_t non_empty = 0;
  for (std::size_t k = 0; k < cluster_sizes.size(); ++k) {
    if (cluster_sizes[k] == 0 || !cluster_accuracy[k]) {
      warn(out.warnings, "cluster " + std::to_string(k) + " is empty on validation data; assigned to the vault");
      continue;
    }
    ++non_empty;
    if (!best || *cluster_accuracy[k] > *cluster_accuracy[*best]) best = k;
  }
  if (!best) throw DataError("no cluster received validation samples");
  if (non_empty == 1)
    warn(out.warnings, "router output is degenerate: only cluster " + std::to_string(*best) +
                           " is populated; it is forced onto the classifier route");
  out.assignment[*best] = Role::classifier;
  return out;
}

AssignmentResult assign_routes(const nn::MlpParams& params, const data::Dataset& validation,
                               const clf::Classifier& downstream, FeatureMode mode) {
  const auto& truth = validation.require_labels();
  Matrix post = nn::forward(params, validation.features);
  const std::size_t k_routes = params.n_outputs();
  auto pred = downstream.predict(modify_features(validation.features, post, mode)).labels;

  std::vector<std::size_t> sizes(k_routes, 0), correct(k_routes, 0);
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const std::size_t k = argmax_cluster(post.row(i));
    ++sizes[k];
    if (pred[i] == truth[i]) ++correct[k];
  }
  std::vector<std::optional<double>> acc(k_routes);
  for (std::size_t k = 0; k < k_routes; ++k)
    if (sizes[k] > 0) acc[k] = static_cast<double>(correct[k]) / static_cast<double>(sizes[k]);
  return choose_routes(acc, sizes);
}

TrainedRouter::TrainedRouter(nn::MlpParams params, Assignment assignment, RouterConfig config,
                             std::vector<losses::LossBreakdown> trace, std::string vocabulary_fingerprint)
    : params_(std::move(params)), assignment_(std::move(assignment)), config_(std::move(config)),
      trace_(std::move(trace)), fingerprint_(std::move(vocabulary_fingerprint)) {
  params_.validate();
  if (assignment_.size() != params_.n_outputs()) throw ShapeError("assignment must cover every cluster");
  const auto c1 = std::count(assignment_.begin(), assignment_.end(), Role::classifier);
  if (c1 != 1) throw DataError("exactly one cluster must map to the classifier route");
}

Matrix TrainedRouter::posteriors(const Matrix& inputs) const { return nn::forward(params_, inputs); }

Role TrainedRouter::route(std::span<const double> x) const {
  if (x.size() != params_.n_inputs()) throw ShapeError("sample width does not match router");
  return assignment_[argmax_cluster(nn::forward(params_, x))];
}

std::vector<Role> TrainedRouter::route(const Matrix& inputs) const {
  Matrix post = posteriors(inputs);
  std::vector<Role> roles(inputs.rows());
  for (std::size_t i = 0; i < inputs.rows(); ++i) roles[i] = assignment_[argmax_cluster(post.row(i))];
  return roles;
}

Matrix TrainedRouter::downstream_features(const Matrix& inputs) const {
  if (config_.feature_mode == FeatureMode::identity) return inputs;
  return modify_features(inputs, posteriors(inputs), config_.feature_mode);
}

Matrix modify_features(const Matrix& inputs, const Matrix& posteriors, FeatureMode mode) {
  if (mode == FeatureMode::identity) return inputs;
  if (posteriors.rows() != inputs.rows()) throw ShapeError("posterior rows do not match inputs");
  Matrix out(inputs.rows(), inputs.cols() + posteriors.cols());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    auto dst = out.row(i);
    std::copy(inputs.row(i).begin(), inputs.row(i).end(), dst.begin());
    std::copy(posteriors.row(i).begin(), posteriors.row(i).end(),
              dst.begin() + static_cast<std::ptrdiff_t>(inputs.cols()));
  }
  return out;
}

std::vector<std::string> modified_columns(const std::vector<std::string>& columns, std::size_t n_routes,
                                          FeatureMode mode) {
  std::vector<std::string> out = columns;
  if (mode == FeatureMode::append_posterior)
    for (std::size_t k = 0; k < n_routes; ++k) out.push_back("dro_posterior_" + std::to_string(k));
  return out;
}

json to_json(const TrainedRouter& router) {
  json net = nn::to_json(router.params());
  net["config_hash"] = router.config().hash();
  json assignment = json::array();
  for (auto r : router.assignment()) assignment.push_back(to_string(r));
  json trace = json::array();
  for (const auto& b : router.trace()) trace.push_back(losses::to_json(b));
  return {{"format", "dro-router/1"},
          {"tool_version", version()},
          {"config", to_json(router.config())},
          {"config_hash", router.config().hash()},
          {"vocabulary_fingerprint", router.vocabulary_fingerprint()},
          {"assignment", assignment},
          {"network", net},
          {"training_loss_trace", trace}};
}

TrainedRouter router_from_json(const json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "dro-router/1") throw DataError("unsupported router format");
    RouterConfig config = router_config_from_json(doc.at("config"));
    if (doc.at("config_hash").get<std::string>() != config.hash())
      throw DataError("router checkpoint config hash does not match its config");
    Assignment assignment;
    for (const auto& r : doc.at("assignment")) assignment.push_back(role_from_string(r.get<std::string>()));
    std::vector<losses::LossBreakdown> trace;
    for (const auto& b : doc.at("training_loss_trace")) trace.push_back(losses::breakdown_from_json(b));
    return TrainedRouter(nn::params_from_json(doc.at("network")), std::move(assignment), std::move(config),
                         std::move(trace), doc.at("vocabulary_fingerprint").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed router checkpoint: ") + e.what());
  }
}

VaultQueue::VaultQueue(const std::filesystem::path& path) : out_(path, std::ios::app | std::ios::binary) {
  if (!out_) throw DataError("cannot open vault queue " + path.string());
}

void VaultQueue::append(const std::string& sample_id, std::span<const double> posterior, const std::string& timestamp) {
  json rec = {{"sample_id", sample_id},
              {"posterior", std::vector<double>(posterior.begin(), posterior.end())},
              {"timestamp", timestamp}};
  out_ << rec.dump() << '\n';
  out_.flush();
  if (!out_) throw DataError("failed to append to vault queue");
  ++appended_;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RoutingReport evaluate_routing(const TrainedRouter& router, const data::Dataset& test,
                               const clf::Classifier& downstream, const clf::Classifier* vault_assessor,
                               VaultQueue* vault, const std::string& conf_id) {
  const auto& truth = test.require_labels();
  if (test.fingerprint() != router.vocabulary_fingerprint())
    throw DataError("test schema fingerprint " + test.fingerprint() + " does not match router " +
                    router.vocabulary_fingerprint());
  const std::size_t n = test.size();
  if (n == 0) throw DataError("empty test set");

  RoutingReport rep;
  rep.conf_id = conf_id;
  rep.lambda = router.config().weights.lambda;
  rep.mu = router.config().weights.mu;
  rep.n = n;

  Matrix post = router.posteriors(test.features);
  std::vector<Role> roles(n);
  for (std::size_t i = 0; i < n; ++i) roles[i] = router.assignment()[argmax_cluster(post.row(i))];

  const Matrix downstream_in = modify_features(test.features, post, router.config().feature_mode);
  const auto pred = downstream.predict(downstream_in).labels;
  rep.benchmark = clf::metrics(pred, truth);

  std::vector<std::size_t> c0_idx, c1_idx;
  for (std::size_t i = 0; i < n; ++i) (roles[i] == Role::classifier ? c1_idx : c0_idx).push_back(i);
  rep.n_c0 = c0_idx.size();
  rep.n_c1 = c1_idx.size();
  rep.ratio_c0 = static_cast<double>(rep.n_c0) / static_cast<double>(n);
  rep.coverage = 1.0 - rep.ratio_c0;

  auto gather = [](const std::vector<int>& v, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
  };

  if (!c1_idx.empty()) {
    rep.c1 = clf::metrics(gather(pred, c1_idx), gather(truth, c1_idx));
  } else {
    rep.zero_coverage = true;
    warn(rep.warnings, "no test sample was routed to the classifier: zero coverage");
  }
  if (vault_assessor != nullptr && !c0_idx.empty()) {
    const Matrix c0_in = downstream_in.select_rows(c0_idx);
    rep.c0 = clf::metrics(vault_assessor->predict(c0_in).labels, gather(truth, c0_idx));
  }
  if (vault != nullptr) {
    const std::string ts = utc_timestamp();
    for (auto i : c0_idx) vault->append(test.ids[i], post.row(i), ts);
  }

  // Per-batch accuracies over consecutive evaluation batches.
  const std::size_t bs = router.config().eval_batch_size;
  double sum_all = 0.0, sum_c1 = 0.0;
  std::size_t batches_all = 0, batches_c1 = 0;
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t end = std::min(n, start + bs);
    std::size_t all_ok = 0, c1_n = 0, c1_ok = 0;
    for (std::size_t i = start; i < end; ++i) {
      const bool ok = pred[i] == truth[i];
      all_ok += ok ? 1 : 0;
      if (roles[i] == Role::classifier) {
        ++c1_n;
        c1_ok += ok ? 1 : 0;
      }
    }
    sum_all += static_cast<double>(all_ok) / static_cast<double>(end - start);
    ++batches_all;
    if (c1_n > 0) {
      sum_c1 += static_cast<double>(c1_ok) / static_cast<double>(c1_n);
      ++batches_c1;
    }
  }
  rep.a_benchmark = sum_all / static_cast<double>(batches_all);
  if (batches_c1 > 0) {
    rep.a_deeprouter = sum_c1 / static_cast<double>(batches_c1);
    rep.lift_a = *rep.a_deeprouter - rep.a_benchmark;
  }
  return rep;
}

json to_json(const RoutingReport& r) {
  auto metric_json = [](const std::optional<clf::MetricPair>& m) -> json {
    if (!m) return nullptr;
    return {{"accuracy", m->accuracy}, {"fpr", optional_number(m->fpr)}, {"tp", m->tp},
            {"fp", m->fp},             {"tn", m->tn},                    {"fn", m->fn}};
  };
  return {{"conf_id", r.conf_id},
          {"lambda", r.lambda},
          {"mu", r.mu},
          {"ratio_c0", r.ratio_c0},
          {"coverage", r.coverage},
          {"c0_acc", r.c0 ? json(r.c0->accuracy) : json(nullptr)},
          {"c0_fpr", r.c0 ? optional_number(r.c0->fpr) : json(nullptr)},
          {"c1_acc", r.c1 ? json(r.c1->accuracy) : json(nullptr)},
          {"c1_fpr", r.c1 ? optional_number(r.c1->fpr) : json(nullptr)},
          {"a_benchmark", r.a_benchmark},
          {"a_deeprouter", optional_number(r.a_deeprouter)},
          {"lift_a", optional_number(r.lift_a)},
          {"benchmark_acc", r.benchmark.accuracy},
          {"benchmark_fpr", optional_number(r.benchmark.fpr)},
          {"n", r.n},
          {"n_c0", r.n_c0},
          {"n_c1", r.n_c1},
          {"zero_coverage", r.zero_coverage},
          {"c0_counts", metric_json(r.c0)},
          {"c1_counts", metric_json(r.c1)},
          {"warnings", r.warnings}};
}

} // namespace dro::router
