#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dro/classifiers.hpp"
#include "dro/data.hpp"
#include "dro/losses.hpp"
#include "dro/nn.hpp"
#include "dro/vat.hpp"

namespace dro::router {

// C0 is the vault (costlier secondary analysis), C1 the downstream classifier.
enum class Role { vault, classifier };

std::string to_string(Role r);
Role role_from_string(const std::string& name);

// How the router's biases start. Weights are always Glorot-uniform;
// `centered` zeroes the mean pre-activation of every layer on the training set.
enum class BiasInit { zero, centered };
std::string to_string(BiasInit b);
BiasInit bias_init_from_string(const std::string& name);

// What the downstream classifier sees. `append_posterior` concatenates the
// router posterior to the raw features.
enum class FeatureMode { identity, append_posterior };

std::string to_string(FeatureMode m);
FeatureMode feature_mode_from_string(const std::string& name);

struct RouterConfig {
  std::size_t n_routes = 2;
  losses::LossWeights weights;
  vat::VatConfig vat;
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  std::uint64_t seed = 42;
  nn::OptimizerSettings optimizer;
  std::vector<std::size_t> hidden = {256, 256};
  BiasInit bias_init = BiasInit::centered;
  // Maximum training attempts. An attempt whose epoch-mean H(Y) falls below
  // a tenth of ln K is abandoned and retried from a derived seed.
  std::size_t restarts = 10;
  std::size_t eval_batch_size = 256;
  FeatureMode feature_mode = FeatureMode::identity;

  void validate() const;
  // Fingerprint of the canonical JSON form.
  [[nodiscard]] std::string hash() const;
};

nlohmann::json to_json(const RouterConfig& c);
RouterConfig router_config_from_json(const nlohmann::json& doc);

struct TrainingResult {
  nn::MlpParams params;
  // One entry per epoch: batch-mean components recomposed with total_loss.
  std::vector<losses::LossBreakdown> epoch_trace;
  // One entry per optimizer step, filled when requested.
  std::vector<losses::LossBreakdown> step_trace;
  std::size_t optimizer_steps = 0;
  std::size_t vat_fallbacks = 0;
  std::vector<std::size_t> cluster_sizes; // argmax counts on the training data
  std::vector<std::string> warnings;
  std::size_t selected_restart = 0; // index of the attempt that was kept
};

// Unsupervised: only the feature matrix is used.
TrainingResult train_router(const Matrix& features, const RouterConfig& config, bool record_steps = false);

// Lowest index wins ties.
std::size_t argmax_cluster(std::span<const double> posterior);

using Assignment = std::vector<Role>; // indexed by cluster

struct AssignmentResult {
  Assignment assignment;
  std::vector<std::size_t> cluster_sizes;
  std::vector<std::optional<double>> cluster_accuracy; // absent for empty clusters
  std::vector<std::string> warnings;
};

// The non-empty cluster with the highest downstream accuracy becomes C1
// (lower index on ties); every other cluster is C0.
AssignmentResult choose_routes(const std::vector<std::optional<double>>& cluster_accuracy,
                               const std::vector<std::size_t>& cluster_sizes);

AssignmentResult assign_routes(const nn::MlpParams& params, const data::Dataset& validation,
                               const clf::Classifier& downstream, FeatureMode mode = FeatureMode::identity);

// Immutable routing function.
class TrainedRouter {
public:
  TrainedRouter(nn::MlpParams params, Assignment assignment, RouterConfig config,
                std::vector<losses::LossBreakdown> trace, std::string vocabulary_fingerprint);

  [[nodiscard]] const nn::MlpParams& params() const noexcept { return params_; }
  [[nodiscard]] const Assignment& assignment() const noexcept { return assignment_; }
  [[nodiscard]] const RouterConfig& config() const noexcept { return config_; }
  [[nodiscard]] const std::vector<losses::LossBreakdown>& trace() const noexcept { return trace_; }
  [[nodiscard]] const std::string& vocabulary_fingerprint() const noexcept { return fingerprint_; }

  [[nodiscard]] Matrix posteriors(const Matrix& inputs) const;
  [[nodiscard]] Role route(std::span<const double> x) const;
  [[nodiscard]] std::vector<Role> route(const Matrix& inputs) const;

  // Applies the configured feature modification for the downstream model.
  [[nodiscard]] Matrix downstream_features(const Matrix& inputs) const;

private:
  nn::MlpParams params_;
  Assignment assignment_;
  RouterConfig config_;
  std::vector<losses::LossBreakdown> trace_;
  std::string fingerprint_;
};

Matrix modify_features(const Matrix& inputs, const Matrix& posteriors, FeatureMode mode);
std::vector<std::string> modified_columns(const std::vector<std::string>& columns, std::size_t n_routes,
                                          FeatureMode mode);

nlohmann::json to_json(const TrainedRouter& router);
TrainedRouter router_from_json(const nlohmann::json& doc);

// Appends one JSON line {sample_id, posterior, timestamp} per vault sample.
class VaultQueue {
public:
  explicit VaultQueue(const std::filesystem::path& path);
  void append(const std::string& sample_id, std::span<const double> posterior, const std::string& timestamp);
  [[nodiscard]] std::size_t appended() const noexcept { return appended_; }

private:
  std::ofstream out_;
  std::size_t appended_ = 0;
};

// Current UTC time, ISO-8601 with second resolution.
std::string utc_timestamp();

struct RoutingReport {
  std::string conf_id;
  double lambda = 0.0;
  double mu = 0.0;
  std::size_t n = 0;
  std::size_t n_c0 = 0;
  std::size_t n_c1 = 0;
  double ratio_c0 = 0.0;
  double coverage = 0.0;
  bool zero_coverage = false;
  clf::MetricPair benchmark;          // downstream on the whole test set
  std::optional<clf::MetricPair> c1;  // downstream on the C1 subset
  std::optional<clf::MetricPair> c0;  // vault assessor on the C0 subset
  // Mean of per-batch accuracies over the evaluation batches, on all samples
  // (benchmark) and on each batch's C1 samples (deep router).
  double a_benchmark = 0.0;
  std::optional<double> a_deeprouter;
  std::optional<double> lift_a;
  std::vector<std::string> warnings;
};

RoutingReport evaluate_routing(const TrainedRouter& router, const data::Dataset& test,
                               const clf::Classifier& downstream, const clf::Classifier* vault_assessor = nullptr,
                               VaultQueue* vault = nullptr, const std::string& conf_id = "");

nlohmann::json to_json(const RoutingReport& report);

} // namespace dro::router
