#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dro/data.hpp"
#include "dro/matrix.hpp"
#include "dro/nn.hpp"

namespace dro::clf {

enum class Kind { random_forest, adaboost_stumps, mlp };

std::string to_string(Kind k);
Kind kind_from_string(const std::string& name);

struct ClassifierConfig {
  Kind kind = Kind::random_forest;
  std::uint64_t seed = 1;

  // Random forest.
  std::size_t n_trees = 100;
  std::optional<std::size_t> max_depth;   // unlimited when empty
  std::optional<std::size_t> max_features; // floor(sqrt(D)) when empty
  std::size_t min_samples_split = 2;

  // AdaBoost.
  std::size_t adaboost_rounds = 100;

  // MLP: `mlp_depth` hidden layers of width `mlp_width`.
  std::size_t mlp_depth = 1;
  std::size_t mlp_width = 256;
  std::size_t mlp_epochs = 20;
  std::size_t mlp_batch_size = 64;
  double mlp_learning_rate = 1e-3;

  void validate() const;
  // Human-readable algorithm name, e.g. "Random Forest", "2-L MLP-DNN".
  [[nodiscard]] std::string algorithm_name() const;
};

nlohmann::json to_json(const ClassifierConfig& c);
ClassifierConfig classifier_config_from_json(const nlohmann::json& doc);

// Flat CART node. Leaves have feature == -1.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double posterior = 0.0; // fraction of label-1 training samples reaching the node

  [[nodiscard]] bool is_leaf() const noexcept { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes; // nodes[0] is the root

  [[nodiscard]] double posterior(std::span<const double> x) const;
  // Hard vote; a posterior of exactly 0.5 votes 1.
  [[nodiscard]] int vote(std::span<const double> x) const { return posterior(x) >= 0.5 ? 1 : 0; }
  [[nodiscard]] std::size_t depth() const;

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

struct RandomForest {
  std::vector<DecisionTree> trees;
  friend bool operator==(const RandomForest&, const RandomForest&) = default;
};

// Predicts 1 when polarity * (x[feature] - threshold) > 0, i.e. polarity +1
// flags values above the threshold.
struct Stump {
  std::size_t feature = 0;
  double threshold = 0.0;
  int polarity = 1;
  double alpha = 0.0;

  [[nodiscard]] int predict(std::span<const double> x) const {
    return (polarity > 0 ? x[feature] > threshold : x[feature] <= threshold) ? 1 : 0;
  }
  friend bool operator==(const Stump&, const Stump&) = default;
};

struct AdaBoost {
  std::vector<Stump> stumps;
  friend bool operator==(const AdaBoost&, const AdaBoost&) = default;
};

struct MlpModel {
  nn::MlpParams params;
  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

struct Prediction {
  std::vector<int> labels;
  std::vector<double> scores; // in [0,1]; label = score >= 0.5
};

// Immutable once trained.
class Classifier {
public:
  using Model = std::variant<RandomForest, AdaBoost, MlpModel>;

  Classifier(ClassifierConfig config, std::size_t n_inputs, std::string schema_fingerprint, Model model);

  [[nodiscard]] const ClassifierConfig& config() const noexcept { return config_; }
  [[nodiscard]] Kind kind() const noexcept { return config_.kind; }
  [[nodiscard]] std::size_t n_inputs() const noexcept { return n_inputs_; }
  [[nodiscard]] const std::string& schema_fingerprint() const noexcept { return fingerprint_; }
  [[nodiscard]] const Model& model() const noexcept { return model_; }

  [[nodiscard]] Prediction predict(const Matrix& inputs) const;
  [[nodiscard]] double score(std::span<const double> x) const;

  friend bool operator==(const Classifier&, const Classifier&) = default;

private:
  ClassifierConfig config_;
  std::size_t n_inputs_;
  std::string fingerprint_;
  Model model_;
};

// Rejects datasets without labels or with a single class.
Classifier train_classifier(const ClassifierConfig& config, const data::Dataset& train);

// Lower-level trainers, exposed for tests.
DecisionTree train_tree(const Matrix& x, const std::vector<int>& y, const std::vector<std::size_t>& rows,
                        const ClassifierConfig& config, std::uint64_t seed);
RandomForest train_forest(const Matrix& x, const std::vector<int>& y, const ClassifierConfig& config);
AdaBoost train_adaboost(const Matrix& x, const std::vector<int>& y, const ClassifierConfig& config);
MlpModel train_mlp(const Matrix& x, const std::vector<int>& y, const ClassifierConfig& config);

// Fraction of trees voting 1.
double forest_score(const RandomForest& forest, std::span<const double> x);
// Weighted vote mapped to [0,1]: (sum alpha_t h_t / sum alpha_t + 1) / 2, h in {-1,+1}.
double adaboost_score(const AdaBoost& model, std::span<const double> x);

nlohmann::json to_json(const Classifier& clf);
Classifier classifier_from_json(const nlohmann::json& doc);

// Confusion counts with malware (label 1) as the positive class.
struct MetricPair {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  double accuracy = 0.0;
  std::optional<double> fpr; // absent when truth has no negatives

  [[nodiscard]] std::size_t total() const noexcept { return tp + fp + tn + fn; }
};

MetricPair metrics(const std::vector<int>& predicted, const std::vector<int>& truth);

struct BenchmarkRow {
  std::string b_id; // "B1".."B6"
  std::string algorithm;
  MetricPair metrics;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;        // sorted by accuracy, best first
  std::vector<Classifier> classifiers;   // parallel to rows

  [[nodiscard]] const Classifier& best() const { return classifiers.front(); }
};

// The six baseline configurations: random forest, AdaBoost, 1..4-layer MLPs.
std::vector<ClassifierConfig> baseline_configs(std::uint64_t seed, const ClassifierConfig& defaults = {});

BenchmarkResult benchmark_suite(const data::Dataset& train, const data::Dataset& test, std::uint64_t seed,
                                const ClassifierConfig& defaults = {});

// Columns b_id,algorithm,accuracy,fpr.
std::string benchmark_csv(const BenchmarkResult& result);
nlohmann::json to_json(const BenchmarkResult& result);

} // namespace dro::clf
