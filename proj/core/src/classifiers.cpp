#include "dro/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dro/error.hpp"
#include "dro/losses.hpp"
#include "dro/rng.hpp"

namespace dro::clf {
namespace {

using nlohmann::json;

double weighted_gini(std::size_t n, std::size_t n1) {
  if (n == 0) return 0.0;
  return 2.0 * static_cast<double>(n1) * static_cast<double>(n - n1) / static_cast<double>(n);
}

void check_training_set(const Matrix& x, const std::vector<int>& y) {
  if (x.rows() != y.size()) throw ShapeError("label count does not match rows");
  if (x.rows() == 0) throw DataError("empty training set");
  bool has0 = false, has1 = false;
  for (int v : y) {
    if (v == 0) has0 = true;
    else if (v == 1) has1 = true;
    else throw DataError("labels must be 0 or 1");
  }
  if (!has0 || !has1) throw DataError("training set must contain both classes");
}

std::size_t resolve_max_features(const ClassifierConfig& c, std::size_t d) {
  if (c.max_features) return std::clamp<std::size_t>(*c.max_features, 1, d);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double impurity = std::numeric_limits<double>::infinity();
};

SplitChoice best_split(const Matrix& x, const std::vector<int>& y, const std::vector<std::size_t>& rows,
                       std::size_t max_features, Rng& rng) {
  const std::size_t d = x.cols();
  const std::size_t n = rows.size();
  std::size_t n1 = 0;
  for (auto r : rows) n1 += static_cast<std::size_t>(y[r]);

  std::vector<std::size_t> features(d);
  std::iota(features.begin(), features.end(), 0);
  std::vector<std::pair<double, int>> column(n);
  SplitChoice best;
  std::size_t examined = 0;
  for (std::size_t i = 0; i < d && examined < max_features; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, d - 1);
    std::swap(features[i], features[pick(rng)]);
    const std::size_t f = features[i];
    for (std::size_t k = 0; k < n; ++k) column[k] = {x(rows[k], f), y[rows[k]]};
    std::sort(column.begin(), column.end());
    if (column.front().first == column.back().first) continue;
    ++examined;
    std::size_t nl = 0, n1l = 0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      ++nl;
      n1l += static_cast<std::size_t>(column[k].second);
      if (column[k].first == column[k + 1].first) continue;
      const double imp = weighted_gini(nl, n1l) + weighted_gini(n - nl, n1 - n1l);
      if (imp < best.impurity) {
        best.impurity = imp;
        best.feature = static_cast<int>(f);
        best.threshold = 0.5 * (column[k].first + column[k + 1].first);
      }
    }
  }
  return best;
}

double mlp_positive_score(const nn::MlpParams& params, std::span<const double> x) {
  return nn::forward(params, x)[1];
}

json tree_to_json(const DecisionTree& tree, std::size_t idx) {
  const TreeNode& node = tree.nodes[idx];
  if (node.is_leaf()) return {{"leaf", node.posterior}};
  return {{"feature", node.feature},
          {"threshold", node.threshold},
          {"posterior", node.posterior},
          {"left", tree_to_json(tree, static_cast<std::size_t>(node.left))},
          {"right", tree_to_json(tree, static_cast<std::size_t>(node.right))}};
}

// Rebuilds the flat layout the trainer produces: both children are appended
// when a split is expanded, and the left subtree is expanded first.
DecisionTree tree_from_json(const json& root) {
  DecisionTree tree;
  tree.nodes.emplace_back();
  std::vector<std::pair<const json*, std::size_t>> stack{{&root, 0}};
  while (!stack.empty()) {
    auto [j, idx] = stack.back();
    stack.pop_back();
    TreeNode node;
    if (j->contains("leaf")) {
      node.posterior = j->at("leaf").get<double>();
    } else {
      node.feature = j->at("feature").get<int>();
      node.threshold = j->at("threshold").get<double>();
      node.posterior = j->at("posterior").get<double>();
      node.left = static_cast<int>(tree.nodes.size());
      node.right = node.left + 1;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      stack.emplace_back(&j->at("right"), static_cast<std::size_t>(node.right));
      stack.emplace_back(&j->at("left"), static_cast<std::size_t>(node.left));
    }
    tree.nodes[idx] = node;
  }
  return tree;
}

} // namespace

std::string to_string(Kind k) {
  switch (k) {
  case Kind::adaboost_stumps:
    return "adaboost_stumps";
  case Kind::mlp:
    return "mlp";
  case Kind::random_forest:
    break;
  }
  return "random_forest";
}

Kind kind_from_string(const std::string& name) {
  if (name == "random_forest") return Kind::random_forest;
  if (name == "adaboost_stumps" || name == "adaboost") return Kind::adaboost_stumps;
  if (name == "mlp") return Kind::mlp;
  throw ConfigError("unknown classifier kind '" + name + "'");
}

void ClassifierConfig::validate() const {
  if (kind == Kind::random_forest && n_trees == 0) throw ConfigError("n_trees must be positive");
  if (max_depth && *max_depth == 0) throw ConfigError("max_depth must be positive");
  if (max_features && *max_features == 0) throw ConfigError("max_features must be positive");
  if (min_samples_split < 2) throw ConfigError("min_samples_split must be >= 2");
  if (kind == Kind::adaboost_stumps && adaboost_rounds == 0) throw ConfigError("adaboost rounds must be positive");
  if (kind == Kind::mlp) {
    if (mlp_depth < 1 || mlp_depth > 4) throw ConfigError("mlp depth must be 1..4");
    if (mlp_width == 0 || mlp_epochs == 0 || mlp_batch_size == 0)
      throw ConfigError("mlp width, epochs and batch size must be positive");
    if (!(mlp_learning_rate > 0.0)) throw ConfigError("mlp learning rate must be positive");
  }
}

std::string ClassifierConfig::algorithm_name() const {
  switch (kind) {
  case Kind::adaboost_stumps:
    return "AdaBoost";
  case Kind::mlp:
    return std::to_string(mlp_depth) + "-L MLP-DNN";
  case Kind::random_forest:
    break;
  }
  return "Random Forest";
}

json to_json(const ClassifierConfig& c) {
  json j = {{"kind", to_string(c.kind)},
            {"seed", c.seed},
            {"n_trees", c.n_trees},
            {"max_depth", c.max_depth ? json(*c.max_depth) : json(nullptr)},
            {"max_features", c.max_features ? json(*c.max_features) : json(nullptr)},
            {"min_samples_split", c.min_samples_split},
            {"adaboost_rounds", c.adaboost_rounds},
            {"mlp_depth", c.mlp_depth},
            {"mlp_width", c.mlp_width},
            {"mlp_epochs", c.mlp_epochs},
            {"mlp_batch_size", c.mlp_batch_size},
            {"mlp_learning_rate", c.mlp_learning_rate}};
  return j;
}

ClassifierConfig classifier_config_from_json(const json& doc) {
  ClassifierConfig c;
  try {
    c.kind = kind_from_string(doc.at("kind").get<std::string>());
    c.seed = doc.value("seed", c.seed);
    c.n_trees = doc.value("n_trees", c.n_trees);
    if (doc.contains("max_depth") && !doc.at("max_depth").is_null()) c.max_depth = doc.at("max_depth").get<std::size_t>();
    if (doc.contains("max_features") && !doc.at("max_features").is_null())
      c.max_features = doc.at("max_features").get<std::size_t>();
    c.min_samples_split = doc.value("min_samples_split", c.min_samples_split);
    c.adaboost_rounds = doc.value("adaboost_rounds", c.adaboost_rounds);
    c.mlp_depth = doc.value("mlp_depth", c.mlp_depth);
    c.mlp_width = doc.value("mlp_width", c.mlp_width);
    c.mlp_epochs = doc.value("mlp_epochs", c.mlp_epochs);
    c.mlp_batch_size = doc.value("mlp_batch_size", c.mlp_batch_size);
    c.mlp_learning_rate = doc.value("mlp_learning_rate", c.mlp_learning_rate);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid classifier config: ") + e.what());
  }
  c.validate();
  return c;
}

double DecisionTree::posterior(std::span<const double> x) const {
  std::size_t idx = 0;
  while (!nodes[idx].is_leaf()) {
    const TreeNode& n = nodes[idx];
    idx = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[idx].posterior;
}

std::size_t DecisionTree::depth() const {
  std::size_t best = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [idx, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (!nodes[idx].is_leaf()) {
      stack.emplace_back(static_cast<std::size_t>(nodes[idx].left), d + 1);
      stack.emplace_back(static_cast<std::size_t>(nodes[idx].right), d + 1);
    }
  }
  return best;
}

DecisionTree train_tree(const Matrix& x, const std::vector<int>& y, const std::vector<std::size_t>& rows,
                        const ClassifierConfig& config, std::uint64_t seed) {
  if (rows.empty()) throw DataError("cannot grow a tree on zero samples");
  Rng rng(seed);
  const std::size_t max_features = resolve_max_features(config, x.cols());

  struct Task {
    std::vector<std::size_t> rows;
    std::size_t depth;
    std::size_t node;
  };
  DecisionTree tree;
  tree.nodes.emplace_back();
  std::vector<Task> stack;
  stack.push_back({rows, 0, 0});
  while (!stack.empty()) {
    Task task = std::move(stack.back());
    stack.pop_back();
    const std::size_t n = task.rows.size();
    std::size_t n1 = 0;
    for (auto r : task.rows) n1 += static_cast<std::size_t>(y[r]);
    TreeNode node;
    node.posterior = static_cast<double>(n1) / static_cast<double>(n);

    const bool pure = n1 == 0 || n1 == n;
    const bool depth_reached = config.max_depth && task.depth >= *config.max_depth;
    if (!pure && !depth_reached && n >= config.min_samples_split) {
      SplitChoice split = best_split(x, y, task.rows, max_features, rng);
      if (split.feature >= 0) {
        std::vector<std::size_t> left, right;
        for (auto r : task.rows)
          (x(r, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right).push_back(r);
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = static_cast<int>(tree.nodes.size());
        node.right = node.left + 1;
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        stack.push_back({std::move(right), task.depth + 1, static_cast<std::size_t>(node.right)});
        stack.push_back({std::move(left), task.depth + 1, static_cast<std::size_t>(node.left)});
      }
    }
    tree.nodes[task.node] = node;
  }
  return tree;
}

RandomForest train_forest(const Matrix& x, const std::vector<int>& y, const ClassifierConfig& config) {
  check_training_set(x, y);
  RandomForest forest;
  forest.trees.reserve(config.n_trees);
  const std::size_t n = x.rows();
  for (std::size_t t = 0; t < config.n_trees; ++t) {
    Rng rng(derive_seed(config.seed, {t, 0}));
    std::uniform_int_distribution<std::size_t> draw(0, n - 1);
    std::vector<std::size_t> sample(n);
    for (auto& s : sample) s = draw(rng);
    forest.trees.push_back(train_tree(x, y, sample, config, derive_seed(config.seed, {t, 1})));
  }
  return forest;
}

double forest_score(const RandomForest& forest, std::span<const double> x) {
  std::size_t votes = 0;
  for (const auto& t : forest.trees) votes += static_cast<std::size_t>(t.vote(x));
  return static_cast<double>(votes) / static_cast<double>(forest.trees.size());
}

AdaBoost train_adaboost(const Matrix& x, const std::vector<int>& y, const ClassifierConfig& config) {
  check_training_set(x, y);
  constexpr double kMinError = 1e-10;
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();

  std::vector<std::vector<std::size_t>> order(d, std::vector<std::size_t>(n));
  for (std::size_t f = 0; f < d; ++f) {
    std::iota(order[f].begin(), order[f].end(), 0);
    std::stable_sort(order[f].begin(), order[f].end(), [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
  }

  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  AdaBoost model;
  for (std::size_t round = 0; round < config.adaboost_rounds; ++round) {
    Stump best;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < d; ++f) {
      const auto& ord = order[f];
      // Threshold below every value: polarity +1 predicts 1 everywhere.
      double err = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (y[i] == 0) err += w[i];
      auto consider = [&](double e, double thr) {
        if (e < best_err) {
          best_err = e;
          best = {f, thr, 1, 0.0};
        }
        if (1.0 - e < best_err) {
          best_err = 1.0 - e;
          best = {f, thr, -1, 0.0};
        }
      };
      consider(err, x(ord.front(), f) - 1.0);
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const std::size_t i = ord[k];
        err += y[i] == 1 ? w[i] : -w[i];
        const double v = x(i, f);
        const double next = x(ord[k + 1], f);
        if (v == next) continue;
        consider(err, 0.5 * (v + next));
      }
    }
    if (best_err >= 0.5 && !model.stumps.empty()) break;
    const double e = std::clamp(best_err, kMinError, 1.0 - kMinError);
    best.alpha = 0.5 * std::log((1.0 - e) / e);
    model.stumps.push_back(best);
    if (best_err <= kMinError) break;

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double yi = y[i] == 1 ? 1.0 : -1.0;
      const double hi = best.predict(x.row(i)) == 1 ? 1.0 : -1.0;
      w[i] *= std::exp(-best.alpha * yi * hi);
      total += w[i];
    }
    for (double& wi : w) wi /= total;
  }
  return model;
}

double adaboost_score(const AdaBoost& model, std::span<const double> x) {
  double s = 0.0, norm = 0.0;
  for (const auto& st : model.stumps) {
    s += st.alpha * (st.predict(x) == 1 ? 1.0 : -1.0);
    norm += st.alpha;
  }
  if (norm <= 0.0) return 0.5;
  return std::clamp(0.5 * (s / norm + 1.0), 0.0, 1.0);
}

MlpModel train_mlp(const Matrix& x, const std::vector<int>& y, const ClassifierConfig& config) {
  check_training_set(x, y);
  std::vector<std::size_t> widths{x.cols()};
  for (std::size_t i = 0; i < config.mlp_depth; ++i) widths.push_back(config.mlp_width);
  widths.push_back(2);
  MlpModel model{nn::init_params(widths, derive_seed(config.seed, {0}))};
  nn::OptimizerSettings opt;
  opt.learning_rate = config.mlp_learning_rate;
  nn::OptimizerState state(opt, model.params);

  const std::size_t n = x.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t epoch = 0; epoch < config.mlp_epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {1, epoch}));
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t start = 0; start < n; start += config.mlp_batch_size) {
      const std::size_t end = std::min(n, start + config.mlp_batch_size);
      std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                   perm.begin() + static_cast<std::ptrdiff_t>(end));
      Matrix batch = x.select_rows(idx);
      Matrix targets(idx.size(), 2);
      for (std::size_t i = 0; i < idx.size(); ++i) targets(i, static_cast<std::size_t>(y[idx[i]])) = 1.0;
      auto pg = nn::param_gradients(model.params, batch, [&](const Matrix& p) {
        return losses::cross_entropy_objective(p, targets);
      });
      nn::optimizer_step(model.params, pg.grads, state);
    }
  }
  return model;
}

Classifier::Classifier(ClassifierConfig config, std::size_t n_inputs, std::string schema_fingerprint, Model model)
    : config_(std::move(config)), n_inputs_(n_inputs), fingerprint_(std::move(schema_fingerprint)),
      model_(std::move(model)) {}

double Classifier::score(std::span<const double> x) const {
  if (x.size() != n_inputs_) throw ShapeError("classifier expects " + std::to_string(n_inputs_) + " features");
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, RandomForest>) return forest_score(m, x);
        else if constexpr (std::is_same_v<T, AdaBoost>) return adaboost_score(m, x);
        else return mlp_positive_score(m.params, x);
      },
      model_);
}

Prediction Classifier::predict(const Matrix& inputs) const {
  if (inputs.cols() != n_inputs_)
    throw ShapeError("classifier expects " + std::to_string(n_inputs_) + " features, got " +
                     std::to_string(inputs.cols()));
  Prediction p;
  p.labels.reserve(inputs.rows());
  p.scores.reserve(inputs.rows());
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    const double s = score(inputs.row(r));
    p.scores.push_back(s);
    p.labels.push_back(s >= 0.5 ? 1 : 0);
  }
  return p;
}

Classifier train_classifier(const ClassifierConfig& config, const data::Dataset& train) {
  config.validate();
  const auto& y = train.require_labels();
  check_training_set(train.features, y);
  Classifier::Model model;
  switch (config.kind) {
  case Kind::random_forest:
    model = train_forest(train.features, y, config);
    break;
  case Kind::adaboost_stumps:
    model = train_adaboost(train.features, y, config);
    break;
  case Kind::mlp:
    model = train_mlp(train.features, y, config);
    break;
  }
  return Classifier(config, train.dims(), train.fingerprint(), std::move(model));
}

json to_json(const Classifier& clf) {
  json j = {{"format", "dro-classifier/1"},
            {"config", to_json(clf.config())},
            {"n_inputs", clf.n_inputs()},
            {"schema_fingerprint", clf.schema_fingerprint()}};
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, RandomForest>) {
          json trees = json::array();
          for (const auto& t : m.trees) trees.push_back(tree_to_json(t, 0));
          j["trees"] = std::move(trees);
        } else if constexpr (std::is_same_v<T, AdaBoost>) {
          json stumps = json::array();
          for (const auto& s : m.stumps)
            stumps.push_back({{"feature", s.feature}, {"threshold", s.threshold}, {"polarity", s.polarity}, {"alpha", s.alpha}});
          j["stumps"] = std::move(stumps);
        } else {
          j["network"] = nn::to_json(m.params);
        }
      },
      clf.model());
  return j;
}

Classifier classifier_from_json(const json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "dro-classifier/1") throw DataError("unsupported classifier format");
    ClassifierConfig config = classifier_config_from_json(doc.at("config"));
    const auto n_inputs = doc.at("n_inputs").get<std::size_t>();
    Classifier::Model model;
    switch (config.kind) {
    case Kind::random_forest: {
      RandomForest f;
      for (const auto& t : doc.at("trees")) f.trees.push_back(tree_from_json(t));
      if (f.trees.empty()) throw DataError("forest checkpoint has no trees");
      model = std::move(f);
      break;
    }
    case Kind::adaboost_stumps: {
      AdaBoost a;
      for (const auto& s : doc.at("stumps"))
        a.stumps.push_back({s.at("feature").get<std::size_t>(), s.at("threshold").get<double>(),
                            s.at("polarity").get<int>(), s.at("alpha").get<double>()});
      model = std::move(a);
      break;
    }
    case Kind::mlp:
      model = MlpModel{nn::params_from_json(doc.at("network"))};
      break;
    }
    return Classifier(config, n_inputs, doc.at("schema_fingerprint").get<std::string>(), std::move(model));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed classifier checkpoint: ") + e.what());
  }
}

MetricPair metrics(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw ShapeError("prediction and truth lengths differ");
  MetricPair m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == 1;
    const bool t = truth[i] == 1;
    if (p && t) ++m.tp;
    else if (p && !t) ++m.fp;
    else if (!p && !t) ++m.tn;
    else ++m.fn;
  }
  if (m.total() > 0) m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
  if (m.fp + m.tn > 0) m.fpr = static_cast<double>(m.fp) / static_cast<double>(m.fp + m.tn);
  return m;
}

std::vector<ClassifierConfig> baseline_configs(std::uint64_t seed, const ClassifierConfig& defaults) {
  std::vector<ClassifierConfig> out;
  ClassifierConfig rf = defaults;
  rf.kind = Kind::random_forest;
  out.push_back(rf);
  ClassifierConfig ada = defaults;
  ada.kind = Kind::adaboost_stumps;
  out.push_back(ada);
  for (std::size_t depth = 1; depth <= 4; ++depth) {
    ClassifierConfig mlp = defaults;
    mlp.kind = Kind::mlp;
    mlp.mlp_depth = depth;
    out.push_back(mlp);
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].seed = derive_seed(seed, {i});
  return out;
}

BenchmarkResult benchmark_suite(const data::Dataset& train, const data::Dataset& test, std::uint64_t seed,
                                const ClassifierConfig& defaults) {
  if (train.fingerprint() != test.fingerprint()) throw DataError("train and test schemas differ");
  const auto& truth = test.require_labels();
  struct Entry {
    BenchmarkRow row;
    Classifier clf;
  };
  std::vector<Entry> entries;
  const auto configs = baseline_configs(seed, defaults);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    Classifier clf = train_classifier(configs[i], train);
    MetricPair m = metrics(clf.predict(test.features).labels, truth);
    entries.push_back({{"B" + std::to_string(i + 1), configs[i].algorithm_name(), m}, std::move(clf)});
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.row.metrics.accuracy > b.row.metrics.accuracy; });
  BenchmarkResult result;
  for (auto& e : entries) {
    result.rows.push_back(std::move(e.row));
    result.classifiers.push_back(std::move(e.clf));
  }
  return result;
}

std::string benchmark_csv(const BenchmarkResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "b_id,algorithm,accuracy,fpr\n";
  for (const auto& r : result.rows) {
    out << r.b_id << ',' << r.algorithm << ',' << r.metrics.accuracy << ',';
    if (r.metrics.fpr) out << *r.metrics.fpr;
    out << '\n';
  }
  return out.str();
}

json to_json(const BenchmarkResult& result) {
  json rows = json::array();
  for (const auto& r : result.rows)
    rows.push_back({{"b_id", r.b_id},
                    {"algorithm", r.algorithm},
                    {"accuracy", r.metrics.accuracy},
                    {"fpr", r.metrics.fpr ? json(*r.metrics.fpr) : json(nullptr)},
                    {"tp", r.metrics.tp},
                    {"fp", r.metrics.fp},
                    {"tn", r.metrics.tn},
                    {"fn", r.metrics.fn}});
  return {{"rows", rows}, {"best", result.rows.empty() ? json(nullptr) : json(result.rows.front().b_id)}};
}

} // namespace dro::clf
