#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <nlohmann/json.hpp>
#include <random>

#include "dro/classifiers.hpp"
#include "dro/error.hpp"

using namespace dro;

namespace {

data::Dataset make_dataset(Matrix x, std::vector<int> y) {
  data::Dataset ds;
  for (std::size_t i = 0; i < x.rows(); ++i) ds.ids.push_back("s" + std::to_string(i));
  for (std::size_t j = 0; j < x.cols(); ++j) ds.columns.push_back("f" + std::to_string(j));
  ds.features = std::move(x);
  ds.labels = std::move(y);
  return ds;
}

// Two binary features, label = x0.
data::Dataset separable() {
  Matrix x(40, 2);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    x(i, 0) = static_cast<double>(i % 2);
    x(i, 1) = static_cast<double>((i / 2) % 2);
    y[i] = static_cast<int>(i % 2);
  }
  return make_dataset(x, y);
}

data::Dataset noise(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  Matrix x(n, d);
  std::vector<int> y(n);
  for (auto& v : x.values()) v = coin(rng) ? 1.0 : 0.0;
  for (auto& v : y) v = coin(rng) ? 1 : 0;
  return make_dataset(x, y);
}

std::vector<clf::ClassifierConfig> every_kind() {
  std::vector<clf::ClassifierConfig> out;
  clf::ClassifierConfig rf;
  rf.n_trees = 20;
  out.push_back(rf);
  clf::ClassifierConfig ada;
  ada.kind = clf::Kind::adaboost_stumps;
  ada.adaboost_rounds = 20;
  out.push_back(ada);
  for (std::size_t depth = 1; depth <= 4; ++depth) {
    clf::ClassifierConfig mlp;
    mlp.kind = clf::Kind::mlp;
    mlp.mlp_depth = depth;
    mlp.mlp_width = 16;
    mlp.mlp_epochs = 200;
    mlp.mlp_batch_size = 8;
    mlp.mlp_learning_rate = 1e-2;
    out.push_back(mlp);
  }
  return out;
}

} // namespace

TEST_CASE("metrics examples") {
  auto m = clf::metrics({1, 0, 1, 0}, {1, 0, 1, 0});
  CHECK(m.accuracy == 1.0);
  CHECK(*m.fpr == 0.0);
  m = clf::metrics({1, 0, 1, 0}, {0, 0, 1, 1});
  CHECK(m.accuracy == 0.5);
  CHECK(*m.fpr == 0.5);
  CHECK(m.fp == 1);
  CHECK(m.tn == 1);
  m = clf::metrics({1, 1, 1, 1}, {0, 1, 0, 1});
  CHECK(*m.fpr == 1.0);
  m = clf::metrics({1, 0}, {1, 1});
  CHECK_FALSE(m.fpr);
  CHECK(m.accuracy == 0.5);
}

TEST_CASE("metric identities hold on random labels") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> p(30), y(30);
    for (auto& v : p) v = static_cast<int>(rng() % 2);
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    const auto m = clf::metrics(p, y);
    CHECK(m.total() == 30);
    CHECK(m.accuracy == static_cast<double>(m.tp + m.tn) / 30.0);
    if (m.fp + m.tn > 0) CHECK(*m.fpr == static_cast<double>(m.fp) / static_cast<double>(m.fp + m.tn));
  }
}

TEST_CASE("every kind fits a separable set perfectly") {
  const auto ds = separable();
  for (const auto& c : every_kind()) {
    CAPTURE(c.algorithm_name());
    const auto model = clf::train_classifier(c, ds);
    const auto pred = model.predict(ds.features);
    CHECK(clf::metrics(pred.labels, *ds.labels).accuracy == 1.0);
    for (double s : pred.scores) CHECK((s >= 0.0 && s <= 1.0));
  }
}

TEST_CASE("labels independent of features give chance accuracy") {
  const auto train = noise(1000, 10, 1);
  const auto test = noise(1000, 10, 2);
  clf::ClassifierConfig c;
  c.seed = 3;
  const auto model = clf::train_classifier(c, train);
  const double acc = clf::metrics(model.predict(test.features).labels, *test.labels).accuracy;
  CHECK(acc >= 0.45);
  CHECK(acc <= 0.55);
}

TEST_CASE("training rejects single-class or unlabelled data") {
  auto ds = separable();
  std::fill(ds.labels->begin(), ds.labels->end(), 1);
  CHECK_THROWS_AS(clf::train_classifier({}, ds), DataError);
  ds.labels.reset();
  CHECK_THROWS(clf::train_classifier({}, ds));
}

TEST_CASE("prediction is order independent and checks dimensions") {
  const auto train = noise(200, 6, 5);
  const auto test = noise(50, 6, 6);
  for (const auto& c : every_kind()) {
    const auto model = clf::train_classifier(c, train);
    const auto a = model.predict(test.features);
    std::vector<std::size_t> perm(50);
    for (std::size_t i = 0; i < 50; ++i) perm[i] = (i * 17) % 50;
    const auto b = model.predict(test.features.select_rows(perm));
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(b.labels[i] == a.labels[perm[i]]);
      CHECK(b.scores[i] == a.scores[perm[i]]);
    }
    CHECK_THROWS_AS((void)model.predict(Matrix(2, 5)), ShapeError);
  }
}

TEST_CASE("training is deterministic in the seed") {
  const auto train = noise(200, 6, 7);
  for (const auto& c : every_kind()) {
    CHECK(clf::to_json(clf::train_classifier(c, train)) == clf::to_json(clf::train_classifier(c, train)));
  }
}

TEST_CASE("a forest of unanimous leaves scores 1 and a 0.5 score votes positive") {
  clf::RandomForest forest;
  clf::DecisionTree leaf;
  leaf.nodes.push_back({-1, 0.0, -1, -1, 1.0});
  forest.trees.assign(3, leaf);
  clf::ClassifierConfig c;
  const clf::Classifier model(c, 2, "x", forest);
  const auto p = model.predict(Matrix{{0, 1}, {1, 1}});
  CHECK(p.labels == std::vector<int>{1, 1});
  CHECK(p.scores == std::vector<double>{1.0, 1.0});

  clf::DecisionTree zero;
  zero.nodes.push_back({-1, 0.0, -1, -1, 0.0});
  clf::RandomForest split;
  split.trees = {leaf, zero};
  const clf::Classifier tie(c, 2, "x", split);
  CHECK(tie.score(std::vector<double>{0, 0}) == 0.5);
  CHECK(tie.predict(Matrix{{0, 0}}).labels[0] == 1);
}

TEST_CASE("forest score is the fraction of trees voting 1") {
  const auto train = noise(300, 8, 9);
  clf::ClassifierConfig c;
  c.n_trees = 9;
  const auto forest = clf::train_forest(train.features, *train.labels, c);
  for (std::size_t i = 0; i < 20; ++i) {
    int votes = 0;
    for (const auto& t : forest.trees) votes += t.vote(train.features.row(i));
    CHECK(clf::forest_score(forest, train.features.row(i)) == doctest::Approx(votes / 9.0));
  }
}

TEST_CASE("max_depth limits tree depth") {
  const auto train = noise(300, 8, 10);
  clf::ClassifierConfig c;
  c.max_depth = 2;
  std::vector<std::size_t> rows(300);
  std::iota(rows.begin(), rows.end(), 0);
  const auto tree = clf::train_tree(train.features, *train.labels, rows, c, 1);
  CHECK(tree.depth() <= 2);
}

// Prefix training error itself can rise for a round (a later stump may carry
// more weight than the first while being worse unweighted). What boosting
// guarantees is that the exponential loss, which bounds the training error,
// never increases.
TEST_CASE("adaboost exponential loss bounds training error and never increases") {
  std::mt19937_64 rng(13);
  std::bernoulli_distribution coin(0.5), flip(0.1);
  Matrix x(400, 8);
  std::vector<int> y(400);
  for (std::size_t i = 0; i < 400; ++i) {
    for (std::size_t j = 0; j < 8; ++j) x(i, j) = coin(rng) ? 1.0 : 0.0;
    y[i] = ((x(i, 0) + x(i, 1) + x(i, 2) >= 2.0) != flip(rng)) ? 1 : 0;
  }
  clf::ClassifierConfig c;
  c.kind = clf::Kind::adaboost_stumps;
  c.adaboost_rounds = 40;
  const auto model = clf::train_adaboost(x, y, c);
  REQUIRE(model.stumps.size() > 1);
  std::vector<double> margin(400, 0.0);
  double previous = 1.0;
  for (std::size_t t = 0; t < model.stumps.size(); ++t) {
    const auto& s = model.stumps[t];
    double exp_loss = 0.0, wrong = 0.0;
    for (std::size_t i = 0; i < 400; ++i) {
      margin[i] += s.alpha * (s.predict(x.row(i)) == 1 ? 1.0 : -1.0) * (y[i] == 1 ? 1.0 : -1.0);
      exp_loss += std::exp(-margin[i]) / 400.0;
      wrong += margin[i] <= 0.0 ? 1.0 / 400.0 : 0.0;
    }
    CAPTURE(t);
    CHECK(exp_loss <= previous + 1e-12);
    CHECK(wrong <= exp_loss + 1e-12);
    previous = exp_loss;
  }
}

TEST_CASE("classifier checkpoints round trip") {
  const auto train = noise(150, 5, 11);
  for (const auto& c : every_kind()) {
    const auto model = clf::train_classifier(c, train);
    const auto back = clf::classifier_from_json(nlohmann::json::parse(clf::to_json(model).dump()));
    CHECK(clf::to_json(back) == clf::to_json(model));
    CHECK(back.predict(train.features).scores == model.predict(train.features).scores);
  }
  CHECK_THROWS_AS(clf::classifier_from_json(nlohmann::json::parse(R"({"kind": "svm"})")), DataError);
}

TEST_CASE("classifier config round trip and validation") {
  clf::ClassifierConfig c;
  c.kind = clf::Kind::mlp;
  c.mlp_depth = 3;
  c.max_depth = 7;
  const auto back = clf::classifier_config_from_json(clf::to_json(c));
  CHECK(back.kind == clf::Kind::mlp);
  CHECK(back.mlp_depth == 3);
  CHECK(back.max_depth == 7u);
  CHECK(back.algorithm_name() == "3-L MLP-DNN");
  c.mlp_depth = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(clf::kind_from_string("svm"), ConfigError);
}

TEST_CASE("benchmark suite emits six sorted rows and is deterministic") {
  const auto train = noise(200, 6, 12);
  const auto test = noise(100, 6, 13);
  clf::ClassifierConfig defaults;
  defaults.n_trees = 10;
  defaults.adaboost_rounds = 10;
  defaults.mlp_width = 8;
  defaults.mlp_epochs = 3;
  const auto a = clf::benchmark_suite(train, test, 4, defaults);
  const auto b = clf::benchmark_suite(train, test, 4, defaults);
  REQUIRE(a.rows.size() == 6);
  std::vector<std::string> ids;
  for (const auto& r : a.rows) ids.push_back(r.b_id);
  std::sort(ids.begin(), ids.end());
  CHECK(ids == std::vector<std::string>{"B1", "B2", "B3", "B4", "B5", "B6"});
  for (std::size_t i = 1; i < 6; ++i) CHECK(a.rows[i - 1].metrics.accuracy >= a.rows[i].metrics.accuracy);
  CHECK(clf::benchmark_csv(a) == clf::benchmark_csv(b));
  CHECK(clf::benchmark_csv(a).rfind("b_id,algorithm,accuracy,fpr\n", 0) == 0);
}
