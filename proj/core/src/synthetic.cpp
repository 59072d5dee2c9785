#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "dro/data.hpp"
#include "dro/error.hpp"
#include "dro/rng.hpp"

namespace dro::data {
namespace {

bool in_unit(double p) { return p >= 0.0 && p <= 1.0; }

} // namespace

void SyntheticSpec::validate() const {
  if (n_samples == 0) throw ConfigError("synthetic n_samples must be positive");
  if (signal_features == 0) throw ConfigError("synthetic spec needs at least one signal feature");
  if (signal_features > n_features) throw ConfigError("signal_features exceeds n_features");
  if (!in_unit(ambiguous_fraction)) throw ConfigError("ambiguous_fraction must lie in [0,1]");
  if (!in_unit(flip_noise) || !in_unit(signal_density) || !in_unit(background_density) ||
      !in_unit(ambiguous_density))
    throw ConfigError("synthetic rates must lie in [0,1]");
}

int SyntheticData::rule_label(std::span<const double> row) const {
  double s = 0.0;
  for (std::size_t j = 0; j < rule_weights.size(); ++j) s += rule_weights[j] * row[j];
  return s > rule_threshold ? 1 : 0;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {0}));
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticData out;
  out.rule_weights.resize(spec.signal_features);
  for (double& w : out.rule_weights) w = normal(rng);
  // Half the total weight: complementing every signal bit mirrors the score
  // around this threshold, so the rule is balanced under signal_density 0.5.
  out.rule_threshold = 0.5 * std::accumulate(out.rule_weights.begin(), out.rule_weights.end(), 0.0);

  const auto n_ambiguous = static_cast<std::size_t>(
      std::llround(spec.ambiguous_fraction * static_cast<double>(spec.n_samples)));
  out.ambiguous.assign(spec.n_samples, 0);
  std::fill(out.ambiguous.begin(), out.ambiguous.begin() + static_cast<std::ptrdiff_t>(n_ambiguous), 1);
  std::shuffle(out.ambiguous.begin(), out.ambiguous.end(), rng);

  Dataset& ds = out.dataset;
  ds.features = Matrix(spec.n_samples, spec.n_features);
  ds.labels.emplace(spec.n_samples, 0);
  for (std::size_t j = 0; j < spec.n_features; ++j) {
    char name[16];
    std::snprintf(name, sizeof name, "f%03zu", j);
    ds.columns.emplace_back(name);
  }

  std::bernoulli_distribution signal(spec.signal_density);
  std::bernoulli_distribution background(spec.background_density);
  std::bernoulli_distribution shared(spec.ambiguous_density);
  std::bernoulli_distribution flip(spec.flip_noise);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%05zu", i);
    ds.ids.emplace_back(id);
    auto row = ds.features.row(i);
    if (out.ambiguous[i] != 0) {
      for (double& v : row) v = shared(rng) ? 1.0 : 0.0;
      (*ds.labels)[i] = coin(rng) ? 1 : 0;
    } else {
      for (std::size_t j = 0; j < spec.n_features; ++j)
        row[j] = (j < spec.signal_features ? signal(rng) : background(rng)) ? 1.0 : 0.0;
      int y = out.rule_label(row);
      if (flip(rng)) y = 1 - y;
      (*ds.labels)[i] = y;
    }
  }
  return out;
}

} // namespace dro::data
