#include <benchmark/benchmark.h>

#include <random>

#include "dro/classifiers.hpp"
#include "dro/data.hpp"
#include "dro/losses.hpp"
#include "dro/nn.hpp"
#include "dro/router.hpp"
#include "dro/vat.hpp"

using namespace dro;

namespace {

Matrix binary_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution bit(0.3);
  Matrix x(n, d);
  for (auto& v : x.values()) v = bit(rng) ? 1.0 : 0.0;
  return x;
}

nn::MlpParams router_net(std::size_t d) {
  const std::size_t widths[] = {d, 256, 256, 2};
  return nn::init_params(widths, 3);
}

void BM_Forward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto p = router_net(d);
  const Matrix x = binary_batch(256, d, 1);
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(p, x));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_Forward)->Arg(40)->Arg(273);

void BM_VatPerturbations(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto p = router_net(d);
  const Matrix x = binary_batch(256, d, 2);
  const vat::VatConfig c;
  for (auto _ : state) benchmark::DoNotOptimize(vat::perturbations(p, x, c, 9));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_VatPerturbations)->Arg(40)->Arg(273);

// One optimizer step on the full objective, perturbation included.
void BM_TrainingStep(benchmark::State& state) {
  const std::size_t d = 40;
  auto p = router_net(d);
  const Matrix x = binary_batch(256, d, 3);
  const vat::VatConfig c;
  nn::OptimizerState opt({}, p);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto tape = nn::forward_tape(p, x);
    const auto r = vat::perturbations(p, x, c, ++seed, &tape.probs).r;
    Matrix shifted = x;
    for (std::size_t i = 0; i < x.size(); ++i) shifted.values()[i] += r.values()[i];
    const auto obj = losses::total_objective(p, tape, shifted, {0.4, 4.0});
    nn::optimizer_step(p, obj.grads, opt);
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_TrainingStep);

void BM_ForestPredict(benchmark::State& state) {
  data::SyntheticSpec spec;
  spec.n_samples = 1000;
  const auto syn = data::generate_synthetic(spec);
  clf::ClassifierConfig c;
  const auto model = clf::train_classifier(c, syn.dataset);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(syn.dataset.features));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_ForestPredict);

} // namespace

BENCHMARK_MAIN();
