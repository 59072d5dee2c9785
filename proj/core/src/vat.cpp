#include "dro/vat.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "dro/error.hpp"
#include "dro/rng.hpp"

namespace dro::vat {
namespace {

// Shared core: row i of `inputs` starts from Rng(seeds[i]).
BatchPerturbation run(const nn::MlpParams& params, const Matrix& inputs, const VatConfig& config,
                      std::span<const std::uint64_t> seeds, const Matrix* clean_probs) {
  config.validate();
  if (inputs.cols() != params.n_inputs()) throw ShapeError("input width does not match network");
  if (!inputs.all_finite()) throw DomainError("non-finite input to perturbation");

  const std::size_t n = inputs.rows();
  const std::size_t dim = inputs.cols();
  Matrix start(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seeds[i]);
    auto d = random_unit_vector(dim, rng);
    std::copy(d.begin(), d.end(), start.row(i).begin());
  }

  BatchPerturbation out{start, 0};
  if (config.mode == Mode::adversarial) {
    Matrix reference = clean_probs != nullptr ? *clean_probs : nn::forward(params, inputs);
    if (reference.rows() != n || reference.cols() != params.n_outputs())
      throw ShapeError("reference posterior shape does not match batch");
    std::vector<bool> fell_back(n, false);
    for (int it = 0; it < config.power_iterations; ++it) {
      Matrix probe = inputs;
      for (std::size_t i = 0; i < probe.size(); ++i) probe.values()[i] += config.xi * out.r.values()[i];
      nn::ForwardTape tape = nn::forward_tape(params, probe);
      Matrix g(n, reference.cols());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double p = tape.probs.values()[i];
        g.values()[i] = p >= nn::kLogClamp ? -reference.values()[i] / p : 0.0;
      }
      Matrix grad = nn::backward_inputs(params, tape, g);
      for (std::size_t i = 0; i < n; ++i) {
        if (fell_back[i]) continue;
        auto gr = grad.row(i);
        const double norm = l2_norm(gr);
        auto d = out.r.row(i);
        if (norm > 0.0 && std::isfinite(norm)) {
          for (std::size_t k = 0; k < dim; ++k) d[k] = gr[k] / norm;
        } else {
          auto s = start.row(i);
          std::copy(s.begin(), s.end(), d.begin());
          fell_back[i] = true;
          ++out.fallbacks;
        }
      }
    }
    if (out.fallbacks > 0)
      spdlog::debug("vat: {} of {} rows had a vanishing input gradient, using random direction",
                    out.fallbacks, n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto d = out.r.row(i);
    // Renormalize so the radius holds to rounding regardless of the path taken.
    const double norm = l2_norm(d);
    for (double& v : d) v = v / norm * config.epsilon;
  }
  return out;
}

} // namespace

std::string to_string(Mode m) { return m == Mode::random ? "random" : "adversarial"; }

Mode mode_from_string(const std::string& name) {
  if (name == "adversarial") return Mode::adversarial;
  if (name == "random") return Mode::random;
  throw ConfigError("unknown vat mode '" + name + "'");
}

void VatConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("vat.epsilon must be > 0");
  if (!(xi > 0.0) || !std::isfinite(xi)) throw ConfigError("vat.xi must be > 0");
  if (power_iterations < 1) throw ConfigError("vat.power_iterations must be >= 1");
}

std::vector<double> perturbation(const nn::MlpParams& params, std::span<const double> x,
                                 const VatConfig& config, std::uint64_t seed) {
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.row(0).begin());
  const std::uint64_t seeds[] = {seed};
  auto out = run(params, in, config, seeds, nullptr);
  if (out.fallbacks > 0) spdlog::info("vat: vanishing input gradient, using random direction");
  return {out.r.row(0).begin(), out.r.row(0).end()};
}

BatchPerturbation perturbations(const nn::MlpParams& params, const Matrix& inputs,
                                const VatConfig& config, std::uint64_t seed, const Matrix* clean_probs) {
  std::vector<std::uint64_t> seeds(inputs.rows());
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(seed, {i});
  return run(params, inputs, config, seeds, clean_probs);
}

std::vector<double> augment(std::span<const double> x, std::span<const double> r, bool clip) {
  if (x.size() != r.size()) throw ShapeError("perturbation length does not match sample");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] + r[i];
    if (clip) out[i] = std::clamp(out[i], 0.0, 1.0);
  }
  return out;
}

Matrix augment(const Matrix& inputs, const Matrix& r, bool clip) {
  if (inputs.rows() != r.rows() || inputs.cols() != r.cols())
    throw ShapeError("perturbation matrix does not match batch");
  Matrix out = inputs;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values()[i] += r.values()[i];
    if (clip) out.values()[i] = std::clamp(out.values()[i], 0.0, 1.0);
  }
  return out;
}

} // namespace dro::vat
