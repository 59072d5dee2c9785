#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dro/matrix.hpp"
#include "dro/nn.hpp"

// Virtual-adversarial self-augmentation: T(x) = x + r with r chosen (by power
// iteration on the input gradient) to maximally disturb the network's own
// posterior inside an L2 ball of radius epsilon.
namespace dro::vat {

enum class Mode { adversarial, random };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& name);

struct VatConfig {
  double epsilon = 1.0;
  // Probe scale for the finite-difference step along the unit direction.
  double xi = 1e-6;
  int power_iterations = 1;
  Mode mode = Mode::adversarial;
  // Clip augmented inputs to [0,1]. Breaks ||T(x) - x|| == epsilon.
  bool clip = false;

  void validate() const;
};

struct BatchPerturbation {
  Matrix r;
  // Rows whose input gradient vanished and kept the random start direction.
  std::size_t fallbacks = 0;
};

// Single-sample perturbation; the random start is drawn from Rng(seed).
std::vector<double> perturbation(const nn::MlpParams& params, std::span<const double> x,
                                 const VatConfig& config, std::uint64_t seed);

// Row i draws its random start from Rng(derive_seed(seed, {i})). If
// clean_probs is given it is used as the fixed reference posterior.
BatchPerturbation perturbations(const nn::MlpParams& params, const Matrix& inputs,
                                const VatConfig& config, std::uint64_t seed,
                                const Matrix* clean_probs = nullptr);

std::vector<double> augment(std::span<const double> x, std::span<const double> r, bool clip = false);
Matrix augment(const Matrix& inputs, const Matrix& r, bool clip = false);

} // namespace dro::vat
