#pragma once

#include <cstddef>
#include <span>

#include <nlohmann/json_fwd.hpp>

#include "dro/matrix.hpp"
#include "dro/nn.hpp"

namespace dro::losses {

// Weights of the information-maximization objective. lambda trades the
// augmentation penalty against mutual information; mu scales the
// conditional-entropy term inside the mutual information.
struct LossWeights {
  double lambda = 0.4;
  double mu = 4.0;

  // lambda >= 0 and both finite. A negative mu is legal but logged.
  void validate() const;
};

// All quantities in nats.
struct LossBreakdown {
  double r_sat = 0.0;
  double h_y = 0.0;
  double h_y_given_x = 0.0;
  double l_total = 0.0;
  double lambda = 0.0;
  double mu = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

nlohmann::json to_json(const LossBreakdown& b);
LossBreakdown breakdown_from_json(const nlohmann::json& doc);

// Throws DomainError unless every row lies in [0,1] and sums to 1 within 1e-6.
void check_distribution(std::span<const double> p);
void check_distribution_rows(const Matrix& probs);

// -sum p ln p with 0 ln 0 = 0.
double entropy(std::span<const double> p);

// Entropy of the column-mean distribution.
double marginal_entropy(const Matrix& probs);

// Mean of per-row entropies.
double conditional_entropy(const Matrix& probs);

// -(H(Y) - mu H(Y|X)).
double clustering_loss(const Matrix& probs, double mu);

// Batch-averaged cross-entropy -1/N sum_n sum_k ref[n,k] ln pert[n,k].
// Probabilities below nn::kLogClamp are clamped; the number of clamped
// entries with positive reference mass is written to *clamped if given.
double sat_penalty(const Matrix& reference, const Matrix& perturbed, std::size_t* clamped = nullptr);

// l_total = r_sat - lambda * (h_y - mu * h_y_given_x).
LossBreakdown total_loss(double r_sat, double h_y, double h_y_given_x, const LossWeights& weights);

// Differentiable forms: value plus dL/dP for use with nn::backward.
nn::LossValue marginal_entropy_loss(const Matrix& probs);
nn::LossValue conditional_entropy_loss(const Matrix& probs);
nn::LossValue clustering_objective(const Matrix& probs, double mu);
// The reference matrix is a constant; only `perturbed` receives gradient.
nn::LossValue sat_objective(const Matrix& reference, const Matrix& perturbed);
// Mean cross-entropy against fixed target distributions (e.g. one-hot labels).
nn::LossValue cross_entropy_objective(const Matrix& probs, const Matrix& targets);

// The full training objective for one batch: posteriors on the clean batch
// supply both the stop-gradient SAT reference and the entropy terms; the
// perturbed batch supplies the SAT prediction.
struct ObjectiveResult {
  LossBreakdown breakdown;
  nn::GradientSet grads;
  Matrix clean_probs;
  std::size_t clamped = 0;
};

ObjectiveResult total_objective(const nn::MlpParams& params, const Matrix& clean,
                                const Matrix& perturbed, const LossWeights& weights);

// Same, reusing an existing forward tape of the clean batch.
ObjectiveResult total_objective(const nn::MlpParams& params, const nn::ForwardTape& clean_tape,
                                const Matrix& perturbed, const LossWeights& weights);

} // namespace dro::losses
