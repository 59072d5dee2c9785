#include "dro/losses.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dro/error.hpp"

namespace dro::losses {
namespace {

constexpr double kRowSumTolerance = 1e-6;

double clamped_log(double p) { return std::log(p < nn::kLogClamp ? nn::kLogClamp : p); }

void require_nonempty(const Matrix& probs) {
  if (probs.rows() == 0 || probs.cols() == 0) throw DomainError("empty probability batch");
}

std::vector<double> column_mean(const Matrix& probs) {
  std::vector<double> q(probs.cols(), 0.0);
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    auto r = probs.row(n);
    for (std::size_t k = 0; k < q.size(); ++k) q[k] += r[k];
  }
  for (double& v : q) v /= static_cast<double>(probs.rows());
  return q;
}

double entropy_unchecked(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

} // namespace

void LossWeights::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("lambda must be finite and >= 0");
  if (!std::isfinite(mu)) throw ConfigError("mu must be finite");
  if (mu < 0.0) spdlog::warn("mu = {} is negative: conditional entropy will be rewarded", mu);
}

nlohmann::json to_json(const LossBreakdown& b) {
  return {{"r_sat", b.r_sat}, {"h_y", b.h_y},       {"h_y_given_x", b.h_y_given_x},
          {"l_total", b.l_total}, {"lambda", b.lambda}, {"mu", b.mu}};
}

LossBreakdown breakdown_from_json(const nlohmann::json& doc) {
  try {
    return {doc.at("r_sat").get<double>(),   doc.at("h_y").get<double>(),
            doc.at("h_y_given_x").get<double>(), doc.at("l_total").get<double>(),
            doc.at("lambda").get<double>(),  doc.at("mu").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed loss record: ") + e.what());
  }
}

void check_distribution(std::span<const double> p) {
  if (p.empty()) throw DomainError("empty distribution");
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("probability outside [0,1]");
    s += v;
  }
  if (std::abs(s - 1.0) > kRowSumTolerance)
    throw DomainError("probabilities sum to " + std::to_string(s) + ", expected 1");
}

void check_distribution_rows(const Matrix& probs) {
  require_nonempty(probs);
  for (std::size_t n = 0; n < probs.rows(); ++n) check_distribution(probs.row(n));
}

double entropy(std::span<const double> p) {
  check_distribution(p);
  return entropy_unchecked(p);
}

double marginal_entropy(const Matrix& probs) {
  check_distribution_rows(probs);
  return entropy_unchecked(column_mean(probs));
}

double conditional_entropy(const Matrix& probs) {
  check_distribution_rows(probs);
  double h = 0.0;
  for (std::size_t n = 0; n < probs.rows(); ++n) h += entropy_unchecked(probs.row(n));
  return h / static_cast<double>(probs.rows());
}

double clustering_loss(const Matrix& probs, double mu) {
  return -(marginal_entropy(probs) - mu * conditional_entropy(probs));
}

double sat_penalty(const Matrix& reference, const Matrix& perturbed, std::size_t* clamped) {
  const double value = sat_objective(reference, perturbed).value;
  std::size_t c = 0;
  for (std::size_t i = 0; i < reference.size(); ++i)
    if (reference.values()[i] > 0.0 && perturbed.values()[i] < nn::kLogClamp) ++c;
  if (c > 0) spdlog::warn("sat_penalty: {} perturbed probabilities clamped at {}", c, nn::kLogClamp);
  if (clamped != nullptr) *clamped = c;
  return value;
}

LossBreakdown total_loss(double r_sat, double h_y, double h_y_given_x, const LossWeights& weights) {
  if (!std::isfinite(r_sat) || !std::isfinite(h_y) || !std::isfinite(h_y_given_x))
    throw DomainError("loss components must be finite");
  LossBreakdown b;
  b.r_sat = r_sat;
  b.h_y = h_y;
  b.h_y_given_x = h_y_given_x;
  b.lambda = weights.lambda;
  b.mu = weights.mu;
  b.l_total = r_sat - weights.lambda * (h_y - weights.mu * h_y_given_x);
  return b;
}

nn::LossValue marginal_entropy_loss(const Matrix& probs) {
  check_distribution_rows(probs);
  const auto q = column_mean(probs);
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  nn::LossValue out{entropy_unchecked(q), Matrix(probs.rows(), probs.cols())};
  for (std::size_t k = 0; k < q.size(); ++k) {
    const double g = -(clamped_log(q[k]) + 1.0) * inv_n;
    for (std::size_t n = 0; n < probs.rows(); ++n) out.d_probs(n, k) = g;
  }
  return out;
}

nn::LossValue conditional_entropy_loss(const Matrix& probs) {
  check_distribution_rows(probs);
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  nn::LossValue out{0.0, Matrix(probs.rows(), probs.cols())};
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    auto r = probs.row(n);
    out.value += entropy_unchecked(r);
    for (std::size_t k = 0; k < r.size(); ++k) out.d_probs(n, k) = -(clamped_log(r[k]) + 1.0) * inv_n;
  }
  out.value *= inv_n;
  return out;
}

nn::LossValue clustering_objective(const Matrix& probs, double mu) {
  auto hy = marginal_entropy_loss(probs);
  auto hyx = conditional_entropy_loss(probs);
  nn::LossValue out{-(hy.value - mu * hyx.value), Matrix(probs.rows(), probs.cols())};
  auto d = out.d_probs.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = -hy.d_probs.values()[i] + mu * hyx.d_probs.values()[i];
  return out;
}

nn::LossValue sat_objective(const Matrix& reference, const Matrix& perturbed) {
  if (reference.rows() != perturbed.rows() || reference.cols() != perturbed.cols())
    throw ShapeError("reference and perturbed posteriors differ in shape");
  check_distribution_rows(reference);
  check_distribution_rows(perturbed);
  const double inv_n = 1.0 / static_cast<double>(reference.rows());
  nn::LossValue out{0.0, Matrix(reference.rows(), reference.cols())};
  for (std::size_t n = 0; n < reference.rows(); ++n) {
    double row = 0.0;
    for (std::size_t k = 0; k < reference.cols(); ++k) {
      const double r = reference(n, k);
      const double p = perturbed(n, k);
      if (r == 0.0) continue;
      row -= r * clamped_log(p);
      out.d_probs(n, k) = p >= nn::kLogClamp ? -r / p * inv_n : 0.0;
    }
    out.value += row;
  }
  out.value *= inv_n;
  return out;
}

nn::LossValue cross_entropy_objective(const Matrix& probs, const Matrix& targets) {
  return sat_objective(targets, probs);
}

ObjectiveResult total_objective(const nn::MlpParams& params, const Matrix& clean,
                                const Matrix& perturbed, const LossWeights& weights) {
  return total_objective(params, nn::forward_tape(params, clean), perturbed, weights);
}

ObjectiveResult total_objective(const nn::MlpParams& params, const nn::ForwardTape& clean_tape,
                                const Matrix& perturbed, const LossWeights& weights) {
  if (perturbed.rows() != clean_tape.probs.rows())
    throw ShapeError("perturbed batch differs in size from clean batch");
  const Matrix& p_clean = clean_tape.probs;
  nn::ForwardTape pert_tape = nn::forward_tape(params, perturbed);

  ObjectiveResult out;
  nn::LossValue sat = sat_objective(p_clean, pert_tape.probs);
  nn::LossValue hy = marginal_entropy_loss(p_clean);
  nn::LossValue hyx = conditional_entropy_loss(p_clean);
  for (std::size_t i = 0; i < p_clean.size(); ++i)
    if (p_clean.values()[i] > 0.0 && pert_tape.probs.values()[i] < nn::kLogClamp) ++out.clamped;

  out.breakdown = total_loss(sat.value, hy.value, hyx.value, weights);

  // d l_total / dP_clean = -lambda * (dH(Y) - mu dH(Y|X)); the SAT reference is a constant.
  Matrix d_clean(p_clean.rows(), p_clean.cols());
  auto d = d_clean.values();
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] = -weights.lambda * (hy.d_probs.values()[i] - weights.mu * hyx.d_probs.values()[i]);

  out.grads = nn::backward(params, pert_tape, sat.d_probs);
  if (weights.lambda != 0.0) out.grads += nn::backward(params, clean_tape, d_clean);
  out.clean_probs = p_clean;
  return out;
}

} // namespace dro::losses
