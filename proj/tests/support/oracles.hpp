#pragma once

// Reference implementations written independently of the library, used as
// test oracles. Everything here is deliberately naive.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dro/matrix.hpp"
#include "dro/nn.hpp"

namespace oracle {

using dro::Matrix;

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  std::vector<double> p(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) s += p[k] = std::exp(z[k] - m);
  for (auto& v : p) v /= s;
  return p;
}

// Plain loop forward pass.
inline std::vector<double> forward(const dro::nn::MlpParams& params, const std::vector<double>& x) {
  std::vector<double> a = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    std::vector<double> z(layer.d_out(), 0.0);
    for (std::size_t j = 0; j < layer.d_out(); ++j) {
      z[j] = layer.bias[j];
      for (std::size_t i = 0; i < layer.d_in(); ++i) z[j] += a[i] * layer.weights(i, j);
    }
    if (l + 1 == params.layers.size()) return softmax(z);
    for (auto& v : z) v = std::max(0.0, v);
    a = std::move(z);
  }
  return a;
}

inline Matrix forward(const dro::nn::MlpParams& params, const Matrix& x) {
  Matrix out(x.rows(), params.layers.back().d_out());
  for (std::size_t n = 0; n < x.rows(); ++n) {
    auto row = forward(params, std::vector<double>(x.row(n).begin(), x.row(n).end()));
    std::copy(row.begin(), row.end(), out.row(n).begin());
  }
  return out;
}

// Smallest |pre-activation| of any hidden unit over the rows of x; finite
// differences are only meaningful away from the ReLU kink.
inline double min_abs_preactivation(const dro::nn::MlpParams& params, const Matrix& x) {
  double best = INFINITY;
  for (std::size_t n = 0; n < x.rows(); ++n) {
    std::vector<double> a(x.row(n).begin(), x.row(n).end());
    for (std::size_t l = 0; l + 1 < params.layers.size(); ++l) {
      const auto& layer = params.layers[l];
      std::vector<double> z(layer.d_out(), 0.0);
      for (std::size_t j = 0; j < layer.d_out(); ++j) {
        z[j] = layer.bias[j];
        for (std::size_t i = 0; i < layer.d_in(); ++i) z[j] += a[i] * layer.weights(i, j);
        best = std::min(best, std::abs(z[j]));
        z[j] = std::max(0.0, z[j]);
      }
      a = std::move(z);
    }
  }
  return best;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline std::vector<double> row(const Matrix& m, std::size_t r) { return {m.row(r).begin(), m.row(r).end()}; }

inline double marginal_entropy(const Matrix& p) {
  std::vector<double> mean(p.cols(), 0.0);
  for (std::size_t n = 0; n < p.rows(); ++n)
    for (std::size_t k = 0; k < p.cols(); ++k) mean[k] += p(n, k) / static_cast<double>(p.rows());
  return entropy(mean);
}

inline double conditional_entropy(const Matrix& p) {
  double s = 0.0;
  for (std::size_t n = 0; n < p.rows(); ++n) s += entropy(row(p, n));
  return s / static_cast<double>(p.rows());
}

inline double cross_entropy(const Matrix& ref, const Matrix& q) {
  double s = 0.0;
  for (std::size_t n = 0; n < ref.rows(); ++n)
    for (std::size_t k = 0; k < ref.cols(); ++k) s -= ref(n, k) * std::log(std::max(q(n, k), 1e-12));
  return s / static_cast<double>(ref.rows());
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Max relative error of `analytic` against central differences of f over
// every weight and bias.
inline double param_fd_error(dro::nn::MlpParams params, const dro::nn::GradientSet& analytic,
                             const std::function<double(const dro::nn::MlpParams&)>& f, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    auto probe = [&](double& slot, double grad) {
      const double keep = slot;
      slot = keep + h;
      const double up = f(params);
      slot = keep - h;
      const double down = f(params);
      slot = keep;
      worst = std::max(worst, relative_error(grad, (up - down) / (2.0 * h)));
    };
    for (std::size_t i = 0; i < layer.weights.size(); ++i)
      probe(layer.weights.values()[i], analytic.layers[l].weights.values()[i]);
    for (std::size_t j = 0; j < layer.bias.size(); ++j) probe(layer.bias[j], analytic.layers[l].bias[j]);
  }
  return worst;
}

inline double vector_fd_error(std::vector<double> x, const std::vector<double>& analytic,
                              const std::function<double(const std::vector<double>&)>& f, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

// Random probability matrix; some rows are pushed towards one-hot so the
// boundary of the simplex is exercised too.
inline Matrix random_probabilities(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::exponential_distribution<double> e(1.0);
  Matrix p(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    const double sharp = u(rng) < 0.2 ? 25.0 : 1.0;
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += p(r, c) = std::pow(e(rng), sharp);
    for (std::size_t c = 0; c < k; ++c) p(r, c) /= s;
  }
  return p;
}

inline Matrix random_matrix(std::size_t n, std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(n, d);
  for (auto& v : m.values()) v = g(rng);
  return m;
}

} // namespace oracle
