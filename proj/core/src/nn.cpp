#include "dro/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "dro/error.hpp"
#include "dro/rng.hpp"

namespace dro {

std::vector<double> random_unit_vector(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  // A zero draw has probability zero but would break the normalization.
  while (norm == 0.0) {
    for (auto& x : v) x = normal(rng);
    norm = l2_norm(v);
  }
  for (auto& x : v) x /= norm;
  return v;
}

} // namespace dro

namespace dro::nn {
namespace {

void affine(const Matrix& in, const Layer& layer, Matrix& out) {
  const std::size_t d_in = layer.d_in();
  const std::size_t d_out = layer.d_out();
  out = Matrix(in.rows(), d_out);
  for (std::size_t n = 0; n < in.rows(); ++n) {
    double* o = out.row(n).data();
    std::copy(layer.bias.begin(), layer.bias.end(), o);
    const double* x = in.row(n).data();
    for (std::size_t k = 0; k < d_in; ++k) {
      const double xk = x[k];
      if (xk == 0.0) continue;
      const double* w = layer.weights.row(k).data();
      for (std::size_t h = 0; h < d_out; ++h) o[h] += xk * w[h];
    }
  }
}

void relu_inplace(Matrix& m) {
  for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
}

void softmax_rows(Matrix& m) {
  for (std::size_t n = 0; n < m.rows(); ++n) {
    auto r = m.row(n);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
}

void check_finite(const Matrix& m, std::size_t layer, const char* what) {
  if (!m.all_finite())
    throw DomainError("non-finite " + std::string(what) + " in layer " + std::to_string(layer));
}

// dL/dZ for the softmax head from dL/dP.
Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs) {
  Matrix dz(probs.rows(), probs.cols());
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    auto p = probs.row(n);
    auto g = d_probs.row(n);
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) s += g[k] * p[k];
    auto out = dz.row(n);
    for (std::size_t k = 0; k < p.size(); ++k) out[k] = p[k] * (g[k] - s);
  }
  return dz;
}

// dA = dZ W^T, row by row.
Matrix propagate_to_inputs(const Matrix& dz, const Layer& layer) {
  Matrix da(dz.rows(), layer.d_in());
  for (std::size_t n = 0; n < dz.rows(); ++n) {
    const double* g = dz.row(n).data();
    for (std::size_t k = 0; k < layer.d_in(); ++k) {
      const double* w = layer.weights.row(k).data();
      double s = 0.0;
      for (std::size_t h = 0; h < layer.d_out(); ++h) s += g[h] * w[h];
      da(n, k) = s;
    }
  }
  return da;
}

void relu_mask(Matrix& da, const Matrix& activation) {
  auto d = da.values();
  auto a = activation.values();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!(a[i] > 0.0)) d[i] = 0.0;
}

Matrix backward_impl(const MlpParams& params, const ForwardTape& tape, const Matrix& d_probs,
                     GradientSet* grads, bool want_inputs) {
  if (d_probs.rows() != tape.probs.rows() || d_probs.cols() != tape.probs.cols())
    throw ShapeError("loss gradient shape does not match network output");
  Matrix dz = softmax_backward(tape.probs, d_probs);
  Matrix d_inputs;
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const Layer& layer = params.layers[li];
    const Matrix& a = tape.activations[li];
    if (grads != nullptr) {
      Layer& g = grads->layers[li];
      for (std::size_t n = 0; n < a.rows(); ++n) {
        const double* x = a.row(n).data();
        const double* d = dz.row(n).data();
        for (std::size_t k = 0; k < layer.d_in(); ++k) {
          const double xk = x[k];
          if (xk == 0.0) continue;
          double* gw = g.weights.row(k).data();
          for (std::size_t h = 0; h < layer.d_out(); ++h) gw[h] += xk * d[h];
        }
        for (std::size_t h = 0; h < layer.d_out(); ++h) g.bias[h] += d[h];
      }
      check_finite(g.weights, li, "weight gradient");
    }
    if (li == 0) {
      if (want_inputs) d_inputs = propagate_to_inputs(dz, layer);
      break;
    }
    Matrix da = propagate_to_inputs(dz, layer);
    relu_mask(da, a);
    check_finite(da, li, "activation gradient");
    dz = std::move(da);
  }
  return d_inputs;
}

} // namespace

std::string to_string(Activation a) {
  switch (a) {
  case Activation::relu:
    return "relu";
  }
  return "relu";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + name + "'");
}

std::size_t MlpParams::n_inputs() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  return layers.front().d_in();
}

std::size_t MlpParams::n_outputs() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  return layers.back().d_out();
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

void MlpParams::validate() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.d_in() == 0 || l.d_out() == 0)
      throw ShapeError("layer " + std::to_string(i) + " has a zero dimension");
    if (l.bias.size() != l.d_out())
      throw ShapeError("layer " + std::to_string(i) + " bias length does not match d_out");
    if (i + 1 < layers.size() && l.d_out() != layers[i + 1].d_in())
      throw ShapeError("layer " + std::to_string(i) + " d_out does not chain into layer " +
                       std::to_string(i + 1));
    if (!l.weights.all_finite() || !all_finite(l.bias))
      throw DomainError("layer " + std::to_string(i) + " holds non-finite parameters");
  }
}

MlpParams init_params(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ShapeError("need at least input and output widths");
  Rng rng(seed);
  MlpParams params;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t d_in = widths[i];
    const std::size_t d_out = widths[i + 1];
    if (d_in == 0 || d_out == 0) throw ShapeError("layer widths must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Layer layer{Matrix(d_in, d_out), std::vector<double>(d_out, 0.0)};
    for (double& w : layer.weights.values()) w = dist(rng);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

void center_biases(MlpParams& params, const Matrix& inputs) {
  if (inputs.rows() == 0) throw ShapeError("cannot center biases on an empty batch");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const ForwardTape tape = forward_tape(params, inputs);
    const Matrix& act = tape.activations[l];
    Layer& layer = params.layers[l];
    std::vector<double> mean(layer.d_in(), 0.0);
    for (std::size_t n = 0; n < act.rows(); ++n)
      for (std::size_t i = 0; i < act.cols(); ++i) mean[i] += act(n, i);
    for (double& m : mean) m /= static_cast<double>(act.rows());
    for (std::size_t j = 0; j < layer.d_out(); ++j) {
      double z = 0.0;
      for (std::size_t i = 0; i < layer.d_in(); ++i) z += mean[i] * layer.weights(i, j);
      layer.bias[j] = -z;
    }
  }
}

GradientSet GradientSet::zeros_like(const MlpParams& params) {
  GradientSet g;
  g.layers.reserve(params.layers.size());
  for (const auto& l : params.layers)
    g.layers.push_back(Layer{Matrix(l.d_in(), l.d_out()), std::vector<double>(l.d_out(), 0.0)});
  return g;
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
  if (other.layers.size() != layers.size()) throw ShapeError("gradient sets differ in depth");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto a = layers[i].weights.values();
    auto b = other.layers[i].weights.values();
    if (a.size() != b.size() || layers[i].bias.size() != other.layers[i].bias.size())
      throw ShapeError("gradient sets differ in layer " + std::to_string(i));
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
    for (std::size_t j = 0; j < layers[i].bias.size(); ++j) layers[i].bias[j] += other.layers[i].bias[j];
  }
  return *this;
}

bool GradientSet::all_finite() const {
  for (const auto& l : layers)
    if (!l.weights.all_finite() || !dro::all_finite(l.bias)) return false;
  return true;
}

bool GradientSet::congruent_with(const MlpParams& params) const {
  if (layers.size() != params.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].d_in() != params.layers[i].d_in() || layers[i].d_out() != params.layers[i].d_out() ||
        layers[i].bias.size() != params.layers[i].bias.size())
      return false;
  }
  return true;
}

ForwardTape forward_tape(const MlpParams& params, const Matrix& inputs) {
  if (params.layers.empty()) throw ShapeError("network has no layers");
  if (inputs.cols() != params.n_inputs())
    throw ShapeError("input has " + std::to_string(inputs.cols()) + " columns, network expects " +
                     std::to_string(params.n_inputs()));
  if (!inputs.all_finite()) throw DomainError("non-finite network input");

  ForwardTape tape;
  tape.activations.reserve(params.layers.size());
  tape.activations.push_back(inputs);
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    Matrix z;
    affine(tape.activations.back(), params.layers[li], z);
    check_finite(z, li, "pre-activation");
    if (li + 1 < params.layers.size()) {
      relu_inplace(z);
      tape.activations.push_back(std::move(z));
    } else {
      softmax_rows(z);
      tape.probs = std::move(z);
    }
  }
  return tape;
}

Matrix forward(const MlpParams& params, const Matrix& inputs) {
  return forward_tape(params, inputs).probs;
}

std::vector<double> forward(const MlpParams& params, std::span<const double> x) {
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.row(0).begin());
  Matrix p = forward(params, in);
  return {p.row(0).begin(), p.row(0).end()};
}

GradientSet backward(const MlpParams& params, const ForwardTape& tape, const Matrix& d_probs,
                     Matrix* d_inputs) {
  GradientSet grads = GradientSet::zeros_like(params);
  Matrix di = backward_impl(params, tape, d_probs, &grads, d_inputs != nullptr);
  if (d_inputs != nullptr) *d_inputs = std::move(di);
  return grads;
}

Matrix backward_inputs(const MlpParams& params, const ForwardTape& tape, const Matrix& d_probs) {
  return backward_impl(params, tape, d_probs, nullptr, true);
}

ParamGradients param_gradients(const MlpParams& params, const Matrix& inputs,
                               const ProbabilityLoss& loss) {
  ForwardTape tape = forward_tape(params, inputs);
  LossValue lv = loss(tape.probs);
  if (!std::isfinite(lv.value)) throw DomainError("loss value is not finite");
  return {lv.value, backward(params, tape, lv.d_probs)};
}

std::vector<double> input_gradient(const MlpParams& params, std::span<const double> x,
                                   std::span<const double> reference) {
  if (reference.size() != params.n_outputs())
    throw ShapeError("reference distribution has the wrong number of classes");
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.row(0).begin());
  ForwardTape tape = forward_tape(params, in);
  Matrix g(1, reference.size());
  for (std::size_t k = 0; k < reference.size(); ++k) {
    const double p = tape.probs(0, k);
    g(0, k) = p >= kLogClamp ? -reference[k] / p : 0.0;
  }
  Matrix dx = backward_inputs(params, tape, g);
  return {dx.row(0).begin(), dx.row(0).end()};
}

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

void OptimizerSettings::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

OptimizerState::OptimizerState(OptimizerSettings s, const MlpParams& params)
    : settings(s), first_moment(GradientSet::zeros_like(params)),
      second_moment(GradientSet::zeros_like(params)) {
  settings.validate();
}

void optimizer_step(MlpParams& params, const GradientSet& grads, OptimizerState& state) {
  if (!grads.congruent_with(params) || !state.first_moment.congruent_with(params))
    throw ShapeError("gradient shapes do not match parameters");
  if (!grads.all_finite()) throw DomainError("non-finite gradient passed to optimizer");
  ++state.step;
  const auto& s = state.settings;

  auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> m,
                    std::span<double> v) {
    if (s.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= s.learning_rate * g[i];
      return;
    }
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(s.beta1, t);
    const double c2 = 1.0 - std::pow(s.beta2, t);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
    }
  };

  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    Layer& p = params.layers[i];
    const Layer& g = grads.layers[i];
    Layer& m = state.first_moment.layers[i];
    Layer& v = state.second_moment.layers[i];
    update(p.weights.values(), g.weights.values(), m.weights.values(), v.weights.values());
    update(p.bias, g.bias, m.bias, v.bias);
    if (!p.weights.all_finite() || !all_finite(p.bias))
      throw DomainError("optimizer produced non-finite parameters in layer " + std::to_string(i));
  }
}

nlohmann::json to_json(const MlpParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.layers) {
    layers.push_back({{"d_in", l.d_in()},
                      {"d_out", l.d_out()},
                      {"weights", std::vector<double>(l.weights.values().begin(), l.weights.values().end())},
                      {"bias", l.bias}});
  }
  return {{"activation", to_string(params.hidden_activation)}, {"layers", std::move(layers)}};
}

MlpParams params_from_json(const nlohmann::json& doc) {
  try {
    MlpParams params;
    params.hidden_activation = activation_from_string(doc.at("activation").get<std::string>());
    for (const auto& jl : doc.at("layers")) {
      const auto d_in = jl.at("d_in").get<std::size_t>();
      const auto d_out = jl.at("d_out").get<std::size_t>();
      auto w = jl.at("weights").get<std::vector<double>>();
      if (w.size() != d_in * d_out) throw DataError("weight array length does not match layer shape");
      Layer layer{Matrix(d_in, d_out), jl.at("bias").get<std::vector<double>>()};
      std::copy(w.begin(), w.end(), layer.weights.values().begin());
      params.layers.push_back(std::move(layer));
    }
    params.validate();
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed network checkpoint: ") + e.what());
  }
}

} // namespace dro::nn
