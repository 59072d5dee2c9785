#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dro/matrix.hpp"

namespace dro::nn {

// Floor applied to probabilities inside every logarithm of a cross-entropy.
inline constexpr double kLogClamp = 1e-12;

enum class Activation { relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Affine layer y = x W + b with W of shape d_in x d_out.
struct Layer {
  Matrix weights;
  std::vector<double> bias;

  [[nodiscard]] std::size_t d_in() const noexcept { return weights.rows(); }
  [[nodiscard]] std::size_t d_out() const noexcept { return weights.cols(); }

  friend bool operator==(const Layer&, const Layer&) = default;
};

// Feed-forward network: hidden layers use `hidden_activation`, the last layer
// feeds a softmax over n_outputs() classes.
struct MlpParams {
  std::vector<Layer> layers;
  Activation hidden_activation = Activation::relu;

  [[nodiscard]] std::size_t n_inputs() const;
  [[nodiscard]] std::size_t n_outputs() const;
  [[nodiscard]] std::size_t parameter_count() const;

  // Throws ShapeError when layer dimensions do not chain and DomainError on
  // non-finite entries.
  void validate() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// Glorot-uniform weights, zero biases. widths = {D, hidden..., K}.
MlpParams init_params(std::span<const std::size_t> widths, std::uint64_t seed);

// Data-dependent bias init: layer by layer, sets each bias so the mean
// pre-activation over `inputs` is zero. Weights are left untouched.
void center_biases(MlpParams& params, const Matrix& inputs);

// Gradient carrier shaped exactly like the MlpParams it was computed from.
struct GradientSet {
  std::vector<Layer> layers;

  static GradientSet zeros_like(const MlpParams& params);
  GradientSet& operator+=(const GradientSet& other);
  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] bool congruent_with(const MlpParams& params) const;
};

// Activations retained for backpropagation. inputs() is the batch itself,
// hidden(i) the post-activation output of hidden layer i.
struct ForwardTape {
  std::vector<Matrix> activations;
  Matrix probs;

  [[nodiscard]] const Matrix& inputs() const { return activations.front(); }
};

ForwardTape forward_tape(const MlpParams& params, const Matrix& inputs);

// Softmax posteriors, one row per input row. Each row is computed
// independently, so results do not depend on batch composition.
Matrix forward(const MlpParams& params, const Matrix& inputs);
std::vector<double> forward(const MlpParams& params, std::span<const double> x);

// Backpropagates dL/dP (same shape as tape.probs) through softmax and layers.
// When d_inputs is non-null it receives dL/dX.
GradientSet backward(const MlpParams& params, const ForwardTape& tape, const Matrix& d_probs,
                     Matrix* d_inputs = nullptr);

// dL/dX only; skips the weight-gradient accumulation.
Matrix backward_inputs(const MlpParams& params, const ForwardTape& tape, const Matrix& d_probs);

// Value of a scalar loss over a probability matrix and its gradient dL/dP.
struct LossValue {
  double value = 0.0;
  Matrix d_probs;
};

using ProbabilityLoss = std::function<LossValue(const Matrix& probs)>;

struct ParamGradients {
  double loss = 0.0;
  GradientSet grads;
};

ParamGradients param_gradients(const MlpParams& params, const Matrix& inputs,
                               const ProbabilityLoss& loss);

// d/dx of -sum_k reference_k * log forward(params, x)_k, reference held fixed.
std::vector<double> input_gradient(const MlpParams& params, std::span<const double> x,
                                   std::span<const double> reference);

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& name);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct OptimizerState {
  OptimizerSettings settings;
  GradientSet first_moment;
  GradientSet second_moment;
  std::uint64_t step = 0;

  OptimizerState(OptimizerSettings s, const MlpParams& params);
};

// In-place update. SGD: p -= lr * g. Adam: bias-corrected moment update.
void optimizer_step(MlpParams& params, const GradientSet& grads, OptimizerState& state);

nlohmann::json to_json(const MlpParams& params);
MlpParams params_from_json(const nlohmann::json& doc);

} // namespace dro::nn
