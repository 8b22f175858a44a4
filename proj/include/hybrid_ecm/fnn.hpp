#pragma once

// Small feedforward networks: 3 inputs -> tanh -> tanh -> linear scalar output,
// with analytic backpropagation and Adagrad / Adam optimizers.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hybrid_ecm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class OptimizerKind { adagrad, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct FnnConfig {
  std::array<std::size_t, 2> hidden_sizes{8, 4};
  std::size_t epochs = 200;
  double learning_rate = 0.01;
  OptimizerKind optimizer = OptimizerKind::adagrad;
  std::uint64_t seed = 1;
  double output_scale = 1.0;

  void validate() const;
};

/// Inputs are (current A, terminal voltage V, temperature degC).
using FnnInput = std::array<double, 3>;

struct NormStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};

  /// Per-feature z-score statistics. Constant features get stddev 1.
  static NormStats from_samples(std::span<const FnnInput> samples);
  bool operator==(const NormStats&) const = default;
};

struct DenseLayer {
  RowMatrix w;  // out x in
  Eigen::VectorXd b;
};

struct FnnModel {
  std::array<DenseLayer, 3> layers;
  NormStats norm;
  double output_scale = 1.0;
  OptimizerKind optimizer = OptimizerKind::adagrad;

  std::array<std::size_t, 4> layer_sizes() const;
  std::size_t parameter_count() const;
};

struct FnnCache {
  Eigen::Vector3d z0;       // normalized input
  Eigen::VectorXd h1, h2;   // tanh activations
};

/// Same shapes as the model's layers.
struct FnnGradients {
  std::array<DenseLayer, 3> layers;

  static FnnGradients zeros_like(const FnnModel& model);
  FnnGradients& operator+=(const FnnGradients& other);
  void add_scaled(const FnnGradients& other, double scale);
  void set_zero();
};

/// Deterministic initialization: hidden layers uniform in ±sqrt(6/(fan_in+fan_out)),
/// output layer exactly zero.
FnnModel fnn_init(const FnnConfig& config, const NormStats& norm = {});

/// Returns output_scale * network(input); fills `cache` when given.
double fnn_forward(const FnnModel& model, const FnnInput& input, FnnCache* cache = nullptr);

/// Gradient of upstream_grad * output with respect to every weight and bias.
FnnGradients fnn_backward(const FnnModel& model, const FnnCache& cache, double upstream_grad);

/// Accumulating version used in training loops.
void fnn_backward_accumulate(const FnnModel& model, const FnnCache& cache, double upstream_grad,
                             FnnGradients& grads);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adagrad;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-10;
  std::uint64_t step = 0;
  FnnGradients first;   // Adagrad: squared-gradient sums; Adam: first moment
  FnnGradients second;  // Adam second moment (unused for Adagrad)

  static OptimizerState make(const FnnModel& model, OptimizerKind kind);
};

void optimizer_step(FnnModel& model, const FnnGradients& grads, OptimizerState& state,
                    double learning_rate);

}  // namespace hybrid_ecm
