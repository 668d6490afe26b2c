#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace ltrack::learn {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { Tanh, Sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Fully connected net. weights[l] is [layer_sizes[l+1] x layer_sizes[l]].
/// Hidden layers use `hidden`; the output layer is always a sigmoid.
struct MlpModel {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Activation hidden = Activation::Tanh;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  /// Width of the last hidden layer, or the input width if there is none.
  int latent_dim() const { return layer_sizes[layer_sizes.size() >= 3 ? layer_sizes.size() - 2 : 0]; }
  std::size_t parameter_count() const;
  void validate() const;
  /// Content hash over shapes and parameter bytes.
  std::string hash() const;

  bool operator==(const MlpModel&) const = default;
};

/// Zero-filled model with the given shape.
MlpModel make_mlp(std::vector<int> layer_sizes, Activation hidden = Activation::Tanh);
/// Glorot-uniform weights, zero biases.
MlpModel init_mlp(std::vector<int> layer_sizes, std::uint64_t seed, Activation hidden = Activation::Tanh);

struct ForwardResult {
  Eigen::VectorXd output;       // after the sigmoid
  Eigen::VectorXd logits;       // before the sigmoid
  Eigen::VectorXd last_hidden;  // latent tap
};

ForwardResult mlp_forward(const MlpModel& model, const Eigen::VectorXd& input);

struct BatchForward {
  RowMatrixF logits;  // [n x output_dim]
  RowMatrixF latent;  // [n x latent_dim], filled on request
};

/// Single-precision batched forward for bulk inference; rows are examples.
BatchForward mlp_forward_batch(const MlpModel& model, const RowMatrixF& inputs, bool want_latent = false);

float sigmoid(float x);
double sigmoid(double x);

struct Dataset {
  RowMatrixF inputs;   // [n x input_dim]
  RowMatrixF targets;  // [n x output_dim], values in [0, 1]

  Eigen::Index size() const { return inputs.rows(); }
  void append(const Dataset& other);
};

struct TrainParams {
  double learning_rate = 0.01;  // Adam step size
  int epochs = 100;
  int batch_size = 128;
  std::uint64_t seed = 1;
  double l2 = 0.0;
  /// Train on standardised inputs, then fold the scaling into layer 0.
  bool standardize = false;
  /// Positive-class weight in the cross-entropy (1 = unweighted).
  double positive_weight = 1.0;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_trace;  // full-set loss before training and after each epoch
  int rejected_epochs = 0;         // epochs rolled back because the loss rose
};

/// Mean cross-entropy over all outputs and examples (plus the L2 term).
double cross_entropy(const MlpModel& model, const Dataset& data, double l2 = 0.0, double positive_weight = 1.0);

/// Loss and gradient in double precision; gradients share the model's layout.
struct Gradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};
double loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                         Gradient& grad, double l2 = 0.0, double positive_weight = 1.0);

/// Mini-batch Adam on cross-entropy. After every epoch the full training
/// loss is measured; an epoch that raises it is undone and the step size
/// halved, so the trace never increases.
TrainResult mlp_train(const MlpModel& model, const Dataset& data, const TrainParams& params);

std::string mlp_to_json(const MlpModel& model);
MlpModel mlp_from_json(const std::string& text);

}  // namespace ltrack::learn
