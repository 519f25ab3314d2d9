#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cfstab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Layer widths of a dense ReLU network: input d, hidden widths, output m.
// m == 1 is a binary classifier read out through sigmoid(f(x));
// m > 1 is a multi-logit classifier read out through argmax.
struct NetworkSpec {
  std::vector<int> layer_dims;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int hidden_neuron_count() const;
  bool is_binary() const { return output_dim() == 1; }
  // Throws ConfigError when the spec is malformed.
  void validate() const;

  bool operator==(const NetworkSpec&) const = default;
};

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-7;

  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  std::uint64_t seed = 0;  // drives minibatch order only
  int epochs = 100;
  int batch_size = 32;
  AdamConfig adam;
  bool shuffle = true;
  // When false, biases stay at their initial value (zero). Used for the
  // homogeneous one-hidden-layer networks of the boundary-geometry checks.
  bool train_bias = true;

  bool operator==(const TrainConfig&) const = default;
};

struct NetworkMeta {
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
  std::optional<TrainConfig> train_config;
};

struct Network {
  NetworkSpec spec;
  std::vector<DenseLayer> layers;
  NetworkMeta meta;
  // Mean training loss per epoch. Not part of the serialized model.
  std::vector<double> loss_log;

  int input_dim() const { return spec.input_dim(); }
  int output_dim() const { return spec.output_dim(); }
};

// On/off status of every hidden neuron, layer by layer; bit = (u_i(x) > 0).
struct ActivationPattern {
  std::vector<bool> bits;

  std::size_t active_count() const;
  bool operator==(const ActivationPattern&) const = default;
};

// The affine map a network computes on the activation region of a point:
// logits = weights * x + offsets, with weights of shape m x d.
struct LocalLinearMap {
  Mat weights;
  Vec offsets;
};

// Glorot-uniform weights, zero biases, drawn from Xoshiro256 seeded by `seed`.
Network init_network(const NetworkSpec& spec, std::uint64_t seed);

// Throws ConfigError if layer shapes do not chain or entries are not finite.
void check_network(const Network& net);

Vec forward(const Network& net, const Vec& x);

// Pre-activations of all hidden neurons, concatenated layer by layer.
Vec hidden_preactivations(const Network& net, const Vec& x);

// Gradient of sum_k logit_weights[k] * f_k(x) with respect to x.
Vec input_vjp(const Network& net, const Vec& x, const Vec& logit_weights);

// d f_{logit_index}(x) / dx. ReLU derivative at exactly zero is 0.
Vec grad_input(const Network& net, const Vec& x, int logit_index);

ActivationPattern activation_pattern(const Network& net, const Vec& x);

LocalLinearMap local_linear_map(const Network& net, const Vec& x);

// Output of the last hidden layer, and its Jacobian with respect to x.
Vec penultimate(const Network& net, const Vec& x);
Mat penultimate_jacobian(const Network& net, const Vec& x);

// Predicted class: f(x) > 0 for binary heads, first argmax otherwise.
int predict(const Network& net, const Vec& x);

double sigmoid(double z);

}  // namespace cfstab
