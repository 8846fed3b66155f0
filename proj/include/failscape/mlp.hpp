#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "failscape/rng.hpp"

namespace failscape {

enum class Activation { kTanh, kRelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Same shapes as the network's parameters.
struct MlpGradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  Eigen::VectorXd flatten() const;
  double squared_norm() const;
  void scale(double factor);
  MlpGradients& operator+=(const MlpGradients& other);
};

// Layer activations from a batched forward pass, kept for backward().
struct ForwardTape {
  std::vector<Eigen::MatrixXd> activations;  // input, each hidden output, final output
};

// Feed-forward network with a linear output layer. Samples are columns.
class Mlp {
 public:
  Mlp() = default;
  // Hidden layers use Xavier (tanh) or He (relu) uniform init; the output
  // layer's weights are additionally scaled by `output_scale`. Biases start at 0.
  Mlp(std::vector<std::size_t> layer_sizes, Activation activation, Rng& rng,
      double output_scale = 1.0);

  static Mlp zeros(std::vector<std::size_t> layer_sizes, Activation activation);

  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  // Sum over layers of (n_in + 1) * n_out.
  std::size_t parameter_count() const;

  // Throws Error(kShapeMismatch) when rows != input_size().
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, ForwardTape& tape) const;

  // Gradient of sum_{i,j} upstream(i,j) * output(i,j) w.r.t. every parameter,
  // where `upstream` is dLoss/dOutput for the batch recorded in `tape`.
  MlpGradients backward(const ForwardTape& tape, const Eigen::MatrixXd& upstream) const;

  MlpGradients zero_gradients() const;

  // Layer by layer: weight (column-major), then bias.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

  bool all_finite() const;

 private:
  std::vector<std::size_t> sizes_;
  Activation activation_ = Activation::kTanh;
  std::vector<DenseLayer> layers_;
};

// Rescales gradients so their global L2 norm is at most `max_norm`.
// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_gradients(MlpGradients& grads, double max_norm);

class Adam {
 public:
  Adam() = default;
  explicit Adam(const Mlp& net, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  void step(Mlp& net, const MlpGradients& grads);
  double learning_rate() const { return lr_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long long t_ = 0;
  MlpGradients m_, v_;
};

// Versioned JSON dump with shape metadata; round-trips exactly.
nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

// Numerically stable softmax of each column.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits);
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

}  // namespace failscape
