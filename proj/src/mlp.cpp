#include "failscape/mlp.hpp"

#include <cmath>

#include "failscape/errors.hpp"

namespace failscape {

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw Error(ErrorCode::kInvalidArgument, "unknown activation '" + s + "'");
}

Eigen::VectorXd MlpGradients::flatten() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) n += weight[l].size() + bias[l].size();
  Eigen::VectorXd out(n);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    out.segment(k, weight[l].size()) = Eigen::Map<const Eigen::VectorXd>(weight[l].data(), weight[l].size());
    k += weight[l].size();
    out.segment(k, bias[l].size()) = bias[l];
    k += bias[l].size();
  }
  return out;
}

double MlpGradients::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < weight.size(); ++l) s += weight[l].squaredNorm() + bias[l].squaredNorm();
  return s;
}

void MlpGradients::scale(double factor) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] *= factor;
    bias[l] *= factor;
  }
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += other.weight[l];
    bias[l] += other.bias[l];
  }
  return *this;
}

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Activation activation, Rng& rng, double output_scale)
    : sizes_(std::move(layer_sizes)), activation_(activation) {
  if (sizes_.size() < 2) throw Error(ErrorCode::kShapeMismatch, "an MLP needs at least 2 layer sizes");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    if (in == 0 || out == 0) throw Error(ErrorCode::kShapeMismatch, "layer sizes must be positive");
    double limit = activation_ == Activation::kTanh ? std::sqrt(6.0 / static_cast<double>(in + out))
                                                    : std::sqrt(6.0 / static_cast<double>(in));
    if (l + 2 == sizes_.size()) limit *= output_scale;
    std::uniform_real_distribution<double> init(-limit, limit);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index j = 0; j < in; ++j) {
      for (Eigen::Index i = 0; i < out; ++i) layer.weight(i, j) = init(rng);
    }
    layers_.push_back(std::move(layer));
  }
}

Mlp Mlp::zeros(std::vector<std::size_t> layer_sizes, Activation activation) {
  Mlp net;
  net.sizes_ = std::move(layer_sizes);
  net.activation_ = activation;
  if (net.sizes_.size() < 2) throw Error(ErrorCode::kShapeMismatch, "an MLP needs at least 2 layer sizes");
  for (std::size_t l = 0; l + 1 < net.sizes_.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(net.sizes_[l]);
    const auto out = static_cast<Eigen::Index>(net.sizes_[l + 1]);
    net.layers_.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
  }
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) n += (sizes_[l] + 1) * sizes_[l + 1];
  return n;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  ForwardTape tape;
  return forward(x, tape);
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  return forward(Eigen::MatrixXd(x)).col(0);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, ForwardTape& tape) const {
  if (static_cast<std::size_t>(x.rows()) != input_size()) {
    throw Error(ErrorCode::kShapeMismatch, "input has " + std::to_string(x.rows()) +
                                               " rows, network expects " +
                                               std::to_string(input_size()));
  }
  tape.activations.clear();
  tape.activations.reserve(layers_.size() + 1);
  tape.activations.push_back(x);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * tape.activations.back();
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size()) {
      if (activation_ == Activation::kTanh) {
        z = z.array().tanh().matrix();
      } else {
        z = z.cwiseMax(0.0);
      }
    }
    tape.activations.push_back(std::move(z));
  }
  return tape.activations.back();
}

MlpGradients Mlp::backward(const ForwardTape& tape, const Eigen::MatrixXd& upstream) const {
  const Eigen::MatrixXd& out = tape.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "upstream gradient shape does not match output");
  }
  MlpGradients grads;
  grads.weight.resize(layers_.size());
  grads.bias.resize(layers_.size());
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Eigen::MatrixXd& input = tape.activations[l];
    grads.weight[l].noalias() = delta * input.transpose();
    grads.bias[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = layers_[l].weight.transpose() * delta;
    if (activation_ == Activation::kTanh) {
      back.array() *= 1.0 - input.array().square();
    } else {
      back.array() *= (input.array() > 0.0).cast<double>();
    }
    delta = std::move(back);
  }
  return grads;
}

MlpGradients Mlp::zero_gradients() const {
  MlpGradients g;
  for (const auto& layer : layers_) {
    g.weight.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
  }
  return g;
}

Eigen::VectorXd Mlp::parameters() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& layer : layers_) {
    out.segment(k, layer.weight.size()) =
        Eigen::Map<const Eigen::VectorXd>(layer.weight.data(), layer.weight.size());
    k += layer.weight.size();
    out.segment(k, layer.bias.size()) = layer.bias;
    k += layer.bias.size();
  }
  return out;
}

void Mlp::set_parameters(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (auto& layer : layers_) {
    Eigen::Map<Eigen::VectorXd>(layer.weight.data(), layer.weight.size()) =
        flat.segment(k, layer.weight.size());
    k += layer.weight.size();
    layer.bias = flat.segment(k, layer.bias.size());
    k += layer.bias.size();
  }
}

bool Mlp::all_finite() const {
  for (const auto& layer : layers_) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

double clip_gradients(MlpGradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

Adam::Adam(const Mlp& net, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon),
      m_(net.zero_gradients()), v_(net.zero_gradients()) {}

void Adam::step(Mlp& net, const MlpGradients& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double step = lr_ * std::sqrt(c2) / c1;
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    m_.weight[l] = beta1_ * m_.weight[l] + (1.0 - beta1_) * grads.weight[l];
    v_.weight[l] = beta2_ * v_.weight[l] + (1.0 - beta2_) * grads.weight[l].cwiseAbs2();
    layers[l].weight.array() -=
        step * m_.weight[l].array() / (v_.weight[l].array().sqrt() + eps_ * std::sqrt(c2));
    m_.bias[l] = beta1_ * m_.bias[l] + (1.0 - beta1_) * grads.bias[l];
    v_.bias[l] = beta2_ * v_.bias[l] + (1.0 - beta2_) * grads.bias[l].cwiseAbs2();
    layers[l].bias.array() -=
        step * m_.bias[l].array() / (v_.bias[l].array().sqrt() + eps_ * std::sqrt(c2));
  }
}

nlohmann::json to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    std::vector<double> w(layer.weight.data(), layer.weight.data() + layer.weight.size());
    std::vector<double> b(layer.bias.data(), layer.bias.data() + layer.bias.size());
    layers.push_back({{"rows", layer.weight.rows()},
                      {"cols", layer.weight.cols()},
                      {"weight_col_major", w},
                      {"bias", b}});
  }
  return {{"format", "failscape.mlp"},
          {"version", 1},
          {"layer_sizes", net.layer_sizes()},
          {"activation", to_string(net.activation())},
          {"layers", layers}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "failscape.mlp" || j.at("version").get<int>() != 1) {
      throw Error(ErrorCode::kSchemaVersionUnsupported, "unsupported network checkpoint format");
    }
    Mlp net = Mlp::zeros(j.at("layer_sizes").get<std::vector<std::size_t>>(),
                         activation_from_string(j.at("activation").get<std::string>()));
    const auto& layers = j.at("layers");
    if (layers.size() != net.layers().size()) {
      throw Error(ErrorCode::kShapeMismatch, "checkpoint layer count mismatch");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& layer = net.layers()[l];
      const auto w = layers[l].at("weight_col_major").get<std::vector<double>>();
      const auto b = layers[l].at("bias").get<std::vector<double>>();
      if (layers[l].at("rows").get<Eigen::Index>() != layer.weight.rows() ||
          layers[l].at("cols").get<Eigen::Index>() != layer.weight.cols() ||
          static_cast<Eigen::Index>(w.size()) != layer.weight.size() ||
          static_cast<Eigen::Index>(b.size()) != layer.bias.size()) {
        throw Error(ErrorCode::kShapeMismatch, "checkpoint layer shape mismatch");
      }
      layer.weight = Eigen::Map<const Eigen::MatrixXd>(w.data(), layer.weight.rows(), layer.weight.cols());
      layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), layer.bias.size());
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("network checkpoint: ") + e.what());
  }
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double max = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - max).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double max = logits.maxCoeff();
  const double lse = max + std::log((logits.array() - max).exp().sum());
  return (logits.array() - lse).matrix();
}

}  // namespace failscape
