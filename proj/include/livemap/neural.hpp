#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "livemap/error.hpp"

namespace livemap::neural {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Weights are (out x in); inputs are stored column-per-sample.
template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weights;
  Vector<Scalar> bias;
};

template <typename Scalar>
using Gradients = std::vector<DenseLayer<Scalar>>;

template <typename Scalar>
struct Tape {
  const void* owner = nullptr;
  std::uint64_t version = 0;
  std::vector<Matrix<Scalar>> inputs;          // input to each layer
  std::vector<Matrix<Scalar>> preactivations;  // affine output of each layer
};

template <typename Scalar>
struct Backward {
  Gradients<Scalar> grads;
  Matrix<Scalar> input_grad;
};

// Fully-connected network: affine + leaky rectifier on every hidden layer,
// linear output layer.
template <typename Scalar>
class DenseNet {
 public:
  DenseNet() = default;

  DenseNet(std::vector<int> dims, Scalar leaky_slope = Scalar(0.01)) : dims_(std::move(dims)), slope_(leaky_slope) {
    if (dims_.size() < 2) throw Error(ErrorKind::kDimensionMismatch, "network needs at least two layer dims");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      if (dims_[l] <= 0 || dims_[l + 1] <= 0) throw Error(ErrorKind::kDimensionMismatch, "layer dims must be positive");
      layers_.push_back({Matrix<Scalar>::Zero(dims_[l + 1], dims_[l]), Vector<Scalar>::Zero(dims_[l + 1])});
    }
  }

  // He-normal weights, zero biases.
  template <typename Rng>
  static DenseNet random(std::vector<int> dims, Rng& rng, Scalar leaky_slope = Scalar(0.01)) {
    DenseNet net(std::move(dims), leaky_slope);
    for (auto& layer : net.layers_) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(layer.weights.cols())));
      for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = static_cast<Scalar>(dist(rng));
    }
    return net;
  }

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  Scalar leaky_slope() const { return slope_; }
  std::uint64_t version() const { return version_; }

  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  // Any mutable access invalidates outstanding tapes.
  std::vector<DenseLayer<Scalar>>& mutable_layers() {
    ++version_;
    return layers_;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
  }

  Matrix<Scalar> predict(const Matrix<Scalar>& x) const { return run(x, nullptr); }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, Tape<Scalar>& tape) const {
    tape.owner = this;
    tape.version = version_;
    tape.inputs.clear();
    tape.preactivations.clear();
    return run(x, &tape);
  }

  Backward<Scalar> backward(const Tape<Scalar>& tape, const Matrix<Scalar>& upstream) const {
    if (tape.owner != this || tape.version != version_ || tape.inputs.size() != layers_.size())
      throw Error(ErrorKind::kStaleTape, "tape does not belong to the current parameters");
    if (upstream.rows() != output_dim() || upstream.cols() != tape.inputs.back().cols())
      throw Error(ErrorKind::kDimensionMismatch, "upstream gradient shape");
    Backward<Scalar> out;
    out.grads.resize(layers_.size());
    Matrix<Scalar> delta = upstream;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      if (k + 1 < layers_.size()) {
        const auto& z = tape.preactivations[k];
        delta = delta.cwiseProduct(z.unaryExpr([s = slope_](Scalar v) { return v > Scalar(0) ? Scalar(1) : s; }));
      }
      out.grads[k].weights.noalias() = delta * tape.inputs[k].transpose();
      out.grads[k].bias = delta.rowwise().sum();
      Matrix<Scalar> next = layers_[k].weights.transpose() * delta;
      delta.swap(next);
    }
    out.input_grad = std::move(delta);
    return out;
  }

  // Flat parameter view in layer order: weights row-major, then bias.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weights.cols(); ++c) out.push_back(static_cast<double>(l.weights(r, c)));
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(static_cast<double>(l.bias(r)));
    }
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (flat.size() != parameter_count()) throw Error(ErrorKind::kDimensionMismatch, "parameter count");
    std::size_t i = 0;
    for (auto& l : mutable_layers()) {
      for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = static_cast<Scalar>(flat[i++]);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = static_cast<Scalar>(flat[i++]);
    }
  }

  template <typename Other>
  DenseNet<Other> cast() const {
    DenseNet<Other> out(dims_, static_cast<Other>(slope_));
    auto& dst = out.mutable_layers();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      dst[l].weights = layers_[l].weights.template cast<Other>();
      dst[l].bias = layers_[l].bias.template cast<Other>();
    }
    return out;
  }

 private:
  Matrix<Scalar> run(const Matrix<Scalar>& x, Tape<Scalar>* tape) const {
    if (x.rows() != input_dim()) throw Error(ErrorKind::kDimensionMismatch, "input dimension");
    Matrix<Scalar> a = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      Matrix<Scalar> z = layers_[k].weights * a;
      z.colwise() += layers_[k].bias;
      if (tape) {
        tape->inputs.push_back(std::move(a));
        tape->preactivations.push_back(z);
      }
      if (k + 1 < layers_.size()) z = z.unaryExpr([s = slope_](Scalar v) { return v > Scalar(0) ? v : s * v; });
      a = std::move(z);
    }
    return a;
  }

  std::vector<int> dims_;
  Scalar slope_ = Scalar(0.01);
  std::vector<DenseLayer<Scalar>> layers_;
  std::uint64_t version_ = 0;
};

template <typename Scalar>
struct AdamState {
  Gradients<Scalar> first;
  Gradients<Scalar> second;
  std::int64_t steps = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(const DenseNet<Scalar>& net, double lr) : learning_rate(lr) {
    for (const auto& l : net.layers()) {
      first.push_back({Matrix<Scalar>::Zero(l.weights.rows(), l.weights.cols()), Vector<Scalar>::Zero(l.bias.size())});
    }
    second = first;
  }
};

namespace detail {
template <typename Scalar, typename Param>
void adam_update(Param& p, const Param& g, Param& m, Param& v, Scalar b1, Scalar b2, Scalar step_size,
                 Scalar eps_hat) {
  m = b1 * m + (Scalar(1) - b1) * g;
  v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
  p.array() -= step_size * m.array() / (v.array().sqrt() + eps_hat);
}
}  // namespace detail

// Adaptive-moment step with bias correction.
template <typename Scalar>
void step(DenseNet<Scalar>& net, const Gradients<Scalar>& grads, AdamState<Scalar>& opt) {
  if (grads.size() != net.layers().size() || opt.first.size() != grads.size())
    throw Error(ErrorKind::kDimensionMismatch, "optimizer/gradient shape");
  ++opt.steps;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.steps));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.steps));
  const auto step_size = static_cast<Scalar>(opt.learning_rate * std::sqrt(c2) / c1);
  const auto eps_hat = static_cast<Scalar>(opt.epsilon * std::sqrt(c2));
  const auto b1 = static_cast<Scalar>(opt.beta1);
  const auto b2 = static_cast<Scalar>(opt.beta2);
  auto& layers = net.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads[l].weights.rows() != layers[l].weights.rows() || grads[l].weights.cols() != layers[l].weights.cols())
      throw Error(ErrorKind::kDimensionMismatch, "gradient shape");
    detail::adam_update(layers[l].weights, grads[l].weights, opt.first[l].weights, opt.second[l].weights, b1, b2,
                        step_size, eps_hat);
    detail::adam_update(layers[l].bias, grads[l].bias, opt.first[l].bias, opt.second[l].bias, b1, b2, step_size,
                        eps_hat);
  }
}

// Binary model file: u64 layer count, u64 dims, then little-endian f64
// parameters in layer order (weights row-major, then bias).
void save_params(const std::vector<int>& dims, const std::vector<double>& params, const std::filesystem::path& path);
std::pair<std::vector<int>, std::vector<double>> load_params(const std::filesystem::path& path);

template <typename Scalar>
void save(const DenseNet<Scalar>& net, const std::filesystem::path& path) {
  save_params(net.dims(), net.flatten(), path);
}

template <typename Scalar>
DenseNet<Scalar> load(const std::filesystem::path& path, Scalar leaky_slope = Scalar(0.01)) {
  auto [dims, params] = load_params(path);
  DenseNet<Scalar> net(dims, leaky_slope);
  net.unflatten(params);
  return net;
}

}  // namespace livemap::neural
