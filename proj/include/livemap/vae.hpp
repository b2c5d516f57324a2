#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "livemap/neural.hpp"

namespace livemap::neural {

struct VaeConfig {
  int signature_dim = 64;
  int hidden_dim = 128;
  int latent_dim = 25;
  double leaky_slope = 0.01;
};

// Encoder emits [mu; logvar] stacked; decoder maps a latent sample back to
// signature space.
struct VaeModel {
  DenseNet<double> encoder;
  DenseNet<double> decoder;

  int latent_dim() const { return decoder.input_dim(); }
  int signature_dim() const { return encoder.input_dim(); }

  template <typename Rng>
  static VaeModel random(const VaeConfig& cfg, Rng& rng) {
    VaeModel m;
    m.encoder = DenseNet<double>::random({cfg.signature_dim, cfg.hidden_dim, 2 * cfg.latent_dim}, rng, cfg.leaky_slope);
    m.decoder = DenseNet<double>::random({cfg.latent_dim, cfg.hidden_dim, cfg.signature_dim}, rng, cfg.leaky_slope);
    return m;
  }
};

struct VaeLoss {
  double loss = 0.0;            // batch mean of reconstruction + kl
  double reconstruction = 0.0;  // batch mean squared error (summed over dims)
  double kl = 0.0;              // batch mean closed-form KL
  Gradients<double> encoder;
  Gradients<double> decoder;
};

// KL[N(mu, exp(logvar)) || N(0, I)] in closed form.
double kl_divergence(const Vector<double>& mu, const Vector<double>& logvar);

// Columns of `x` are signatures, columns of `noise` the reparameterization
// draws (z = mu + sigma * eps).
VaeLoss vae_loss(const VaeModel& model, const Matrix<double>& x, const Matrix<double>& noise);

// Encoder mean; deterministic inference.
Vector<double> extract_feature(const VaeModel& model, const Vector<double>& x);
Matrix<double> extract_features(const VaeModel& model, const Matrix<double>& x);

struct VaeTrainConfig {
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
};

// Returns the mean loss of each epoch.
std::vector<double> train_vae(VaeModel& model, const Matrix<double>& data, const VaeTrainConfig& cfg);

void save_vae(const VaeModel& model, const std::filesystem::path& dir);
VaeModel load_vae(const std::filesystem::path& dir, double leaky_slope = 0.01);

}  // namespace livemap::neural
