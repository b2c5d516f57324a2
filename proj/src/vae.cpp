#include "livemap/vae.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace livemap::neural {

double kl_divergence(const Vector<double>& mu, const Vector<double>& logvar) {
  return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum();
}

VaeLoss vae_loss(const VaeModel& model, const Matrix<double>& x, const Matrix<double>& noise) {
  const int d = model.latent_dim();
  if (x.rows() != model.signature_dim()) throw Error(ErrorKind::kDimensionMismatch, "signature dimension");
  if (noise.rows() != d || noise.cols() != x.cols()) throw Error(ErrorKind::kDimensionMismatch, "noise shape");
  const double inv_b = 1.0 / static_cast<double>(x.cols());

  Tape<double> enc_tape;
  const Matrix<double> enc_out = model.encoder.forward(x, enc_tape);
  const Matrix<double> mu = enc_out.topRows(d);
  const Matrix<double> logvar = enc_out.bottomRows(d);
  const Matrix<double> sigma = (0.5 * logvar.array()).exp().matrix();
  const Matrix<double> z = mu + sigma.cwiseProduct(noise);

  Tape<double> dec_tape;
  const Matrix<double> recon = model.decoder.forward(z, dec_tape);
  const Matrix<double> diff = recon - x;

  VaeLoss out;
  out.reconstruction = diff.squaredNorm() * inv_b;
  out.kl = 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum() * inv_b;
  out.loss = out.reconstruction + out.kl;

  auto dec = model.decoder.backward(dec_tape, 2.0 * inv_b * diff);
  const Matrix<double>& dz = dec.input_grad;
  Matrix<double> upstream(2 * d, x.cols());
  upstream.topRows(d) = dz + inv_b * mu;
  upstream.bottomRows(d) = (0.5 * dz.array() * noise.array() * sigma.array() +
                            0.5 * inv_b * (logvar.array().exp() - 1.0)).matrix();
  auto enc = model.encoder.backward(enc_tape, upstream);

  out.encoder = std::move(enc.grads);
  out.decoder = std::move(dec.grads);
  return out;
}

Vector<double> extract_feature(const VaeModel& model, const Vector<double>& x) {
  return model.encoder.predict(x).topRows(model.latent_dim());
}

Matrix<double> extract_features(const VaeModel& model, const Matrix<double>& x) {
  return model.encoder.predict(x).topRows(model.latent_dim());
}

std::vector<double> train_vae(VaeModel& model, const Matrix<double>& data, const VaeTrainConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  AdamState<double> enc_opt(model.encoder, cfg.learning_rate);
  AdamState<double> dec_opt(model.decoder, cfg.learning_rate);

  const auto n = static_cast<int>(data.cols());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_loss;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      Matrix<double> x(data.rows(), b);
      for (int j = 0; j < b; ++j) x.col(j) = data.col(order[start + j]);
      Matrix<double> eps(model.latent_dim(), b);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
      auto l = vae_loss(model, x, eps);
      total += l.loss * b;
      step(model.encoder, l.encoder, enc_opt);
      step(model.decoder, l.decoder, dec_opt);
    }
    epoch_loss.push_back(total / n);
  }
  return epoch_loss;
}

void save_vae(const VaeModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save(model.encoder, dir / "vae_encoder.bin");
  save(model.decoder, dir / "vae_decoder.bin");
}

VaeModel load_vae(const std::filesystem::path& dir, double leaky_slope) {
  VaeModel m;
  m.encoder = load<double>(dir / "vae_encoder.bin", leaky_slope);
  m.decoder = load<double>(dir / "vae_decoder.bin", leaky_slope);
  return m;
}

}  // namespace livemap::neural
