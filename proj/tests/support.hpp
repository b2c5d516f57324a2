#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "livemap/neural.hpp"
#include "livemap/vae.hpp"

namespace livemap::testing {

// The numeric side of every gradient check runs in extended precision on an
// exact copy of the parameters, so its rounding noise sits far below the
// tolerance even for tiny gradients of a large loss.
using Ref = long double;

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a rectifier kink
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central differences over the given parameter slots. `pattern` returns the
// sign pattern of every rectifier input seen by the preceding loss call; a
// slot whose +h and -h evaluations disagree straddles a kink where the
// derivative does not exist.
template <typename T, typename Loss, typename Pattern>
GradCheck central_differences(const std::vector<T*>& params, const std::vector<double>& analytic, Loss loss,
                              Pattern pattern, double h = 1e-5) {
  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    T& p = *params[i];
    const T saved = p;
    p = saved + static_cast<T>(h);
    const T up = loss();
    const auto up_signs = pattern();
    p = saved - static_cast<T>(h);
    const T down = loss();
    const auto down_signs = pattern();
    p = saved;
    if (up_signs != down_signs) {
      ++out.skipped;
      continue;
    }
    const double numeric = static_cast<double>((up - down) / (2 * static_cast<T>(h)));
    if (const double e = rel_error(analytic[i], numeric); e > out.max_rel) {
      out.max_rel = e;
      out.worst_analytic = analytic[i];
      out.worst_numeric = numeric;
    }
    ++out.checked;
  }
  return out;
}

template <typename T>
void collect(neural::DenseNet<T>& net, std::vector<T*>& slots) {
  for (auto& l : net.mutable_layers()) {
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) slots.push_back(l.weights.data() + i);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) slots.push_back(l.bias.data() + i);
  }
}

inline void collect(const neural::Gradients<double>& grads, std::vector<double>& values) {
  for (const auto& l : grads) {
    values.insert(values.end(), l.weights.data(), l.weights.data() + l.weights.size());
    values.insert(values.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
}

template <typename T>
std::vector<bool> signs(const neural::Tape<T>& tape) {
  std::vector<bool> out;
  for (std::size_t k = 0; k + 1 < tape.preactivations.size(); ++k) {
    const auto& z = tape.preactivations[k];
    for (Eigen::Index i = 0; i < z.size(); ++i) out.push_back(z.data()[i] > T(0));
  }
  return out;
}

// Gradient of the linear functional sum(R .* net(x)) against central
// differences, over every parameter.
inline GradCheck check_network(const neural::DenseNet<double>& net, const neural::Matrix<double>& x,
                               const neural::Matrix<double>& r, double h = 1e-5) {
  neural::Tape<double> tape;
  net.forward(x, tape);
  const auto back = net.backward(tape, r);
  std::vector<double> analytic;
  collect(back.grads, analytic);

  auto ref = net.cast<Ref>();
  const neural::Matrix<Ref> xr = x.cast<Ref>(), rr = r.cast<Ref>();
  std::vector<Ref*> slots;
  collect(ref, slots);
  neural::Tape<Ref> t;
  return central_differences(
      slots, analytic, [&] { return ref.forward(xr, t).cwiseProduct(rr).sum(); }, [&] { return signs(t); }, h);
}

// Full VAE loss (reconstruction plus KL) against central differences over
// encoder and decoder parameters, with the reparameterization noise held fixed.
// The reference loss is an independent forward pass.
inline GradCheck check_vae(const neural::VaeModel& model, const neural::Matrix<double>& x,
                           const neural::Matrix<double>& noise, double h = 1e-5) {
  const auto l = neural::vae_loss(model, x, noise);
  std::vector<double> analytic;
  collect(l.encoder, analytic);
  collect(l.decoder, analytic);

  auto enc = model.encoder.cast<Ref>();
  auto dec = model.decoder.cast<Ref>();
  std::vector<Ref*> slots;
  collect(enc, slots);
  collect(dec, slots);
  const neural::Matrix<Ref> xr = x.cast<Ref>(), nr = noise.cast<Ref>();
  const int d = model.latent_dim();
  const Ref batch = static_cast<Ref>(x.cols());
  neural::Tape<Ref> et, dt;
  auto run = [&] {
    const neural::Matrix<Ref> out = enc.forward(xr, et);
    const neural::Matrix<Ref> mu = out.topRows(d), logvar = out.bottomRows(d);
    const neural::Matrix<Ref> z = mu + (Ref(0.5) * logvar.array()).exp().matrix().cwiseProduct(nr);
    const neural::Matrix<Ref> recon = dec.forward(z, dt);
    const Ref kl = Ref(0.5) * (mu.array().square() + logvar.array().exp() - Ref(1) - logvar.array()).sum();
    return ((recon - xr).squaredNorm() + kl) / batch;
  };
  // The pattern is read right after the loss call, from the same tapes.
  return central_differences(slots, analytic, run,
                             [&] {
                               auto s = signs(et);
                               const auto s2 = signs(dt);
                               s.insert(s.end(), s2.begin(), s2.end());
                               return s;
                             },
                             h);
}

}  // namespace livemap::testing
