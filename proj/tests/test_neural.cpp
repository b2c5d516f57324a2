#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "livemap/neural.hpp"
#include "livemap/scenario.hpp"
#include "livemap/vae.hpp"
#include "support.hpp"

using namespace livemap;
using namespace livemap::neural;

namespace {

Matrix<double> gaussian(int rows, int cols, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Straight-line forward pass with explicit loops.
std::vector<double> hand_forward(const DenseNet<double>& net, const std::vector<double>& x) {
  std::vector<double> a = x;
  const auto& layers = net.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& w = layers[k].weights;
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double s = layers[k].bias(r);
      for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * a[static_cast<std::size_t>(c)];
      if (k + 1 < layers.size() && s < 0.0) s *= net.leaky_slope();
      z[static_cast<std::size_t>(r)] = s;
    }
    a = z;
  }
  return a;
}

}  // namespace

TEST_SUITE("neural") {

TEST_CASE("forward special cases") {
  DenseNet<double> zero({3, 2});
  zero.mutable_layers()[0].bias << 1.5, -2.0;
  const auto y = zero.predict(Eigen::Vector3d(4, 5, 6));
  CHECK(y(0, 0) == 1.5);
  CHECK(y(1, 0) == -2.0);

  DenseNet<double> id({3, 3});
  id.mutable_layers()[0].weights.setIdentity();
  CHECK((id.predict(Eigen::Vector3d(-1, 2, 3)) - Eigen::Vector3d(-1, 2, 3)).norm() == 0.0);

  CHECK_THROWS_AS(id.predict(Eigen::Vector2d(1, 2)), Error);
}

TEST_CASE("forward matches a hand-rolled oracle") {
  std::mt19937_64 rng(21);
  const auto net = DenseNet<double>::random({6, 9, 4}, rng);
  for (int t = 0; t < 10; ++t) {
    const Matrix<double> x = gaussian(6, 1, rng);
    const auto expect = hand_forward(net, std::vector<double>(x.data(), x.data() + 6));
    const auto got = net.predict(x);
    for (int i = 0; i < 4; ++i) CHECK(got(i, 0) == doctest::Approx(expect[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("linear net squared loss gradient is closed form") {
  std::mt19937_64 rng(4);
  auto net = DenseNet<double>::random({3, 2}, rng);
  const Eigen::Vector3d x(0.5, -1.0, 2.0);
  const Eigen::Vector2d target(1.0, -1.0);
  Tape<double> tape;
  const Matrix<double> y = net.forward(x, tape);
  const Matrix<double> dy = 2.0 * (y - target);
  const auto back = net.backward(tape, dy);
  const Matrix<double> expect = dy * x.transpose();
  CHECK((back.grads[0].weights - expect).norm() < 1e-12);
  CHECK((back.grads[0].bias - dy).norm() < 1e-12);

  const auto none = net.backward(tape, Matrix<double>::Zero(2, 1));
  CHECK(none.grads[0].weights.norm() == 0.0);
  CHECK(none.grads[0].bias.norm() == 0.0);
}

TEST_CASE("stale tapes are rejected") {
  std::mt19937_64 rng(4);
  auto net = DenseNet<double>::random({3, 4, 2}, rng);
  Tape<double> tape;
  net.forward(Eigen::Vector3d(1, 2, 3), tape);
  net.mutable_layers();
  try {
    net.backward(tape, Matrix<double>::Ones(2, 1));
    FAIL("expected stale-tape");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kStaleTape);
  }
}

TEST_CASE("finite differences on small dense nets") {
  std::mt19937_64 rng(8);
  for (const auto& dims : std::vector<std::vector<int>>{{3, 5, 2}, {10, 16, 16, 5}, {4, 7, 7, 7, 3}}) {
    auto net = DenseNet<double>::random(dims, rng);
    for (auto& l : net.mutable_layers()) l.bias = gaussian(static_cast<int>(l.bias.size()), 1, rng, 0.1);
    const auto x = gaussian(dims.front(), 3, rng);
    const auto r = gaussian(dims.back(), 3, rng);
    const auto gc = testing::check_network(net, x, r);
    CHECK(gc.max_rel < 1e-4);
    CHECK(gc.checked > 0.95 * static_cast<double>(net.parameter_count()));
  }
}

TEST_CASE("finite differences through the VAE loss") {
  std::mt19937_64 rng(9);
  auto model = VaeModel::random({12, 10, 4}, rng);
  const auto x = gaussian(12, 3, rng);
  const auto noise = gaussian(4, 3, rng);
  const auto gc = testing::check_vae(model, x, noise);
  CHECK(gc.max_rel < 1e-4);
  CHECK(gc.checked > 0);
}

TEST_CASE("adam step behaviour") {
  std::mt19937_64 rng(1);
  auto net = DenseNet<double>::random({2, 3, 1}, rng);
  AdamState<double> opt(net, 1e-2);
  Gradients<double> zero;
  for (const auto& l : net.layers()) zero.push_back({Matrix<double>::Zero(l.weights.rows(), l.weights.cols()),
                                                     Vector<double>::Zero(l.bias.size())});
  const auto before = net.flatten();
  step(net, zero, opt);
  CHECK(net.flatten() == before);

  // Scalar quadratic (w - 3)^2.
  DenseNet<double> scalar({1, 1});
  AdamState<double> sopt(scalar, 0.1);
  auto loss = [&] { return std::pow(scalar.layers()[0].weights(0, 0) - 3.0, 2); };
  const double l0 = loss();
  Gradients<double> g{{Matrix<double>::Constant(1, 1, 2.0 * (scalar.layers()[0].weights(0, 0) - 3.0)),
                       Vector<double>::Zero(1)}};
  step(scalar, g, sopt);
  CHECK(loss() < l0);

  auto a = DenseNet<double>::random({2, 3, 1}, rng);
  auto b = a;
  AdamState<double> oa(a, 1e-3), ob(b, 1e-3);
  Gradients<double> gg;
  for (const auto& l : a.layers()) gg.push_back({gaussian(int(l.weights.rows()), int(l.weights.cols()), rng),
                                                 gaussian(int(l.bias.size()), 1, rng)});
  step(a, gg, oa);
  step(b, gg, ob);
  CHECK(a.flatten() == b.flatten());
}

TEST_CASE("model file round trip") {
  std::mt19937_64 rng(5);
  const auto net = DenseNet<float>::random({10, 8, 5}, rng);
  const auto path = std::filesystem::temp_directory_path() / "livemap_net_roundtrip.bin";
  save(net, path);
  const auto back = load<float>(path);
  CHECK(back.dims() == net.dims());
  CHECK(back.flatten() == net.flatten());
  std::filesystem::remove(path);
}

TEST_CASE("closed-form KL") {
  CHECK(kl_divergence(Vector<double>::Zero(25), Vector<double>::Zero(25)) == 0.0);
  Vector<double> mu = Vector<double>::Zero(25);
  mu(0) = 1.0;
  CHECK(kl_divergence(mu, Vector<double>::Zero(25)) == doctest::Approx(0.5));
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) CHECK(kl_divergence(gaussian(25, 1, rng), gaussian(25, 1, rng)) >= 0.0);
}

TEST_CASE("closed-form KL agrees with a Monte-Carlo estimate") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int pair = 0; pair < 3; ++pair) {
    const Vector<double> mu = gaussian(4, 1, rng);
    const Vector<double> logvar = gaussian(4, 1, rng, 0.5);
    double sum = 0.0;
    const int samples = 200000;
    for (int s = 0; s < samples; ++s) {
      double log_ratio = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double eps = n(rng);
        const double z = mu(i) + std::exp(0.5 * logvar(i)) * eps;
        log_ratio += -0.5 * logvar(i) - 0.5 * eps * eps + 0.5 * z * z;
      }
      sum += log_ratio;
    }
    CHECK(sum / samples == doctest::Approx(kl_divergence(mu, logvar)).epsilon(0.02));
  }
}

TEST_CASE("feature extraction") {
  std::mt19937_64 rng(3);
  const auto model = VaeModel::random({}, rng);
  const Vector<double> x = gaussian(64, 1, rng);
  const auto a = extract_feature(model, x);
  CHECK(a.size() == 25);
  CHECK(a == extract_feature(model, x));
}

TEST_CASE("trained encoder separates classes") {
  const auto model = scenario::train_default_vae(3, 512, 20);
  std::mt19937_64 rng(44);
  using mapcore::ObjectClass;
  const auto car = scenario::class_prototype(ObjectClass::kCar);
  const auto person = scenario::class_prototype(ObjectClass::kPerson);
  const double between = (extract_feature(model, car) - extract_feature(model, person)).norm();
  double within = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto a = scenario::sample_signature(ObjectClass::kCar, rng);
    const auto b = scenario::sample_signature(ObjectClass::kCar, rng);
    within = std::max(within, (extract_feature(model, a) - extract_feature(model, b)).norm());
  }
  CHECK(between > within);
}

TEST_CASE("seeded training is bit-identical") {
  std::mt19937_64 rng(5);
  const Matrix<double> data = gaussian(64, 64, rng);
  std::mt19937_64 r1(1), r2(1);
  auto m1 = VaeModel::random({}, r1);
  auto m2 = VaeModel::random({}, r2);
  VaeTrainConfig cfg;
  cfg.epochs = 3;
  CHECK(train_vae(m1, data, cfg) == train_vae(m2, data, cfg));
  CHECK(m1.encoder.flatten() == m2.encoder.flatten());
}

}  // TEST_SUITE
