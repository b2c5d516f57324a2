#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "livemap/policies.hpp"

using namespace livemap;
using namespace livemap::policies;

namespace {

// Samples drawn from known per-action polynomials, no noise.
std::vector<RmSample> planted(const std::vector<Eigen::VectorXd>& truth, int per_action, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> r(1e5, 4e6), n(1, 50);
  std::vector<RmSample> out;
  for (int a = 0; a < static_cast<int>(truth.size()); ++a)
    for (int i = 0; i < per_action; ++i) {
      RmSample s{r(rng), std::round(n(rng)), a, 0.0};
      s.latency_ms = truth[static_cast<std::size_t>(a)].dot(poly_features(s.rate_bps, s.n_vehicles, 2));
      out.push_back(s);
    }
  return out;
}

}  // namespace

TEST_SUITE("policies") {

TEST_CASE("fixed baselines") {
  for (int i = 0; i < 3; ++i) {
    CHECK(eo() == 0);
    CHECK(lp() == 4);
  }
  CHECK(lp(7) == 6);
}

TEST_CASE("random offloading is uniform and reproducible") {
  std::mt19937_64 rng(77);
  std::array<int, 5> counts{};
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const int a = ro(rng);
    REQUIRE(a >= 0);
    REQUIRE(a <= 4);
    ++counts[static_cast<std::size_t>(a)];
  }
  const double expect = draws / 5.0, sd = std::sqrt(draws * 0.2 * 0.8);
  double chi2 = 0.0;
  for (int c : counts) {
    CHECK(c > 0);
    CHECK(std::abs(c - expect) < 3 * sd);
    chi2 += (c - expect) * (c - expect) / expect;
  }
  CHECK(chi2 < 18.47);

  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(ro(a) == ro(b));
}

TEST_CASE("feature order") {
  const auto f = poly_features(2.0, 3.0, 2);
  REQUIRE(f.size() == 6);
  CHECK(f[0] == 1.0);
  CHECK(f[1] == 2.0);
  CHECK(f[2] == 3.0);
  CHECK(f[3] == 4.0);
  CHECK(f[4] == 6.0);
  CHECK(f[5] == 9.0);
  CHECK(feature_count(3) == 10);
}

TEST_CASE("planted polynomial is recovered") {
  std::vector<Eigen::VectorXd> truth;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  for (int a = 0; a < 5; ++a) {
    Eigen::VectorXd c(6);
    c << 100 + 10 * g(rng), 1e-5 * g(rng), 3 * g(rng), 1e-12 * g(rng), 1e-7 * g(rng), 0.05 * g(rng);
    truth.push_back(c);
  }
  const auto data = planted(truth, 40, 2);
  const auto m = rm_fit(data);
  REQUIRE(m.num_actions() == 5);
  for (int a = 0; a < 5; ++a)
    for (int i = 0; i < 6; ++i)
      CHECK(std::abs(m.coefficients[a][i] - truth[a][i]) <= 1e-8 * std::max(1.0, std::abs(truth[a][i])));
}

TEST_CASE("constant latency fits the intercept only") {
  std::vector<Eigen::VectorXd> truth(5, Eigen::VectorXd::Zero(6));
  for (int a = 0; a < 5; ++a) truth[a][0] = 50.0 + a;
  const auto m = rm_fit(planted(truth, 12, 3));
  for (int a = 0; a < 5; ++a) {
    CHECK(m.coefficients[a][0] == doctest::Approx(50.0 + a));
    CHECK(m.predict(a, 2e6, 17) == doctest::Approx(50.0 + a));
  }
}

TEST_CASE("fit errors") {
  std::vector<Eigen::VectorXd> truth(5, Eigen::VectorXd::Ones(6));
  try {
    rm_fit(planted(truth, 5, 1));
    FAIL("expected insufficient-samples");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInsufficientSamples);
  }
  // Every row has the same vehicle count: n and n^2 collapse onto the intercept.
  std::vector<RmSample> flat;
  for (int a = 0; a < 5; ++a)
    for (int i = 0; i < 20; ++i) flat.push_back({1e5 * (i + 1), 10.0, a, 5.0});
  try {
    rm_fit(flat);
    FAIL("expected degenerate-fit");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerateFit);
  }
}

TEST_CASE("least squares is locally optimal") {
  std::vector<Eigen::VectorXd> truth(5, Eigen::VectorXd::Zero(6));
  std::mt19937_64 rng(4);
  auto data = planted(truth, 30, 5);
  std::normal_distribution<double> noise(0.0, 5.0);
  for (auto& s : data) s.latency_ms = 100 + 1e-5 * s.rate_bps + 2 * s.n_vehicles + noise(rng);
  const auto m = rm_fit(data);
  for (int a = 0; a < 5; ++a) {
    const double base = rm_residual(m, data, a);
    for (int i = 0; i < 6; ++i)
      for (double d : {-1e-3, 1e-3}) {
        auto p = m;
        p.coefficients[a][i] += d * std::max(1e-12, std::abs(p.coefficients[a][i]));
        CHECK(rm_residual(p, data, a) >= base * (1 - 1e-12));
      }
  }
}

TEST_CASE("decision picks the smallest prediction") {
  RegressionModel m;
  m.coefficients.assign(5, Eigen::VectorXd::Zero(6));
  for (int a = 0; a < 5; ++a) m.coefficients[a][0] = 10.0;
  CHECK(rm_decide(m, 1e6, 10) == 0);
  // Action 2 wins once n is large through its n^2 coefficient.
  m.coefficients[2][5] = -0.01;
  CHECK(rm_decide(m, 1e6, 10) == 2);
  for (int a = 0; a < 5; ++a) m.coefficients[a] = Eigen::VectorXd::Zero(6), m.coefficients[a][0] = 1.0 + a;
  CHECK(rm_decide(m, 3e6, 40) == 0);
}

TEST_CASE("model file round trip") {
  RegressionModel m;
  m.coefficients = {Eigen::VectorXd::LinSpaced(6, 1, 6), Eigen::VectorXd::LinSpaced(6, -1, 1e-9)};
  const auto path = std::filesystem::temp_directory_path() / "livemap_rm.json";
  m.save(path);
  const auto back = RegressionModel::load(path);
  CHECK(back.degree == 2);
  REQUIRE(back.num_actions() == 2);
  CHECK(back.coefficients[1] == m.coefficients[1]);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(RegressionModel::from_json("{\"degree\":2,\"coefficients\":[[1,2]]}"), Error);
}

}  // TEST_SUITE
