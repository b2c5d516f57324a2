#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "livemap/error.hpp"

namespace livemap::policies {

inline constexpr int kDefaultActions = 5;

// Raw RGB-D upload, everything at the server.
inline int eo() { return 0; }
// Whole pipeline onboard.
inline int lp(int num_actions = kDefaultActions) { return num_actions - 1; }

template <typename Rng>
int ro(Rng& rng, int num_actions = kDefaultActions) {
  return std::uniform_int_distribution<int>(0, num_actions - 1)(rng);
}

struct RmSample {
  double rate_bps = 0.0;
  double n_vehicles = 0.0;
  int action = 0;
  double latency_ms = 0.0;
};

// Per-action polynomial latency model over (rate, vehicle count). Features for
// degree 2 are [1, r, n, r^2, rn, n^2]; higher degrees continue the pattern.
struct RegressionModel {
  int degree = 2;
  std::vector<Eigen::VectorXd> coefficients;  // one per action

  int num_actions() const { return static_cast<int>(coefficients.size()); }
  double predict(int action, double rate_bps, double n_vehicles) const;

  std::string to_json() const;
  static RegressionModel from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static RegressionModel load(const std::filesystem::path& path);
};

Eigen::VectorXd poly_features(double r, double n, int degree);
int feature_count(int degree);

// Least squares per action; needs at least as many samples as features for
// every action and a full-rank design.
RegressionModel rm_fit(const std::vector<RmSample>& data, int num_actions = kDefaultActions, int degree = 2);

// Action with the smallest predicted latency; ties go to the lowest action.
int rm_decide(const RegressionModel& model, double rate_bps, double n_vehicles);

double rm_residual(const RegressionModel& model, const std::vector<RmSample>& data, int action);

}  // namespace livemap::policies
