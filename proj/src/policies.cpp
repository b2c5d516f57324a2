#include "livemap/policies.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "livemap/error.hpp"

namespace livemap::policies {

int feature_count(int degree) { return (degree + 1) * (degree + 2) / 2; }

Eigen::VectorXd poly_features(double r, double n, int degree) {
  Eigen::VectorXd f(feature_count(degree));
  int k = 0;
  for (int total = 0; total <= degree; ++total)
    for (int pr = total; pr >= 0; --pr) f[k++] = std::pow(r, pr) * std::pow(n, total - pr);
  return f;
}

double RegressionModel::predict(int action, double rate_bps, double n_vehicles) const {
  if (action < 0 || action >= num_actions()) throw Error(ErrorKind::kUnknownDecision, "no coefficients for action");
  return coefficients[static_cast<std::size_t>(action)].dot(poly_features(rate_bps, n_vehicles, degree));
}

RegressionModel rm_fit(const std::vector<RmSample>& data, int num_actions, int degree) {
  if (degree < 0) throw Error(ErrorKind::kConfig, "degree must be >= 0");
  const int p = feature_count(degree);
  RegressionModel m;
  m.degree = degree;
  for (int a = 0; a < num_actions; ++a) {
    std::vector<const RmSample*> rows;
    for (const auto& s : data)
      if (s.action == a) rows.push_back(&s);
    if (static_cast<int>(rows.size()) < p)
      throw Error(ErrorKind::kInsufficientSamples, "action " + std::to_string(a) + " has " +
                                                       std::to_string(rows.size()) + " samples");
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), p);
    Eigen::VectorXd y(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      X.row(i) = poly_features(rows[static_cast<std::size_t>(i)]->rate_bps, rows[static_cast<std::size_t>(i)]->n_vehicles,
                               degree).transpose();
      y[i] = rows[static_cast<std::size_t>(i)]->latency_ms;
    }
    // Column scaling keeps r^2 (bps squared) from wrecking the conditioning.
    Eigen::VectorXd scale = X.cwiseAbs().colwise().maxCoeff().transpose();
    for (Eigen::Index c = 0; c < p; ++c)
      if (scale[c] == 0.0) scale[c] = 1.0;
    const Eigen::MatrixXd Xs = X * scale.cwiseInverse().asDiagonal();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) throw Error(ErrorKind::kDegenerateFit, "rank-deficient design for action " + std::to_string(a));
    m.coefficients.push_back(qr.solve(y).cwiseQuotient(scale));
  }
  return m;
}

int rm_decide(const RegressionModel& model, double rate_bps, double n_vehicles) {
  int best = 0;
  double best_v = model.predict(0, rate_bps, n_vehicles);
  for (int a = 1; a < model.num_actions(); ++a) {
    const double v = model.predict(a, rate_bps, n_vehicles);
    if (v < best_v) {
      best_v = v;
      best = a;
    }
  }
  return best;
}

double rm_residual(const RegressionModel& model, const std::vector<RmSample>& data, int action) {
  double sse = 0.0;
  for (const auto& s : data)
    if (s.action == action) {
      const double e = model.predict(action, s.rate_bps, s.n_vehicles) - s.latency_ms;
      sse += e * e;
    }
  return sse;
}

std::string RegressionModel::to_json() const {
  nlohmann::ordered_json j;
  j["degree"] = degree;
  j["features"] = "r^i n^(k-i), k = 0..degree, i = k..0";
  auto& cs = j["coefficients"] = nlohmann::ordered_json::array();
  for (const auto& c : coefficients) cs.push_back(std::vector<double>(c.data(), c.data() + c.size()));
  return j.dump(2);
}

RegressionModel RegressionModel::from_json(const std::string& text) {
  RegressionModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.degree = j.at("degree");
    for (const auto& c : j.at("coefficients")) {
      const auto v = c.get<std::vector<double>>();
      if (static_cast<int>(v.size()) != feature_count(m.degree))
        throw Error(ErrorKind::kConfig, "coefficient count does not match degree");
      m.coefficients.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("bad regression model: ") + e.what());
  }
  return m;
}

void RegressionModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << to_json() << '\n';
}

RegressionModel RegressionModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace livemap::policies
