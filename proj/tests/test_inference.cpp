#include <doctest.h>

#include <cencov/inference.hpp>
#include <cencov/numerics.hpp>
#include <cmath>

using namespace cencov;

namespace {

// Heteroscedastic linear-regression data for sandwich checks.
struct LinearData {
  Eigen::MatrixXd X;  // n x p, first column ones
  Eigen::VectorXd y;
  Eigen::VectorXd beta_hat;
};

LinearData make_linear(int n, std::uint64_t seed) {
  Rng rng(seed, 0);
  LinearData d;
  d.X.resize(n, 2);
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    d.X(i, 0) = 1.0;
    d.X(i, 1) = rng.normal();
    const double scale = 0.5 + 0.8 * d.X(i, 1) * d.X(i, 1);
    d.y(i) = 0.7 + 1.4 * d.X(i, 1) + scale * rng.normal();
  }
  d.beta_hat = d.X.colPivHouseholderQr().solve(d.y);
  return d;
}

// Per-record least-squares scores at beta: x_i (y_i - x_i' beta).
Eigen::MatrixXd ols_phi(const LinearData& d, const Eigen::VectorXd& beta) {
  Eigen::VectorXd resid = d.y - d.X * beta;
  return (d.X.array().colwise() * resid.array()).matrix();
}

}  // namespace

TEST_CASE("sandwich matches the classic heteroscedasticity-robust covariance") {
  const LinearData d = make_linear(5000, 91);
  const int n = static_cast<int>(d.y.size());
  auto phi_at = [&](const Eigen::VectorXd& beta) { return ols_phi(d, beta); };
  SandwichResult sw = sandwich(phi_at, d.beta_hat);

  // In-test oracle: A = -X'X/n, covariance = (X'X)^{-1} X' diag(e^2) X (X'X)^{-1}.
  Eigen::MatrixXd A_ref = -d.X.transpose() * d.X / n;
  CHECK((sw.A - A_ref).cwiseAbs().maxCoeff() < 1e-6);

  Eigen::VectorXd resid = d.y - d.X * d.beta_hat;
  Eigen::MatrixXd meat =
      d.X.transpose() * resid.array().square().matrix().asDiagonal() * d.X / n;
  CHECK((sw.B - meat).cwiseAbs().maxCoeff() < 1e-8);

  Eigen::MatrixXd bread_inv = (d.X.transpose() * d.X).inverse() * n;
  Eigen::MatrixXd cov_ref = bread_inv * meat * bread_inv.transpose() / n;
  CHECK((sw.covariance - cov_ref).cwiseAbs().maxCoeff() <
        1e-6 * cov_ref.cwiseAbs().maxCoeff() + 1e-10);
  CHECK(sw.condition_number > 0);
  CHECK_FALSE(sw.covariance_corrected.has_value());
}

TEST_CASE("nuisance correction reproduces the two-stage influence function") {
  // Two-stage toy problem with a closed-form answer. First stage:
  // alpha = E[V], estimated by the sample mean of v with score s_i = v_i - alpha.
  // Second stage: theta solves mean of (y_i - alpha x_i - theta) = 0.
  // The corrected influence is phi_i - E[x] * (v_i - alpha), because
  // d phi / d alpha = -x_i and d s / d alpha = -1.
  Rng rng(92, 0);
  const int n = 8000;
  Eigen::VectorXd x(n), v(n), y(n);
  for (int i = 0; i < n; ++i) {
    x(i) = 1.0 + rng.normal();
    v(i) = 0.5 + 0.7 * rng.normal();
    y(i) = 2.0 + 0.5 * x(i) + rng.normal();
  }
  const double alpha_hat = v.mean();
  const double theta_hat = (y - alpha_hat * x).mean();

  auto phi_at_theta = [&](const Eigen::VectorXd& th) {
    return Eigen::MatrixXd(y - alpha_hat * x -
                           Eigen::VectorXd::Constant(n, th(0)));
  };
  NuisanceCorrection corr;
  corr.phi_at = [&](const Eigen::VectorXd& a) {
    return Eigen::MatrixXd(y - a(0) * x -
                           Eigen::VectorXd::Constant(n, theta_hat));
  };
  corr.nuis_hat = Eigen::VectorXd::Constant(1, alpha_hat);
  corr.scores = (v.array() - alpha_hat).matrix();
  corr.score_jacobian = Eigen::MatrixXd::Constant(1, 1, -1.0);

  SandwichResult sw = sandwich(phi_at_theta,
                               Eigen::VectorXd::Constant(1, theta_hat), corr);
  REQUIRE(sw.covariance_corrected.has_value());

  // Closed-form references.
  Eigen::VectorXd phi = y - alpha_hat * x -
                        Eigen::VectorXd::Constant(n, theta_hat);
  const double plain_var = phi.array().square().mean() / n;
  Eigen::VectorXd phi_corr =
      phi - x.mean() * (v.array() - alpha_hat).matrix();
  const double corr_var = phi_corr.array().square().mean() / n;
  CHECK(sw.covariance(0, 0) == doctest::Approx(plain_var).epsilon(1e-6));
  CHECK((*sw.covariance_corrected)(0, 0) ==
        doctest::Approx(corr_var).epsilon(1e-4));
  // The two differ by a non-trivial margin in this design.
  CHECK(std::abs(corr_var - plain_var) > 0.1 * plain_var);
}

TEST_CASE("a singular bread matrix is rejected") {
  Rng rng(93, 0);
  const int n = 200;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = rng.normal();
  // Two identical estimating equations: the Jacobian has rank one.
  auto phi_at = [&](const Eigen::VectorXd& th) {
    Eigen::MatrixXd m(n, 2);
    m.col(0) = y - Eigen::VectorXd::Constant(n, th(0) + th(1));
    m.col(1) = m.col(0);
    return m;
  };
  CHECK_THROWS_AS(sandwich(phi_at, Eigen::VectorXd::Zero(2)), InferenceError);
}

TEST_CASE("confidence intervals use the right normal multipliers") {
  Eigen::VectorXd est(2), se(2);
  est << 1.0, -2.0;
  se << 0.5, 2.0;
  auto ci95 = confidence_intervals(est, se, 0.95);
  REQUIRE(ci95.size() == 2);
  const double z95 = 1.959963984540054;
  CHECK(ci95[0].first == doctest::Approx(1.0 - z95 * 0.5).epsilon(1e-9));
  CHECK(ci95[0].second == doctest::Approx(1.0 + z95 * 0.5).epsilon(1e-9));
  CHECK(ci95[1].first == doctest::Approx(-2.0 - z95 * 2.0).epsilon(1e-9));

  auto ci90 = confidence_intervals(est, se, 0.90);
  const double z90 = 1.6448536269514722;
  CHECK(ci90[0].second == doctest::Approx(1.0 + z90 * 0.5).epsilon(1e-9));
}
