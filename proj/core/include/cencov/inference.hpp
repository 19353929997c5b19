#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

// Sandwich variance A^{-1} B A^{-T} / n for m-estimators, with an optional
// meat correction for estimated nuisance parameters, and normal-theory
// confidence intervals.
namespace cencov {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct InferenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything needed to correct the meat for one estimated nuisance block:
// per-record phi re-evaluated at a perturbed nuisance vector, the fitted
// value, and the per-record nuisance scores with their mean Jacobian.
struct NuisanceCorrection {
  std::function<MatrixXd(const VectorXd&)> phi_at;  // n x p at theta_hat
  VectorXd nuis_hat;
  MatrixXd scores;          // n x q
  MatrixXd score_jacobian;  // q x q, d(mean score)/d nuis'
  double jacobian_step = 1e-4;
};

struct SandwichResult {
  MatrixXd A;  // bread: mean d phi / d theta'
  MatrixXd B;  // meat: mean phi phi'
  MatrixXd covariance;
  std::optional<MatrixXd> B_corrected;
  std::optional<MatrixXd> covariance_corrected;
  double condition_number = 0.0;  // of A
};

// phi_at_theta(theta_flat) returns the n x p matrix of per-record phi values.
// The bread is the numeric Jacobian of the column means; the meat averages
// per-record outer products. With a correction, each record's phi is replaced
// by phi - E[d phi/d nuis'] E[d score/d nuis']^{-1} score inside the meat and
// both plain and corrected covariances are returned. Throws when cond(A)
// exceeds cond_limit.
SandwichResult sandwich(
    const std::function<MatrixXd(const VectorXd&)>& phi_at_theta,
    const VectorXd& theta_hat_flat,
    const std::optional<NuisanceCorrection>& correction = std::nullopt,
    double cond_limit = 1e10, double jacobian_step = 1e-6);

// theta_j +/- z_{(1+level)/2} se_j for each component.
std::vector<std::pair<double, double>> confidence_intervals(
    const VectorXd& theta_flat, const VectorXd& se, double level);

}  // namespace cencov
