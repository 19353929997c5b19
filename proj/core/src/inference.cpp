#include "cencov/inference.hpp"

#include <cmath>
#include <string>

#include "cencov/numerics.hpp"

namespace cencov {

SandwichResult sandwich(
    const std::function<MatrixXd(const VectorXd&)>& phi_at_theta,
    const VectorXd& theta_hat_flat,
    const std::optional<NuisanceCorrection>& correction, double cond_limit,
    double jacobian_step) {
  const MatrixXd phi = phi_at_theta(theta_hat_flat);
  const int n = static_cast<int>(phi.rows());
  const int p = static_cast<int>(phi.cols());
  if (n < 2) throw InferenceError("sandwich: need at least two records");

  auto mean_phi = [&](const VectorXd& th) {
    return VectorXd(phi_at_theta(th).colwise().mean().transpose());
  };
  SandwichResult out;
  out.A = numeric_jacobian(mean_phi, theta_hat_flat, jacobian_step);
  out.B = phi.transpose() * phi / n;

  Eigen::JacobiSVD<MatrixXd> svd(out.A,
                                 Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smin = svd.singularValues()(p - 1);
  out.condition_number =
      smin > 0 ? svd.singularValues()(0) / smin
               : std::numeric_limits<double>::infinity();
  if (!(out.condition_number < cond_limit))
    throw InferenceError("sandwich: ill-conditioned bread, condition number " +
                         std::to_string(out.condition_number));
  const MatrixXd a_inv = svd.solve(MatrixXd::Identity(p, p));
  auto wrap = [&](const MatrixXd& meat) {
    MatrixXd c = a_inv * meat * a_inv.transpose() / n;
    return MatrixXd((c + c.transpose()) / 2.0);
  };
  out.covariance = wrap(out.B);

  if (correction) {
    const NuisanceCorrection& corr = *correction;
    auto mean_phi_nuis = [&](const VectorXd& nu) {
      return VectorXd(corr.phi_at(nu).colwise().mean().transpose());
    };
    // D = E[d phi / d nuis'], K = D J^{-1} with J = E[d score / d nuis']
    const MatrixXd D =
        numeric_jacobian(mean_phi_nuis, corr.nuis_hat, corr.jacobian_step);
    Eigen::FullPivLU<MatrixXd> lu(corr.score_jacobian);
    if (!lu.isInvertible())
      throw InferenceError("sandwich: singular nuisance score Jacobian");
    const MatrixXd K = D * lu.inverse();
    const MatrixXd phi_corr = phi - corr.scores * K.transpose();
    out.B_corrected = MatrixXd(phi_corr.transpose() * phi_corr / n);
    out.covariance_corrected = wrap(*out.B_corrected);
  }
  return out;
}

std::vector<std::pair<double, double>> confidence_intervals(
    const VectorXd& theta_flat, const VectorXd& se, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw InferenceError("confidence_intervals: level must be in (0, 1)");
  if (theta_flat.size() != se.size())
    throw InferenceError("confidence_intervals: se length mismatch");
  const double zq = normal_quantile((1.0 + level) / 2.0);
  std::vector<std::pair<double, double>> out;
  out.reserve(theta_flat.size());
  for (int j = 0; j < theta_flat.size(); ++j)
    out.emplace_back(theta_flat(j) - zq * se(j), theta_flat(j) + zq * se(j));
  return out;
}

}  // namespace cencov
