#include "cencov/model.hpp"

#include <cmath>
#include <numbers>

namespace cencov {

double mean_value(const Theta& theta, double x, const VectorXd& z,
                  const MeanSpec& spec) {
  spec.check(theta, z);
  const int zdim = static_cast<int>(z.size());
  double m = theta.beta(0);
  if (spec.form == MeanForm::LinearX) {
    m += theta.beta(1) * x;
    for (int p = 0; p < zdim; ++p) m += theta.beta(2 + p) * z(p);
  } else {
    m += theta.beta(1) * (z(spec.age_column) - x);
    int slot = 2;
    for (int p = 0; p < zdim; ++p) {
      if (p == spec.age_column) continue;
      m += theta.beta(slot++) * z(p);
    }
  }
  return m;
}

VectorXd score_full(const Theta& theta, double y, double x, const VectorXd& z,
                    const MeanSpec& spec) {
  spec.check(theta, z);
  if (!(theta.sigma > 0)) throw ModelError("score_full: sigma must be positive");
  const double s2 = theta.sigma * theta.sigma;
  const double eps = y - mean_value(theta, x, z, spec);
  const int zdim = static_cast<int>(z.size());
  VectorXd sc(theta.dim());
  sc(0) = eps / s2;
  if (spec.form == MeanForm::LinearX) {
    sc(1) = x * eps / s2;
    for (int p = 0; p < zdim; ++p) sc(2 + p) = z(p) * eps / s2;
  } else {
    sc(1) = (z(spec.age_column) - x) * eps / s2;
    int slot = 2;
    for (int p = 0; p < zdim; ++p) {
      if (p == spec.age_column) continue;
      sc(slot++) = z(p) * eps / s2;
    }
  }
  sc(theta.dim() - 1) = -1.0 / theta.sigma + eps * eps / (s2 * theta.sigma);
  return sc;
}

double log_density_y(const Theta& theta, double y, double x, const VectorXd& z,
                     const MeanSpec& spec) {
  if (!(theta.sigma > 0))
    throw ModelError("log_density_y: sigma must be positive");
  const double eps = y - mean_value(theta, x, z, spec);
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(theta.sigma) -
         0.5 * eps * eps / (theta.sigma * theta.sigma);
}

}  // namespace cencov
