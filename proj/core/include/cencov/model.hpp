#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Outcome model Y = m(X, Z; beta) + eps, eps ~ N(0, sigma^2), its score
// function, and the observed-data record types shared by every estimator.
namespace cencov {

using Eigen::VectorXd;

struct ModelError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Parameter layout is fixed as (beta0, beta_x, beta_z..., sigma) everywhere.
struct Theta {
  VectorXd beta;
  double sigma = 1.0;

  int dim() const { return static_cast<int>(beta.size()) + 1; }
  VectorXd flat() const {
    VectorXd v(dim());
    v.head(beta.size()) = beta;
    v(beta.size()) = sigma;
    return v;
  }
  static Theta from_flat(const VectorXd& v) {
    Theta t;
    t.beta = v.head(v.size() - 1);
    t.sigma = v(v.size() - 1);
    return t;
  }
};

enum class MeanForm { LinearX, TimeToEvent };

// LinearX:     m = b0 + b1*x + b_z' z              (all z columns get slopes)
// TimeToEvent: m = b0 + b1*(z[age] - x) + b_z' z_rest  (age column enters only
//              through the elapsed-time term)
struct MeanSpec {
  MeanForm form = MeanForm::LinearX;
  int age_column = 0;  // index into z, TimeToEvent only

  int beta_dim(int zdim) const {
    return 2 + zdim - (form == MeanForm::TimeToEvent ? 1 : 0);
  }
  void check(const Theta& theta, const VectorXd& z) const {
    const int zdim = static_cast<int>(z.size());
    if (form == MeanForm::TimeToEvent && (age_column < 0 || age_column >= zdim))
      throw ModelError("age_column " + std::to_string(age_column) +
                       " out of range for z of length " + std::to_string(zdim));
    if (theta.beta.size() != beta_dim(zdim))
      throw ModelError("beta has length " + std::to_string(theta.beta.size()) +
                       ", expected " + std::to_string(beta_dim(zdim)) +
                       " for z of length " + std::to_string(zdim));
  }
  // Loading of x inside the residual: eps = q*x + e_star, where e_star is the
  // residual evaluated at x = 0.
  double x_loading(const Theta& theta) const {
    return form == MeanForm::TimeToEvent ? theta.beta(1) : -theta.beta(1);
  }
};

double mean_value(const Theta& theta, double x, const VectorXd& z,
                  const MeanSpec& spec);

// Score of log f_{Y|X,Z} with respect to (beta, sigma), ordered as Theta.
VectorXd score_full(const Theta& theta, double y, double x, const VectorXd& z,
                    const MeanSpec& spec);

double log_density_y(const Theta& theta, double y, double x, const VectorXd& z,
                     const MeanSpec& spec);

// One record of the right-censored problem: w = min(x, c), delta = 1(x <= c).
struct CensoredObservation {
  double y = 0.0;
  double w = 0.0;
  int delta = 1;
  VectorXd z;
};

// One record of the missing problem: x present iff r = 1.
struct MissingObservation {
  double y = 0.0;
  std::optional<double> x;
  int r = 1;
  VectorXd z;

  void check() const {
    if ((r == 1) != x.has_value())
      throw ModelError("missing record: r must match presence of x");
  }
};

}  // namespace cencov
