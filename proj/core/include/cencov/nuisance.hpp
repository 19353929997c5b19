#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cencov/closed_forms.hpp"
#include "cencov/model.hpp"

// Nuisance distributions: joint Gaussian MLE for the censoring/covariate
// blocks from (W, Delta, Z), logistic regression for observation
// probabilities given (Y, Z), and misspecification injectors for simulation
// scenarios.
namespace cencov {

using Eigen::MatrixXd;

struct NuisanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Conditional of C given (X, Z) derived from the marginal blocks and a known
// residual covariance rho = Cov(X, C | Z); slopes ordered (x, z...).
GaussianConditional derive_c_given_xz(const GaussianConditional& x_given_z,
                                      const GaussianConditional& c_given_z,
                                      double resid_cov);
// Conditional of X given (C, Z); slopes ordered (c, z...).
GaussianConditional derive_x_given_cz(const GaussianConditional& x_given_z,
                                      const GaussianConditional& c_given_z,
                                      double resid_cov);

// Packed nuisance parameter vector: (x intercept, x slopes, log x sd,
// c intercept, c slopes, log c sd). The log scale keeps Newton unconstrained;
// influence-function corrections are invariant to this choice.
VectorXd pack_alpha(const GaussianConditional& x_given_z,
                    const GaussianConditional& c_given_z);
std::pair<GaussianConditional, GaussianConditional> unpack_alpha(
    const VectorXd& alpha, int zdim);

struct AlphaFit {
  VectorXd alpha;                      // packed, at the optimum
  GaussianConditional x_given_z;       // unpacked, natural scale
  GaussianConditional c_given_z;       // marginal C | Z block
  double resid_cov_xc = 0.0;           // known Cov(X, C | Z); 0 when independent
  Dependence dependence = Dependence::Independent;
  MatrixXd scores;                     // n x q per-record scores at alpha
  MatrixXd score_jacobian;             // q x q, d(mean score)/d alpha'
  bool converged = false;
  bool c_block_fitted = true;          // false when no censored records exist
};

// Per-record log-likelihood of (w, delta) given z under packed alpha.
double alpha_record_loglik(const VectorXd& alpha, double w, int delta,
                           const VectorXd& z, Dependence dep, double resid_cov);

// Joint MLE of the Gaussian nuisance blocks from censored records.
// Independent mode fixes Cov(X, C | Z) = 0; dependent mode requires the known
// residual covariance.
AlphaFit fit_alpha(const std::vector<CensoredObservation>& data, Dependence dep,
                   double known_cov_xc_given_z = 0.0);

struct LogisticFit {
  VectorXd kappa;            // full length; zero at dropped columns
  std::vector<int> kept;     // design columns used
  std::vector<int> dropped;  // constant columns removed with a warning
  MatrixXd scores;           // n x kept per-record scores at kappa
  MatrixXd score_jacobian;   // kept x kept, d(mean score)/d kappa'
  bool converged = false;
};

// Newton/IRLS logistic regression of indicator on the design matrix
// (intercept column expected by the caller). Throws on apparent perfect
// separation.
LogisticFit fit_logistic_kappa(const std::vector<int>& indicator,
                               const MatrixXd& design);

double logistic_mean(const VectorXd& kappa, const VectorXd& covariates);

struct MisspecInjector {
  enum class Kind { UniformPi, WrongXDist, UsePiYZInIPW };
  Kind kind = Kind::UniformPi;
  double lo = 0.1, hi = 0.9;      // UniformPi
  double mean = -2.0, sd = 1.0;   // WrongXDist
};

struct LambdaMatrices;  // forward declaration (estimators module)

// Everything an estimating function needs beyond the data: Gaussian blocks,
// how the censoring variable conditions, logistic coefficients, frozen
// injected probabilities, and the evaluation point for analytic pi_{Y,Z}.
struct NuisanceBundle {
  GaussianConditional x_given_z;              // f_{X|Z}
  GaussianConditional c_cond;                 // f_{C|Z} (ind) or f_{C|X,Z} (dep)
  Dependence dependence = Dependence::Independent;
  std::optional<GaussianConditional> x_given_cz;    // dep MLE only
  std::optional<Theta> theta_for_pi;                // analytic pi_{Y,Z} point
  std::optional<VectorXd> kappa;                    // logistic over (1, y, z)
  std::optional<VectorXd> injected_pi;              // frozen per-record pi
  std::optional<GaussianConditional> x_dist_for_mle;  // misspecified f_{X|Z}
  std::optional<AlphaFit> alpha_fit;                // present when estimated
  std::optional<LogisticFit> kappa_fit;             // present when estimated
};

}  // namespace cencov
