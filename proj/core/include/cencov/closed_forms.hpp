#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>

#include "cencov/model.hpp"

// Analytic Gaussian machinery: the normal-product decomposition behind the
// conditional distribution of X given (Y, Z), the closed-form augmentation
// vector, the truncated-normal marginal likelihood used by the MLE,
// observation probabilities, and conditional-expectation quadrature.
namespace cencov {

struct ClosedFormError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Dependence { Independent, Dependent };
enum class Problem { Censored, Missing };
enum class AugKind { ACC, MACC, AIPW };

// mean = intercept + slopes' cond, constant sd.
struct GaussianConditional {
  double intercept = 0.0;
  VectorXd slopes;
  double sd = 1.0;

  double mu(const VectorXd& cond) const {
    if (cond.size() != slopes.size())
      throw ClosedFormError("GaussianConditional: conditioning length " +
                            std::to_string(cond.size()) + " != slopes length " +
                            std::to_string(slopes.size()));
    return intercept + slopes.dot(cond);
  }
};

// Fold the first conditioning variable at a fixed value into the intercept.
GaussianConditional condition_on_first(const GaussianConditional& g, double v);

// Completing the square in x for f_{Y|X,Z}(y | x, z) * f_{X|.}(x):
//   exponent = a* x^2 + b* x + c*  (up to normalizing constants),
//   X | Y,Z ~ N(mu*, sd*^2),  D = integral over x (marginal density of y).
// The residual is written eps = q x + e_star with e_star the residual at x=0.
struct ProductDecomposition {
  double a_star, b_star, c_star;
  double mu_star, sd_star;
  double log_D;
  double e_star, q;
};

ProductDecomposition normal_product_decompose(const Theta& theta, double y,
                                              const VectorXd& z,
                                              const GaussianConditional& x_dist,
                                              const MeanSpec& spec);

// -E_{X|Y,Z}[ S^F_theta(y, X, z) ], in closed form via Gaussian moments.
VectorXd psi_closed(const Theta& theta, double y, const VectorXd& z,
                    const GaussianConditional& x_dist, const MeanSpec& spec);

// log of the y-marginal restricted to {X > w}:
//   log( integral_w^inf f_{Y|X,Z} f_{X|.} dx ) = log D + log UpperTail((w-mu*)/sd*),
// clamped below at -745. Pass w = -inf for the full marginal (log D).
double censored_marginal_loglik(const Theta& theta, double y, double w,
                                const VectorXd& z,
                                const GaussianConditional& x_dist,
                                const MeanSpec& spec);

struct ClampCounter {
  long events = 0;
};

// Pr(value observed | .): upper tail of the censoring-variable conditional at
// x. Independent mode conditions on z; dependent mode on (x, z). Results are
// clamped to [1e-12, 1 - 1e-12]; clamp events are counted when a counter is
// supplied.
double prob_observed_xz(double x, const VectorXd& z,
                        const GaussianConditional& c_dist, Dependence dep,
                        ClampCounter* clamps = nullptr);

// E_{X|Y,Z}[ pi_{X,Z}(X, z) ] computed by quadrature; clamped like above.
double prob_observed_yz(const Theta& theta, double y, const VectorXd& z,
                        const GaussianConditional& x_dist,
                        const GaussianConditional& c_dist, Dependence dep,
                        const MeanSpec& spec, ClampCounter* clamps = nullptr,
                        int nodes = 60);

// E_{X|Y,Z}[ h(X) ] via Gauss-Hermite recentered at (mu*, sd*). Exact for
// polynomial h; the checked variant compares node counts n and 2n and throws
// if they disagree beyond 1e-6 relative.
VectorXd conditional_expectation_x(
    const std::function<VectorXd(double)>& h, const Theta& theta, double y,
    const VectorXd& z, const GaussianConditional& x_dist, const MeanSpec& spec,
    int nodes = 60);
VectorXd conditional_expectation_x_checked(
    const std::function<VectorXd(double)>& h, const Theta& theta, double y,
    const VectorXd& z, const GaussianConditional& x_dist, const MeanSpec& spec,
    int nodes = 60);

// Observation-probability accessor for one record: pi as a function of x for
// this record's z (constant for the missing/independent problem).
struct PiContext {
  std::function<double(double)> pi_xz;
};

// Variance-optimal augmentation vectors (the "effective" Psi forms).
VectorXd psi_effective(AugKind kind, const Theta& theta, double y,
                       const VectorXd& z, const GaussianConditional& x_dist,
                       const MeanSpec& spec, const PiContext& pi,
                       int nodes = 60);

}  // namespace cencov
