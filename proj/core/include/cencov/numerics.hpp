#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

// Shared numerical kernels: Newton root solving for estimating equations,
// numeric Jacobians, normal tail functions, Gauss-Hermite rules and seeded
// multivariate-normal sampling.
namespace cencov {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverConfig {
  int max_iter = 100;
  double tol = 1e-8;            // inf-norm of the averaged estimating function
  double step_damping = 1.0;    // initial step scale, halved on failed steps
  double jacobian_step = 1e-6;  // scaled by (1 + |x_j|) per component
  double sigma_floor = 1e-8;    // positivity guard for a designated component
};

struct SolveDiagnostics {
  bool converged = false;
  int iterations = 0;
  double residual_norm = 0.0;
};

struct SolveResult {
  VectorXd x;
  SolveDiagnostics diag;
};

// Damped Newton on phi_mean(x) = 0. If sigma_index >= 0, steps are shortened
// so that x[sigma_index] stays above cfg.sigma_floor. A singular Jacobian is
// retried once with a 1e-8 ridge. Non-convergence is reported through the
// diagnostics (last iterate retained), not by throwing.
SolveResult solve_estimating_equation(
    const std::function<VectorXd(const VectorXd&)>& phi_mean, VectorXd x0,
    const SolverConfig& cfg = {}, int sigma_index = -1);

// Central-difference Jacobian, column j = (f(x+h_j e_j) - f(x-h_j e_j))/(2 h_j)
// with h_j = step * (1 + |x_j|).
MatrixXd numeric_jacobian(const std::function<VectorXd(const VectorXd&)>& f,
                          const VectorXd& x, double step = 1e-6);

// Upper tail of the standard normal CDF and its logarithm (clamped at -745).
double normal_upper_tail(double t);
double log_normal_upper_tail(double t);
double normal_pdf(double t);
double normal_quantile(double p);

// Golub-Welsch Gauss-Hermite rule for weight exp(-t^2); results are cached
// per node count. 1 <= n <= 200.
struct GaussHermiteRule {
  VectorXd nodes;
  VectorXd weights;
};
const GaussHermiteRule& gauss_hermite(int n);

// Deterministic stream keyed by (master_seed, stream_index); identical keys
// produce bit-identical draws. Normal deviates use Box-Muller on 53-bit
// uniforms so the stream does not depend on the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t master_seed, std::uint64_t stream_index = 0);
  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();

 private:
  std::uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// n draws (rows) from N(mean, cov) via Cholesky, with a symmetric-eigenvalue
// fallback for PSD rank deficiency. Throws if cov has an eigenvalue below
// -1e-10.
MatrixXd mvn_sample(const VectorXd& mean, const MatrixXd& cov, int n, Rng& rng);

}  // namespace cencov
