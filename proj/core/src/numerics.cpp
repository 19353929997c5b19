#include "cencov/numerics.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace cencov {

SolveResult solve_estimating_equation(
    const std::function<VectorXd(const VectorXd&)>& phi_mean, VectorXd x0,
    const SolverConfig& cfg, int sigma_index) {
  if (cfg.max_iter < 1 || cfg.tol < 0)
    throw NumericsError("solver config: max_iter >= 1 and tol >= 0 required");
  SolveResult res;
  res.x = std::move(x0);
  VectorXd r = phi_mean(res.x);
  double rnorm = r.lpNorm<Eigen::Infinity>();
  for (int it = 0; it < cfg.max_iter; ++it) {
    res.diag.iterations = it;
    res.diag.residual_norm = rnorm;
    if (rnorm <= cfg.tol) {
      res.diag.converged = true;
      return res;
    }
    MatrixXd J = numeric_jacobian(phi_mean, res.x, cfg.jacobian_step);
    Eigen::FullPivLU<MatrixXd> lu(J);
    if (!lu.isInvertible()) {
      // regularized retry
      MatrixXd Jr = J + 1e-8 * MatrixXd::Identity(J.rows(), J.cols());
      lu.compute(Jr);
      if (!lu.isInvertible())
        throw NumericsError("singular Jacobian in estimating-equation solver");
    }
    VectorXd step = lu.solve(-r);
    double lambda = cfg.step_damping;
    // keep sigma strictly positive
    if (sigma_index >= 0 && step(sigma_index) < 0) {
      double room = res.x(sigma_index) - cfg.sigma_floor;
      while (lambda * (-step(sigma_index)) >= room && lambda > 1e-12)
        lambda *= 0.5;
    }
    bool accepted = false;
    while (lambda > 1e-12) {
      VectorXd xn = res.x + lambda * step;
      VectorXd rn = phi_mean(xn);
      double rnn = rn.lpNorm<Eigen::Infinity>();
      if (std::isfinite(rnn) && rnn < rnorm) {
        res.x = std::move(xn);
        r = std::move(rn);
        rnorm = rnn;
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) {
      // stalled line search: accept a tiny step only if finite, else stop
      res.diag.iterations = it + 1;
      res.diag.residual_norm = rnorm;
      res.diag.converged = rnorm <= cfg.tol;
      return res;
    }
  }
  res.diag.iterations = cfg.max_iter;
  res.diag.residual_norm = rnorm;
  res.diag.converged = rnorm <= cfg.tol;
  return res;
}

MatrixXd numeric_jacobian(const std::function<VectorXd(const VectorXd&)>& f,
                          const VectorXd& x, double step) {
  const int n = static_cast<int>(x.size());
  MatrixXd J;
  for (int j = 0; j < n; ++j) {
    const double h = step * (1.0 + std::abs(x(j)));
    VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    VectorXd col = (f(xp) - f(xm)) / (2.0 * h);
    if (J.size() == 0) J.resize(col.size(), n);
    J.col(j) = col;
  }
  return J;
}

double normal_upper_tail(double t) {
  return 0.5 * std::erfc(t / std::numbers::sqrt2);
}

double log_normal_upper_tail(double t) {
  const double v = normal_upper_tail(t);
  if (v > 0) {
    const double lv = std::log(v);
    return lv < -745.0 ? -745.0 : lv;
  }
  return -745.0;
}

double normal_pdf(double t) {
  return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw NumericsError("normal_quantile: p must be in (0,1)");
  // Phi^{-1}(p) = -sqrt(2) erfc^{-1}(2p)
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

const GaussHermiteRule& gauss_hermite(int n) {
  if (n < 1 || n > 200)
    throw NumericsError("gauss_hermite: n must be in [1, 200]");
  static std::map<int, GaussHermiteRule> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  GaussHermiteRule rule;
  if (n == 1) {
    rule.nodes = VectorXd::Zero(1);
    rule.weights = VectorXd::Constant(1, std::sqrt(std::numbers::pi));
  } else {
    // symmetric tridiagonal Jacobi matrix: diag 0, offdiag sqrt(k/2)
    MatrixXd T = MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
      const double b = std::sqrt(k / 2.0);
      T(k, k - 1) = b;
      T(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
    rule.nodes = es.eigenvalues();
    rule.weights.resize(n);
    const double mu0 = std::sqrt(std::numbers::pi);  // integral of exp(-t^2)
    for (int k = 0; k < n; ++k) {
      const double v0 = es.eigenvectors()(0, k);
      rule.weights(k) = mu0 * v0 * v0;
    }
  }
  return cache.emplace(n, std::move(rule)).first->second;
}

namespace {
std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}
}  // namespace

Rng::Rng(std::uint64_t master_seed, std::uint64_t stream_index) {
  // xoshiro256** state from splitmix64 over the (seed, stream) key
  std::uint64_t st = master_seed * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull +
                     stream_index * 0x2545F4914F6CDD1Dull;
  for (auto& s : s_) s = splitmix64(st);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

MatrixXd mvn_sample(const VectorXd& mean, const MatrixXd& cov, int n, Rng& rng) {
  const int d = static_cast<int>(mean.size());
  if (cov.rows() != d || cov.cols() != d)
    throw NumericsError("mvn_sample: covariance dimension mismatch");
  MatrixXd L;
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) {
    L = llt.matrixL();
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    VectorXd ev = es.eigenvalues();
    for (int i = 0; i < d; ++i) {
      if (ev(i) < -1e-10)
        throw NumericsError("mvn_sample: covariance has negative eigenvalue");
      if (ev(i) < 0) ev(i) = 0;
    }
    L = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
  }
  MatrixXd out(n, d);
  VectorXd z(d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) z(j) = rng.normal();
    out.row(i) = (mean + L * z).transpose();
  }
  return out;
}

}  // namespace cencov
