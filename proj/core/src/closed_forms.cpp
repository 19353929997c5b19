#include "cencov/closed_forms.hpp"

#include <cmath>
#include <numbers>

#include "cencov/numerics.hpp"

namespace cencov {

namespace {
constexpr double kPiLo = 1e-12;
constexpr double kPiHi = 1.0 - 1e-12;

double clamp_pi(double p, ClampCounter* clamps) {
  if (p < kPiLo || p > kPiHi) {
    if (clamps) ++clamps->events;
    return p < kPiLo ? kPiLo : kPiHi;
  }
  return p;
}
}  // namespace

GaussianConditional condition_on_first(const GaussianConditional& g, double v) {
  if (g.slopes.size() < 1)
    throw ClosedFormError("condition_on_first: no conditioning variables");
  GaussianConditional out;
  out.intercept = g.intercept + g.slopes(0) * v;
  out.slopes = g.slopes.tail(g.slopes.size() - 1);
  out.sd = g.sd;
  return out;
}

ProductDecomposition normal_product_decompose(const Theta& theta, double y,
                                              const VectorXd& z,
                                              const GaussianConditional& x_dist,
                                              const MeanSpec& spec) {
  spec.check(theta, z);
  if (!(x_dist.sd > 0) || !(theta.sigma > 0))
    throw ClosedFormError("normal_product_decompose: sd fields must be positive");
  const double s2 = theta.sigma * theta.sigma;
  const double sx = x_dist.sd;
  const double sx2 = sx * sx;
  const double mux = x_dist.mu(z);
  const double q = spec.x_loading(theta);
  // residual at x = 0
  const double e_star = y - mean_value(theta, 0.0, z, spec);

  ProductDecomposition d;
  d.q = q;
  d.e_star = e_star;
  d.a_star = -q * q / (2.0 * s2) - 1.0 / (2.0 * sx2);
  d.b_star = -q * e_star / s2 + mux / sx2;
  d.c_star = -e_star * e_star / (2.0 * s2) - mux * mux / (2.0 * sx2);
  d.mu_star = -d.b_star / (2.0 * d.a_star);
  d.sd_star = std::sqrt(-1.0 / (2.0 * d.a_star));
  d.log_D = -0.5 * std::log(2.0 * std::numbers::pi * (s2 + q * q * sx2)) +
            d.c_star - d.b_star * d.b_star / (4.0 * d.a_star);
  return d;
}

VectorXd psi_closed(const Theta& theta, double y, const VectorXd& z,
                    const GaussianConditional& x_dist, const MeanSpec& spec) {
  const ProductDecomposition d =
      normal_product_decompose(theta, y, z, x_dist, spec);
  const double s = theta.sigma;
  const double s2 = s * s;
  const double m1 = d.mu_star;
  const double m2 = d.sd_star * d.sd_star + m1 * m1;  // E[X^2 | Y, Z]
  const double Ee = d.q * m1 + d.e_star;              // E[eps]
  const double Exe = d.q * m2 + d.e_star * m1;        // E[X eps]
  const double Ee2 = d.q * d.q * m2 + 2.0 * d.q * d.e_star * m1 +
                     d.e_star * d.e_star;             // E[eps^2]

  const int zdim = static_cast<int>(z.size());
  VectorXd es(theta.dim());  // E[ S^F | Y, Z ]
  es(0) = Ee / s2;
  if (spec.form == MeanForm::LinearX) {
    es(1) = Exe / s2;
    for (int p = 0; p < zdim; ++p) es(2 + p) = z(p) * Ee / s2;
  } else {
    es(1) = (z(spec.age_column) * Ee - Exe) / s2;
    int slot = 2;
    for (int p = 0; p < zdim; ++p) {
      if (p == spec.age_column) continue;
      es(slot++) = z(p) * Ee / s2;
    }
  }
  es(theta.dim() - 1) = -1.0 / s + Ee2 / (s2 * s);
  return -es;
}

double censored_marginal_loglik(const Theta& theta, double y, double w,
                                const VectorXd& z,
                                const GaussianConditional& x_dist,
                                const MeanSpec& spec) {
  const ProductDecomposition d =
      normal_product_decompose(theta, y, z, x_dist, spec);
  double v = d.log_D;
  if (std::isfinite(w))
    v += log_normal_upper_tail((w - d.mu_star) / d.sd_star);
  return v < -745.0 ? -745.0 : v;
}

double prob_observed_xz(double x, const VectorXd& z,
                        const GaussianConditional& c_dist, Dependence dep,
                        ClampCounter* clamps) {
  double mu, sd = c_dist.sd;
  if (dep == Dependence::Independent) {
    mu = c_dist.mu(z);
  } else {
    VectorXd xc(z.size() + 1);
    xc(0) = x;
    xc.tail(z.size()) = z;
    mu = c_dist.mu(xc);
  }
  return clamp_pi(normal_upper_tail((x - mu) / sd), clamps);
}

VectorXd conditional_expectation_x(
    const std::function<VectorXd(double)>& h, const Theta& theta, double y,
    const VectorXd& z, const GaussianConditional& x_dist, const MeanSpec& spec,
    int nodes) {
  const ProductDecomposition d =
      normal_product_decompose(theta, y, z, x_dist, spec);
  const GaussHermiteRule& rule = gauss_hermite(nodes);
  const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
  VectorXd acc;
  for (int k = 0; k < nodes; ++k) {
    const double xk = d.mu_star + std::numbers::sqrt2 * d.sd_star * rule.nodes(k);
    VectorXd hv = h(xk) * (rule.weights(k) * inv_sqrt_pi);
    if (acc.size() == 0)
      acc = std::move(hv);
    else
      acc += hv;
  }
  return acc;
}

VectorXd conditional_expectation_x_checked(
    const std::function<VectorXd(double)>& h, const Theta& theta, double y,
    const VectorXd& z, const GaussianConditional& x_dist, const MeanSpec& spec,
    int nodes) {
  VectorXd a = conditional_expectation_x(h, theta, y, z, x_dist, spec, nodes);
  VectorXd b = conditional_expectation_x(h, theta, y, z, x_dist, spec, 2 * nodes);
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  if ((a - b).cwiseAbs().maxCoeff() / scale > 1e-6)
    throw ClosedFormError(
        "conditional_expectation_x: node counts disagree beyond 1e-6 relative");
  return b;
}

double prob_observed_yz(const Theta& theta, double y, const VectorXd& z,
                        const GaussianConditional& x_dist,
                        const GaussianConditional& c_dist, Dependence dep,
                        const MeanSpec& spec, ClampCounter* clamps, int nodes) {
  VectorXd v = conditional_expectation_x(
      [&](double x) {
        VectorXd out(1);
        out(0) = prob_observed_xz(x, z, c_dist, dep, nullptr);
        return out;
      },
      theta, y, z, x_dist, spec, nodes);
  return clamp_pi(v(0), clamps);
}

VectorXd psi_effective(AugKind kind, const Theta& theta, double y,
                       const VectorXd& z, const GaussianConditional& x_dist,
                       const MeanSpec& spec, const PiContext& pi, int nodes) {
  const int p = theta.dim();
  // stack [weighted score, weight] so one quadrature pass yields both moments
  auto stacked = [&](const std::function<double(double)>& wfun) {
    return conditional_expectation_x(
        [&](double x) {
          VectorXd out(p + 1);
          out.head(p) = score_full(theta, y, x, z, spec) * wfun(x);
          out(p) = wfun(x);
          return out;
        },
        theta, y, z, x_dist, spec, nodes);
  };
  switch (kind) {
    case AugKind::ACC: {
      VectorXd m = stacked([&](double x) { return pi.pi_xz(x); });
      if (std::abs(m(p)) < 1e-10)
        throw ClosedFormError("psi_effective: degenerate denominator E[pi]");
      return -m.head(p) / m(p);
    }
    case AugKind::MACC: {
      VectorXd num = stacked([&](double x) { return pi.pi_xz(x) - 1.0; });
      VectorXd den = conditional_expectation_x(
          [&](double x) {
            VectorXd out(1);
            out(0) = 1.0 - 1.0 / pi.pi_xz(x);
            return out;
          },
          theta, y, z, x_dist, spec, nodes);
      if (std::abs(den(0)) < 1e-10)
        throw ClosedFormError(
            "psi_effective: degenerate denominator E[1 - 1/pi]");
      return num.head(p) / den(0);
    }
    case AugKind::AIPW: {
      VectorXd m = stacked([&](double x) { return 1.0 - 1.0 / pi.pi_xz(x); });
      if (std::abs(m(p)) < 1e-10)
        throw ClosedFormError(
            "psi_effective: degenerate denominator E[1 - 1/pi]");
      return m.head(p) / m(p);
    }
  }
  throw ClosedFormError("psi_effective: unknown kind");
}

}  // namespace cencov
