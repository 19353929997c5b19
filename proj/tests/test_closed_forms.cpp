#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cencov/closed_forms.hpp>
#include <cencov/numerics.hpp>
#include <cmath>
#include <limits>

using namespace cencov;
using boost::math::quadrature::gauss_kronrod;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Theta tte_theta() {
  Theta t;
  t.beta = Eigen::Vector3d(1.0, 3.0, 2.0);
  t.sigma = 1.0;
  return t;
}

MeanSpec tte_spec() {
  MeanSpec s;
  s.form = MeanForm::TimeToEvent;
  s.age_column = 0;
  return s;
}

GaussianConditional x_dist_at(const Eigen::VectorXd& z) {
  // f_{X | Z = z} with the conditioning already folded in: slopes over z.
  GaussianConditional g;
  g.intercept = 0.1;
  g.slopes = Eigen::VectorXd(z.size());
  for (int i = 0; i < z.size(); ++i) g.slopes(i) = 0.3 + 0.1 * i;
  g.sd = 0.9;
  return g;
}

// Adaptive-quadrature marginal: integral over x of f_{Y|X,Z}(y|x,z) f_X(x|z),
// restricted to x > w. Entirely independent of the production code paths.
double oracle_marginal(const Theta& t, double y, double w,
                       const Eigen::VectorXd& z, const GaussianConditional& xd,
                       const MeanSpec& spec, double* err = nullptr) {
  const double mu_x = xd.mu(z);
  auto integrand = [&](double x) {
    const double fy = std::exp(log_density_y(t, y, x, z, spec));
    const double fx = normal_pdf((x - mu_x) / xd.sd) / xd.sd;
    return fy * fx;
  };
  double e = 0;
  const double lo = std::isinf(w) ? mu_x - 12 * xd.sd : std::max(w, mu_x - 12 * xd.sd);
  const double v = gauss_kronrod<double, 61>::integrate(
      integrand, lo, mu_x + 12 * xd.sd, 12, 1e-13, &e);
  if (err) *err = e;
  return v;
}

// Oracle posterior expectation E[h(X) | y, z] by adaptive quadrature.
double oracle_posterior_mean(const std::function<double(double)>& h,
                             const Theta& t, double y,
                             const Eigen::VectorXd& z,
                             const GaussianConditional& xd,
                             const MeanSpec& spec) {
  const double mu_x = xd.mu(z);
  auto weighted = [&](double x) {
    const double fy = std::exp(log_density_y(t, y, x, z, spec));
    const double fx = normal_pdf((x - mu_x) / xd.sd) / xd.sd;
    return h(x) * fy * fx;
  };
  const double num = gauss_kronrod<double, 61>::integrate(
      weighted, mu_x - 12 * xd.sd, mu_x + 12 * xd.sd, 12, 1e-13);
  return num / oracle_marginal(t, y, -kInf, z, xd, spec);
}

}  // namespace

TEST_CASE("normal_product_decompose satisfies the joint-density identity") {
  // log f_{Y|X,Z}(y|x,z) + log f_X(x|z) must equal
  // log N(x; mu*, sd*^2) + log D for every x.
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Rng rng(101, 0);
  for (int rep = 0; rep < 30; ++rep) {
    Eigen::VectorXd z(2);
    z << rng.normal(), rng.normal();
    const double y = 3 * rng.normal();
    const GaussianConditional xd = x_dist_at(z);
    const auto d = normal_product_decompose(t, y, z, xd, spec);
    const double mu_x = xd.mu(z);
    for (double x : {-2.0, -0.3, 0.0, 0.9, 2.4}) {
      const double lhs = log_density_y(t, y, x, z, spec) +
                         std::log(normal_pdf((x - mu_x) / xd.sd) / xd.sd);
      const double rhs =
          std::log(normal_pdf((x - d.mu_star) / d.sd_star) / d.sd_star) +
          d.log_D;
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
  }
}

TEST_CASE("decomposition residual form: eps = q x + e_star") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Eigen::VectorXd z(2);
  z << 0.4, -0.2;
  const double y = 1.3;
  const auto d = normal_product_decompose(t, y, z, x_dist_at(z), spec);
  for (double x : {-1.0, 0.0, 2.0}) {
    const double eps = y - mean_value(t, x, z, spec);
    CHECK(eps == doctest::Approx(d.q * x + d.e_star).epsilon(1e-12));
  }
  CHECK(d.q == doctest::Approx(spec.x_loading(t)));
}

TEST_CASE("marginal density D against adaptive quadrature") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Rng rng(102, 0);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd z(2);
    z << rng.normal(), rng.normal();
    const double y = 2 * rng.normal();
    const GaussianConditional xd = x_dist_at(z);
    const auto d = normal_product_decompose(t, y, z, xd, spec);
    const double ref = oracle_marginal(t, y, -kInf, z, xd, spec);
    CHECK(std::exp(d.log_D) == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("psi_closed equals the quadrature posterior mean of minus the score") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Rng rng(103, 0);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd z(2);
    z << rng.normal(), rng.normal();
    const double y = t.beta(0) + 2 * rng.normal();
    const GaussianConditional xd = x_dist_at(z);
    const Eigen::VectorXd psi = psi_closed(t, y, z, xd, spec);
    for (int j = 0; j < psi.size(); ++j) {
      const double ref = oracle_posterior_mean(
          [&](double x) { return -score_full(t, y, x, z, spec)(j); }, t, y, z,
          xd, spec);
      CHECK(psi(j) == doctest::Approx(ref).epsilon(1e-8).scale(1.0));
    }
  }
}

TEST_CASE("censored_marginal_loglik against adaptive quadrature") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Rng rng(104, 0);
  for (int rep = 0; rep < 40; ++rep) {
    Eigen::VectorXd z(2);
    z << rng.normal(), rng.normal();
    const double y = t.beta(0) + 2 * rng.normal();
    const GaussianConditional xd = x_dist_at(z);
    const double w = xd.mu(z) + 1.5 * rng.normal();
    const double ours = censored_marginal_loglik(t, y, w, z, xd, spec);
    const double ref = std::log(oracle_marginal(t, y, w, z, xd, spec));
    CHECK(ours == doctest::Approx(ref).epsilon(1e-8));
  }
}

TEST_CASE("censored_marginal_loglik limits and special points") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Eigen::VectorXd z(2);
  z << 0.3, -0.5;
  const GaussianConditional xd = x_dist_at(z);
  const auto d = normal_product_decompose(t, 1.2, z, xd, spec);
  // No truncation: the full marginal.
  CHECK(censored_marginal_loglik(t, 1.2, -kInf, z, xd, spec) ==
        doctest::Approx(d.log_D).epsilon(1e-12));
  // Truncation at the posterior mode removes exactly half the mass.
  CHECK(censored_marginal_loglik(t, 1.2, d.mu_star, z, xd, spec) ==
        doctest::Approx(d.log_D + std::log(0.5)).epsilon(1e-12));
  // The documented floor far in the tail.
  CHECK(censored_marginal_loglik(t, 1.2, d.mu_star + 100 * d.sd_star, z, xd,
                                 spec) >= d.log_D - 745.0 - 1e-9);
}

TEST_CASE("prob_observed_xz is the censoring-variable upper tail") {
  GaussianConditional c_given_z;
  c_given_z.intercept = 0.5;
  c_given_z.slopes = Eigen::VectorXd::Constant(1, 0.2);
  c_given_z.sd = 1.4;
  Eigen::VectorXd z(1);
  z << 0.8;
  const double x = 1.1;
  const double mu_c = c_given_z.mu(z);
  const double ref = normal_upper_tail((x - mu_c) / c_given_z.sd);
  CHECK(prob_observed_xz(x, z, c_given_z, Dependence::Independent) ==
        doctest::Approx(ref).epsilon(1e-12));

  // Dependent mode conditions on (x, z...): first slope multiplies x.
  GaussianConditional c_given_xz;
  c_given_xz.intercept = 0.1;
  c_given_xz.slopes = Eigen::VectorXd(2);
  c_given_xz.slopes << 0.4, 0.2;
  c_given_xz.sd = 1.2;
  Eigen::VectorXd xz(2);
  xz << x, z(0);
  const double ref_dep = normal_upper_tail((x - c_given_xz.mu(xz)) / c_given_xz.sd);
  CHECK(prob_observed_xz(x, z, c_given_xz, Dependence::Dependent) ==
        doctest::Approx(ref_dep).epsilon(1e-12));
}

TEST_CASE("prob_observed_xz clamps and counts extreme probabilities") {
  GaussianConditional c;
  c.intercept = 0.0;
  c.slopes = Eigen::VectorXd::Zero(1);
  c.sd = 1.0;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  ClampCounter clamps;
  const double lo = prob_observed_xz(50.0, z, c, Dependence::Independent, &clamps);
  CHECK(lo == doctest::Approx(1e-12));
  const double hi = prob_observed_xz(-50.0, z, c, Dependence::Independent, &clamps);
  CHECK(hi == doctest::Approx(1.0 - 1e-12));
  CHECK(clamps.events == 2);
}

TEST_CASE("prob_observed_yz against adaptive quadrature") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  GaussianConditional c;
  c.intercept = 0.3;
  c.slopes = Eigen::VectorXd(2);
  c.slopes << 0.1, -0.2;
  c.sd = 1.8;
  Rng rng(105, 0);
  for (int rep = 0; rep < 15; ++rep) {
    Eigen::VectorXd z(2);
    z << rng.normal(), rng.normal();
    const double y = t.beta(0) + 2 * rng.normal();
    const GaussianConditional xd = x_dist_at(z);
    const double ref = oracle_posterior_mean(
        [&](double x) {
          return normal_upper_tail((x - c.mu(z)) / c.sd);
        },
        t, y, z, xd, spec);
    CHECK(prob_observed_yz(t, y, z, xd, c, Dependence::Independent, spec) ==
          doctest::Approx(ref).epsilon(1e-7));
  }
}

TEST_CASE("conditional_expectation_x is exact for polynomials") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Eigen::VectorXd z(2);
  z << 0.7, -0.3;
  const GaussianConditional xd = x_dist_at(z);
  const auto d = normal_product_decompose(t, 0.9, z, xd, spec);
  auto h = [](double x) {
    Eigen::VectorXd v(2);
    v(0) = 1.0;
    v(1) = x * x * x;
    return v;
  };
  Eigen::VectorXd e = conditional_expectation_x(h, t, 0.9, z, xd, spec, 20);
  // Gaussian third raw moment: mu^3 + 3 mu sd^2.
  const double m3 =
      std::pow(d.mu_star, 3) + 3 * d.mu_star * d.sd_star * d.sd_star;
  CHECK(e(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e(1) == doctest::Approx(m3).epsilon(1e-10));
}

TEST_CASE("checked conditional expectation flags quadrature-unstable integrands") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Eigen::VectorXd z(2);
  z << 0.7, -0.3;
  const GaussianConditional xd = x_dist_at(z);
  const auto d = normal_product_decompose(t, 0.9, z, xd, spec);
  const double edge = d.mu_star + 0.37 * d.sd_star;
  auto step = [&](double x) {
    return Eigen::VectorXd::Constant(1, x > edge ? 1.0 : 0.0);
  };
  CHECK_THROWS_AS(
      conditional_expectation_x_checked(step, t, 0.9, z, xd, spec, 20),
      ClosedFormError);
  auto smooth = [&](double x) { return Eigen::VectorXd::Constant(1, x * x); };
  CHECK_NOTHROW(
      conditional_expectation_x_checked(smooth, t, 0.9, z, xd, spec, 20));
}

TEST_CASE("effective augmentation forms against quadrature ratios") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  GaussianConditional c;
  c.intercept = 0.3;
  c.slopes = Eigen::VectorXd(2);
  c.slopes << 0.1, -0.2;
  c.sd = 1.8;
  Rng rng(106, 0);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd z(2);
    z << rng.normal(), rng.normal();
    const double y = t.beta(0) + 2 * rng.normal();
    const GaussianConditional xd = x_dist_at(z);
    PiContext pc;
    pc.pi_xz = [&](double x) {
      return normal_upper_tail((x - c.mu(z)) / c.sd);
    };
    auto mean_of = [&](const std::function<double(double)>& h) {
      return oracle_posterior_mean(h, t, y, z, xd, spec);
    };
    for (AugKind kind : {AugKind::ACC, AugKind::MACC, AugKind::AIPW}) {
      const Eigen::VectorXd psi =
          psi_effective(kind, t, y, z, xd, spec, pc, 60);
      for (int j = 0; j < psi.size(); ++j) {
        auto sj = [&](double x) { return score_full(t, y, x, z, spec)(j); };
        double ref = 0;
        switch (kind) {
          case AugKind::ACC:
            ref = -mean_of([&](double x) { return pc.pi_xz(x) * sj(x); }) /
                  mean_of(pc.pi_xz);
            break;
          case AugKind::MACC:
            ref = mean_of([&](double x) { return (pc.pi_xz(x) - 1) * sj(x); }) /
                  mean_of([&](double x) { return 1 - 1 / pc.pi_xz(x); });
            break;
          case AugKind::AIPW:
            ref = mean_of(
                      [&](double x) { return (1 - 1 / pc.pi_xz(x)) * sj(x); }) /
                  mean_of([&](double x) { return 1 - 1 / pc.pi_xz(x); });
            break;
        }
        CHECK(psi(j) == doctest::Approx(ref).epsilon(1e-6).scale(1.0));
      }
    }
  }
}

TEST_CASE("constant observation probability collapses ACC onto the closed form") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Eigen::VectorXd z(2);
  z << 0.5, 0.1;
  const GaussianConditional xd = x_dist_at(z);
  PiContext pc;
  pc.pi_xz = [](double) { return 0.37; };
  const Eigen::VectorXd acc = psi_effective(AugKind::ACC, t, 1.1, z, xd, spec, pc);
  const Eigen::VectorXd closed = psi_closed(t, 1.1, z, xd, spec);
  CHECK((acc - closed).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("degenerate denominators are rejected") {
  const Theta t = tte_theta();
  const MeanSpec spec = tte_spec();
  Eigen::VectorXd z(2);
  z << 0.5, 0.1;
  const GaussianConditional xd = x_dist_at(z);
  PiContext certain;
  certain.pi_xz = [](double) { return 1.0; };  // E[1 - 1/pi] = 0
  CHECK_THROWS_AS(psi_effective(AugKind::MACC, t, 1.1, z, xd, spec, certain),
                  ClosedFormError);
  CHECK_THROWS_AS(psi_effective(AugKind::AIPW, t, 1.1, z, xd, spec, certain),
                  ClosedFormError);
}

TEST_CASE("condition_on_first folds a value into the intercept") {
  GaussianConditional g;
  g.intercept = 0.2;
  g.slopes = Eigen::VectorXd(2);
  g.slopes << 0.7, -0.4;
  g.sd = 1.1;
  GaussianConditional folded = condition_on_first(g, 1.5);
  Eigen::VectorXd rest(1);
  rest << -2.0;
  Eigen::VectorXd full(2);
  full << 1.5, -2.0;
  CHECK(folded.mu(rest) == doctest::Approx(g.mu(full)).epsilon(1e-13));
  CHECK(folded.sd == g.sd);

  GaussianConditional none;
  none.slopes = Eigen::VectorXd(0);
  CHECK_THROWS_AS(condition_on_first(none, 0.0), ClosedFormError);
}

TEST_CASE("invalid scale parameters are rejected") {
  Theta t = tte_theta();
  Eigen::VectorXd z(2);
  z << 0.0, 0.0;
  GaussianConditional xd = x_dist_at(z);
  xd.sd = 0.0;
  CHECK_THROWS_AS(normal_product_decompose(t, 1.0, z, xd, tte_spec()),
                  ClosedFormError);
}
