#include "cencov/nuisance.hpp"

#include <cmath>
#include <numbers>

#include "cencov/numerics.hpp"

namespace cencov {

namespace {

double log_normal_pdf(double v, double mu, double sd) {
  const double r = (v - mu) / sd;
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) - 0.5 * r * r;
}

}  // namespace

GaussianConditional derive_c_given_xz(const GaussianConditional& x_given_z,
                                      const GaussianConditional& c_given_z,
                                      double resid_cov) {
  const double sx2 = x_given_z.sd * x_given_z.sd;
  const double b = resid_cov / sx2;
  const double v = c_given_z.sd * c_given_z.sd - resid_cov * resid_cov / sx2;
  if (!(v > 0))
    throw NuisanceError("derive_c_given_xz: residual covariance too large");
  GaussianConditional out;
  out.intercept = c_given_z.intercept - b * x_given_z.intercept;
  out.slopes.resize(c_given_z.slopes.size() + 1);
  out.slopes(0) = b;
  out.slopes.tail(c_given_z.slopes.size()) =
      c_given_z.slopes - b * x_given_z.slopes;
  out.sd = std::sqrt(v);
  return out;
}

GaussianConditional derive_x_given_cz(const GaussianConditional& x_given_z,
                                      const GaussianConditional& c_given_z,
                                      double resid_cov) {
  // same construction with the roles of X and C swapped
  return derive_c_given_xz(c_given_z, x_given_z, resid_cov);
}

VectorXd pack_alpha(const GaussianConditional& x_given_z,
                    const GaussianConditional& c_given_z) {
  const int zdim = static_cast<int>(x_given_z.slopes.size());
  VectorXd a(2 * (zdim + 2));
  a(0) = x_given_z.intercept;
  a.segment(1, zdim) = x_given_z.slopes;
  a(zdim + 1) = std::log(x_given_z.sd);
  a(zdim + 2) = c_given_z.intercept;
  a.segment(zdim + 3, zdim) = c_given_z.slopes;
  a(2 * zdim + 3) = std::log(c_given_z.sd);
  return a;
}

std::pair<GaussianConditional, GaussianConditional> unpack_alpha(
    const VectorXd& alpha, int zdim) {
  GaussianConditional x, c;
  x.intercept = alpha(0);
  x.slopes = alpha.segment(1, zdim);
  x.sd = std::exp(alpha(zdim + 1));
  c.intercept = alpha(zdim + 2);
  c.slopes = alpha.segment(zdim + 3, zdim);
  c.sd = std::exp(alpha(2 * zdim + 3));
  return {x, c};
}

double alpha_record_loglik(const VectorXd& alpha, double w, int delta,
                           const VectorXd& z, Dependence dep,
                           double resid_cov) {
  const int zdim = static_cast<int>(z.size());
  auto [xg, cg] = unpack_alpha(alpha, zdim);
  const double mux = xg.mu(z);
  const double muc = cg.mu(z);
  if (dep == Dependence::Independent || resid_cov == 0.0) {
    if (delta == 1)
      return log_normal_pdf(w, mux, xg.sd) +
             log_normal_upper_tail((w - muc) / cg.sd);
    return log_normal_pdf(w, muc, cg.sd) +
           log_normal_upper_tail((w - mux) / xg.sd);
  }
  const double sx2 = xg.sd * xg.sd, sc2 = cg.sd * cg.sd;
  if (delta == 1) {
    // X = w observed; C exceeds w with C | X = w Gaussian
    const double mu_c_x = muc + resid_cov / sx2 * (w - mux);
    const double v = sc2 - resid_cov * resid_cov / sx2;
    if (!(v > 0)) return -1e10;
    return log_normal_pdf(w, mux, xg.sd) +
           log_normal_upper_tail((w - mu_c_x) / std::sqrt(v));
  }
  const double mu_x_c = mux + resid_cov / sc2 * (w - muc);
  const double v = sx2 - resid_cov * resid_cov / sc2;
  if (!(v > 0)) return -1e10;
  return log_normal_pdf(w, muc, cg.sd) +
         log_normal_upper_tail((w - mu_x_c) / std::sqrt(v));
}

namespace {

// per-record numeric score of the record log-likelihood
VectorXd alpha_record_score(const VectorXd& alpha, double w, int delta,
                            const VectorXd& z, Dependence dep,
                            double resid_cov) {
  const int q = static_cast<int>(alpha.size());
  VectorXd g(q);
  for (int j = 0; j < q; ++j) {
    const double h = 1e-6 * (1.0 + std::abs(alpha(j)));
    VectorXd ap = alpha, am = alpha;
    ap(j) += h;
    am(j) -= h;
    g(j) = (alpha_record_loglik(ap, w, delta, z, dep, resid_cov) -
            alpha_record_loglik(am, w, delta, z, dep, resid_cov)) /
           (2.0 * h);
  }
  return g;
}

}  // namespace

AlphaFit fit_alpha(const std::vector<CensoredObservation>& data, Dependence dep,
                   double known_cov_xc_given_z) {
  if (data.empty()) throw NuisanceError("fit_alpha: empty dataset");
  const int n = static_cast<int>(data.size());
  const int zdim = static_cast<int>(data.front().z.size());
  if (dep == Dependence::Independent) known_cov_xc_given_z = 0.0;

  // initialize each block by least squares on the records where the variable
  // is directly observed
  auto block_init = [&](bool want_delta) {
    MatrixXd X(0, zdim + 1);
    VectorXd yv;
    std::vector<int> rows;
    for (int i = 0; i < n; ++i)
      if ((data[i].delta == 1) == want_delta) rows.push_back(i);
    GaussianConditional g;
    g.slopes = VectorXd::Zero(zdim);
    g.sd = 1.0;
    if (rows.size() < static_cast<std::size_t>(zdim + 2)) return g;
    X.resize(rows.size(), zdim + 1);
    yv.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      X(k, 0) = 1.0;
      X.row(k).tail(zdim) = data[rows[k]].z.transpose();
      yv(k) = data[rows[k]].w;
    }
    VectorXd coef = (X.transpose() * X)
                        .ldlt()
                        .solve(X.transpose() * yv);
    VectorXd resid = yv - X * coef;
    g.intercept = coef(0);
    g.slopes = coef.tail(zdim);
    g.sd = std::max(1e-3, std::sqrt(resid.squaredNorm() / resid.size()));
    return g;
  };
  GaussianConditional x0 = block_init(true);
  GaussianConditional c0 = block_init(false);
  bool any_censored = false;
  for (const auto& o : data) any_censored |= (o.delta == 0);

  VectorXd a0 = pack_alpha(x0, c0);
  const int q = static_cast<int>(a0.size());
  const double rho = known_cov_xc_given_z;

  auto mean_score = [&](const VectorXd& a) {
    VectorXd s = VectorXd::Zero(q);
    for (const auto& o : data)
      s += alpha_record_score(a, o.w, o.delta, o.z, dep, rho);
    return VectorXd(s / n);
  };

  AlphaFit fit;
  fit.dependence = dep;
  fit.resid_cov_xc = rho;
  fit.c_block_fitted = any_censored;

  SolverConfig cfg;
  cfg.tol = 1e-7;
  cfg.jacobian_step = 1e-4;
  if (!any_censored) {
    // the likelihood factorizes and only the covariate block is informative;
    // solve that block alone and keep the censoring block at its initializer
    const int qx = zdim + 2;
    auto xscore = [&](const VectorXd& ax) {
      VectorXd full = a0;
      full.head(qx) = ax;
      return VectorXd(mean_score(full).head(qx));
    };
    SolveResult r = solve_estimating_equation(xscore, a0.head(qx), cfg);
    fit.alpha = a0;
    fit.alpha.head(qx) = r.x;
    fit.converged = r.diag.converged;
  } else {
    SolveResult r = solve_estimating_equation(mean_score, a0, cfg);
    fit.alpha = r.x;
    fit.converged = r.diag.converged;
  }
  if (!fit.converged)
    throw NuisanceError("fit_alpha: Newton failed to converge");

  auto [xg, cg] = unpack_alpha(fit.alpha, zdim);
  if (xg.sd < 1e-6 || (any_censored && cg.sd < 1e-6))
    throw NuisanceError("fit_alpha: fitted sd at the boundary");
  fit.x_given_z = xg;
  fit.c_given_z = cg;

  fit.scores.resize(n, q);
  for (int i = 0; i < n; ++i)
    fit.scores.row(i) =
        alpha_record_score(fit.alpha, data[i].w, data[i].delta, data[i].z, dep,
                           rho)
            .transpose();
  fit.score_jacobian = numeric_jacobian(mean_score, fit.alpha, 1e-4);
  return fit;
}

double logistic_mean(const VectorXd& kappa, const VectorXd& covariates) {
  const double eta = kappa.dot(covariates);
  return 1.0 / (1.0 + std::exp(-eta));
}

LogisticFit fit_logistic_kappa(const std::vector<int>& indicator,
                               const MatrixXd& design) {
  const int n = static_cast<int>(design.rows());
  const int q_full = static_cast<int>(design.cols());
  if (static_cast<int>(indicator.size()) != n)
    throw NuisanceError("fit_logistic_kappa: indicator/design size mismatch");
  bool any0 = false, any1 = false;
  for (int v : indicator) (v ? any1 : any0) = true;
  if (!any0 || !any1)
    throw NuisanceError("fit_logistic_kappa: both indicator classes required");

  LogisticFit fit;
  for (int j = 0; j < q_full; ++j) {
    const double lo = design.col(j).minCoeff(), hi = design.col(j).maxCoeff();
    if (j > 0 && hi - lo < 1e-12)
      fit.dropped.push_back(j);  // constant non-intercept column
    else
      fit.kept.push_back(j);
  }
  const int q = static_cast<int>(fit.kept.size());
  MatrixXd X(n, q);
  for (int k = 0; k < q; ++k) X.col(k) = design.col(fit.kept[k]);

  VectorXd b = VectorXd::Zero(q);
  bool converged = false;
  for (int it = 0; it < 50; ++it) {
    VectorXd eta = X * b;
    VectorXd p(n), wdiag(n);
    for (int i = 0; i < n; ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      wdiag(i) = p(i) * (1.0 - p(i));
    }
    VectorXd resid(n);
    for (int i = 0; i < n; ++i) resid(i) = indicator[i] - p(i);
    VectorXd grad = X.transpose() * resid;
    MatrixXd H = X.transpose() * wdiag.asDiagonal() * X;
    Eigen::LDLT<MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success)
      throw NuisanceError("fit_logistic_kappa: singular information matrix");
    VectorXd step = ldlt.solve(grad);
    b += step;
    if (b.cwiseAbs().maxCoeff() > 30.0)
      throw NuisanceError(
          "fit_logistic_kappa: diverging coefficients (perfect separation?)");
    if (step.cwiseAbs().maxCoeff() < 1e-10) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw NuisanceError(
        "fit_logistic_kappa: IRLS failed to converge (perfect separation?)");
  fit.converged = true;
  fit.kappa = VectorXd::Zero(q_full);
  for (int k = 0; k < q; ++k) fit.kappa(fit.kept[k]) = b(k);

  fit.scores.resize(n, q);
  VectorXd eta = X * b;
  for (int i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-eta(i)));
    fit.scores.row(i) = (indicator[i] - p) * X.row(i);
  }
  VectorXd wdiag(n);
  for (int i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-eta(i)));
    wdiag(i) = p * (1.0 - p);
  }
  fit.score_jacobian = -(X.transpose() * wdiag.asDiagonal() * X) / n;
  return fit;
}

}  // namespace cencov
