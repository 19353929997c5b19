#include "cencov/estimators.hpp"

#include <cmath>
#include <limits>

#include "cencov/inference.hpp"
#include "cencov/numerics.hpp"

namespace cencov {

void EstimatorSpec::validate() const {
  if (kind == EstimatorKind::MLE && problem == Problem::Missing &&
      dependence == Dependence::Dependent)
    throw EstimatorError(
        "MLE is not available for the dependent missing problem: the marginal "
        "density of y is not computable without a model for the missingness "
        "mechanism");
  if (weight_by_pi_yz && kind != EstimatorKind::IPW)
    throw EstimatorError(
        "weight_by_pi_yz applies to the IPW estimator only");
  if (quad_nodes < 2 || quad_nodes > 100)
    throw EstimatorError("quad_nodes out of range [2, 100]");
}

Dataset Dataset::from_missing(const std::vector<MissingObservation>& recs) {
  Dataset d;
  d.problem = Problem::Missing;
  d.records.reserve(recs.size());
  for (const auto& m : recs) {
    m.check();
    CensoredObservation o;
    o.y = m.y;
    o.delta = m.r;
    o.w = m.r == 1 ? *m.x : -std::numeric_limits<double>::infinity();
    o.z = m.z;
    d.records.push_back(std::move(o));
  }
  return d;
}

namespace {

VectorXd with_intercept_yz(const CensoredObservation& obs) {
  VectorXd v(2 + obs.z.size());
  v(0) = 1.0;
  v(1) = obs.y;
  v.tail(obs.z.size()) = obs.z;
  return v;
}

double record_pi_yz(const EstimatorSpec& spec, const CensoredObservation& obs,
                    const NuisanceBundle& bundle, ClampCounter* clamps) {
  if (bundle.kappa) return logistic_mean(*bundle.kappa, with_intercept_yz(obs));
  if (bundle.theta_for_pi)
    return prob_observed_yz(*bundle.theta_for_pi, obs.y, obs.z,
                            bundle.x_given_z, bundle.c_cond, bundle.dependence,
                            spec.mean, clamps, spec.quad_nodes);
  throw EstimatorError(
      "pi_{Y,Z} requested but neither logistic coefficients (kappa) nor an "
      "evaluation point (theta_for_pi) is configured");
}

}  // namespace

RecordPi compute_record_pi(const EstimatorSpec& spec,
                           const CensoredObservation& obs,
                           const NuisanceBundle& bundle,
                           std::optional<double> injected_pi,
                           ClampCounter* clamps) {
  RecordPi rp;
  if (spec.probability_source == ProbabilitySource::Injected) {
    if (!injected_pi)
      throw EstimatorError(
          "probability source is injected but no injected value was supplied");
    rp.weight_pi = rp.pi_xz = rp.pi_yz = *injected_pi;
    return rp;
  }
  const bool need_pi_yz = spec.kind == EstimatorKind::ACC || spec.weight_by_pi_yz;
  const bool need_pi_xz = spec.kind == EstimatorKind::IPW ||
                          spec.kind == EstimatorKind::MACC ||
                          spec.kind == EstimatorKind::AIPW;
  if (need_pi_yz) rp.pi_yz = record_pi_yz(spec, obs, bundle, clamps);
  if (need_pi_xz) {
    if (spec.problem == Problem::Missing) {
      // the observation probability does not involve x here
      rp.pi_xz = need_pi_yz ? rp.pi_yz : record_pi_yz(spec, obs, bundle, clamps);
    } else if (obs.delta == 1) {
      rp.pi_xz = prob_observed_xz(obs.w, obs.z, bundle.c_cond,
                                  bundle.dependence, clamps);
    }
  }
  rp.weight_pi = spec.weight_by_pi_yz ? rp.pi_yz : rp.pi_xz;
  return rp;
}

VectorXd psi_augmentation(const EstimatorSpec& spec,
                          const CensoredObservation& obs, const Theta& theta,
                          const NuisanceBundle& bundle, ClampCounter* clamps) {
  if (!spec.augmented())
    throw EstimatorError("psi_augmentation: spec has no augmentation term");
  if (spec.psi_mode == PsiMode::Closed)
    return psi_closed(theta, obs.y, obs.z, bundle.x_given_z, spec.mean);

  AugKind ak = spec.kind == EstimatorKind::ACC    ? AugKind::ACC
               : spec.kind == EstimatorKind::MACC ? AugKind::MACC
                                                  : AugKind::AIPW;
  PiContext pi;
  if (spec.problem == Problem::Missing) {
    const double p = record_pi_yz(spec, obs, bundle, clamps);
    pi.pi_xz = [p](double) { return p; };
  } else {
    pi.pi_xz = [&](double x) {
      return prob_observed_xz(x, obs.z, bundle.c_cond, bundle.dependence,
                              clamps);
    };
  }
  return psi_effective(ak, theta, obs.y, obs.z, bundle.x_given_z, spec.mean,
                       pi, spec.quad_nodes);
}

namespace {

// theta-gradient of the truncated-marginal record log-likelihood, by central
// differences; exact score for fully observed records
VectorXd mle_contribution(const EstimatorSpec& spec,
                          const CensoredObservation& obs, const Theta& theta,
                          const NuisanceBundle& bundle) {
  if (obs.delta == 1) return score_full(theta, obs.y, obs.w, obs.z, spec.mean);
  GaussianConditional x_dist =
      bundle.x_dist_for_mle ? *bundle.x_dist_for_mle : bundle.x_given_z;
  if (spec.problem == Problem::Censored &&
      spec.dependence == Dependence::Dependent) {
    if (!bundle.x_given_cz)
      throw EstimatorError(
          "MLE under dependent censoring requires the x_given_cz block");
    x_dist = condition_on_first(*bundle.x_given_cz, obs.w);
  }
  const double w =
      spec.problem == Problem::Missing
          ? -std::numeric_limits<double>::infinity()
          : obs.w;
  const VectorXd t0 = theta.flat();
  VectorXd g(t0.size());
  for (int j = 0; j < t0.size(); ++j) {
    const double h = 1e-6 * (1.0 + std::abs(t0(j)));
    VectorXd tp = t0, tm = t0;
    tp(j) += h;
    tm(j) -= h;
    g(j) = (censored_marginal_loglik(Theta::from_flat(tp), obs.y, w, obs.z,
                                     x_dist, spec.mean) -
            censored_marginal_loglik(Theta::from_flat(tm), obs.y, w, obs.z,
                                     x_dist, spec.mean)) /
           (2.0 * h);
  }
  return g;
}

}  // namespace

VectorXd phi_contribution(const EstimatorSpec& spec,
                          const CensoredObservation& obs, const Theta& theta,
                          const NuisanceBundle& bundle, const RecordPi& pi,
                          const std::optional<MatrixXd>& lambda,
                          ClampCounter* clamps) {
  const int p = theta.dim();
  auto score = [&] { return score_full(theta, obs.y, obs.w, obs.z, spec.mean); };
  auto augment = [&](VectorXd base, double mult) {
    VectorXd psi = psi_augmentation(spec, obs, theta, bundle, clamps);
    if (lambda) psi = *lambda * psi;
    return VectorXd(base + mult * psi);
  };
  switch (spec.kind) {
    case EstimatorKind::CC:
      return obs.delta == 1 ? score() : VectorXd(VectorXd::Zero(p));
    case EstimatorKind::IPW:
      return obs.delta == 1 ? VectorXd(score() / pi.weight_pi)
                            : VectorXd(VectorXd::Zero(p));
    case EstimatorKind::MLE:
      return mle_contribution(spec, obs, theta, bundle);
    case EstimatorKind::ACC:
      return augment(obs.delta == 1 ? score() : VectorXd(VectorXd::Zero(p)),
                     obs.delta - pi.pi_yz);
    case EstimatorKind::MACC:
      return augment(obs.delta == 1 ? score() : VectorXd(VectorXd::Zero(p)),
                     1.0 - obs.delta / pi.pi_xz);
    case EstimatorKind::AIPW:
      return augment(obs.delta == 1 ? VectorXd(score() / pi.weight_pi)
                                    : VectorXd(VectorXd::Zero(p)),
                     1.0 - obs.delta / pi.pi_xz);
  }
  throw EstimatorError("phi_contribution: unknown estimator kind");
}

NuisanceBundle bundle_at_alpha(const NuisanceBundle& bundle,
                               const VectorXd& alpha) {
  NuisanceBundle nb = bundle;
  const int zdim = static_cast<int>(bundle.x_given_z.slopes.size());
  auto [xg, cg] = unpack_alpha(alpha, zdim);
  nb.x_given_z = xg;
  if (bundle.dependence == Dependence::Dependent) {
    const double rho =
        bundle.alpha_fit ? bundle.alpha_fit->resid_cov_xc : 0.0;
    nb.c_cond = derive_c_given_xz(xg, cg, rho);
    nb.x_given_cz = derive_x_given_cz(xg, cg, rho);
  } else {
    nb.c_cond = cg;
  }
  return nb;
}

NuisanceBundle bundle_at_kappa(const NuisanceBundle& bundle,
                               const VectorXd& kappa) {
  NuisanceBundle nb = bundle;
  nb.kappa = kappa;
  return nb;
}

Theta least_squares_init(const Dataset& data, const MeanSpec& mean) {
  std::vector<int> rows;
  for (int i = 0; i < data.n(); ++i)
    if (data.records[i].delta == 1) rows.push_back(i);
  if (rows.empty())
    throw EstimatorError("least_squares_init: no complete cases");
  const int zdim = static_cast<int>(data.records.front().z.size());
  const int pb = mean.beta_dim(zdim);
  if (static_cast<int>(rows.size()) < pb + 1)
    throw EstimatorError("least_squares_init: too few complete cases");
  MatrixXd X(rows.size(), pb);
  VectorXd y(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const CensoredObservation& o = data.records[rows[k]];
    X(k, 0) = 1.0;
    if (mean.form == MeanForm::LinearX) {
      X(k, 1) = o.w;
      for (int pz = 0; pz < zdim; ++pz) X(k, 2 + pz) = o.z(pz);
    } else {
      X(k, 1) = o.z(mean.age_column) - o.w;
      int slot = 2;
      for (int pz = 0; pz < zdim; ++pz) {
        if (pz == mean.age_column) continue;
        X(k, slot++) = o.z(pz);
      }
    }
    y(k) = o.y;
  }
  VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  VectorXd resid = y - X * beta;
  Theta t;
  t.beta = beta;
  t.sigma = std::max(1e-3, std::sqrt(resid.squaredNorm() / resid.size()));
  return t;
}

namespace {

struct LambdaPieces {
  MatrixXd aug;  // n x p augmentation terms (multiplier times Psi)
  MatrixXd b;    // n x p pilot estimating-function values
};

LambdaPieces lambda_pieces(const EstimatorSpec& spec, const Dataset& data,
                           const Theta& theta, const NuisanceBundle& bundle,
                           const std::vector<RecordPi>& pis,
                           ClampCounter* clamps) {
  const int n = data.n();
  const int p = theta.dim();
  LambdaPieces lp{MatrixXd(n, p), MatrixXd(n, p)};
  for (int i = 0; i < n; ++i) {
    const CensoredObservation& o = data.records[i];
    const RecordPi& rp = pis[i];
    const VectorXd psi = psi_augmentation(spec, o, theta, bundle, clamps);
    const double mult = spec.kind == EstimatorKind::ACC
                            ? o.delta - rp.pi_yz
                            : 1.0 - o.delta / rp.pi_xz;
    lp.aug.row(i) = mult * psi.transpose();
    VectorXd b = VectorXd::Zero(p);
    if (o.delta == 1) {
      b = score_full(theta, o.y, o.w, o.z, spec.mean);
      if (spec.kind == EstimatorKind::AIPW) b /= rp.weight_pi;
    }
    lp.b.row(i) = b.transpose();
  }
  return lp;
}

std::vector<RecordPi> all_record_pis(const EstimatorSpec& spec,
                                     const Dataset& data,
                                     const NuisanceBundle& bundle,
                                     ClampCounter* clamps) {
  std::vector<RecordPi> pis(data.n());
  for (int i = 0; i < data.n(); ++i) {
    std::optional<double> inj;
    if (bundle.injected_pi) inj = (*bundle.injected_pi)(i);
    pis[i] = compute_record_pi(spec, data.records[i], bundle, inj, clamps);
  }
  return pis;
}

}  // namespace

MatrixXd estimate_lambda(const EstimatorSpec& spec, const Dataset& data,
                         const Theta& theta_pilot, const NuisanceBundle& bundle,
                         const std::vector<RecordPi>& pis,
                         ClampCounter* clamps) {
  if (!spec.augmented())
    throw EstimatorError("estimate_lambda: spec has no augmentation term");
  const int n = data.n();
  const int p = theta_pilot.dim();
  LambdaPieces lp = lambda_pieces(spec, data, theta_pilot, bundle, pis, clamps);

  if (spec.lambda_mode == LambdaMode::NuisanceAdjusted) {
    const bool use_kappa = spec.kind == EstimatorKind::ACC;
    MatrixXd scores;      // n x q
    MatrixXd score_jac;   // q x q
    VectorXd nuis_hat;    // q
    std::function<NuisanceBundle(const VectorXd&)> at;
    if (use_kappa) {
      if (!bundle.kappa_fit)
        throw EstimatorError(
            "nuisance-adjusted Lambda for ACC requires a fitted kappa block");
      const LogisticFit& kf = *bundle.kappa_fit;
      scores = kf.scores;
      score_jac = kf.score_jacobian;
      nuis_hat.resize(kf.kept.size());
      for (std::size_t k = 0; k < kf.kept.size(); ++k)
        nuis_hat(k) = kf.kappa(kf.kept[k]);
      const VectorXd kappa_full = kf.kappa;
      const std::vector<int> kept = kf.kept;
      at = [kappa_full, kept, &bundle](const VectorXd& nu) {
        VectorXd full = kappa_full;
        for (std::size_t k = 0; k < kept.size(); ++k) full(kept[k]) = nu(k);
        return bundle_at_kappa(bundle, full);
      };
    } else {
      if (!bundle.alpha_fit)
        throw EstimatorError(
            "nuisance-adjusted Lambda requires a fitted alpha block");
      const AlphaFit& af = *bundle.alpha_fit;
      scores = af.scores;
      score_jac = af.score_jacobian;
      nuis_hat = af.alpha;
      at = [&bundle](const VectorXd& nu) { return bundle_at_alpha(bundle, nu); };
    }
    Eigen::FullPivLU<MatrixXd> jlu(score_jac);
    if (!jlu.isInvertible())
      throw EstimatorError("estimate_lambda: singular nuisance score Jacobian");
    // per-record influence values of the nuisance estimate
    const MatrixXd upsilon = -(jlu.inverse() * scores.transpose()).transpose();

    auto mean_aug_at = [&](const VectorXd& nu) {
      NuisanceBundle nb = at(nu);
      std::vector<RecordPi> ps = all_record_pis(spec, data, nb, nullptr);
      LambdaPieces lpn = lambda_pieces(spec, data, theta_pilot, nb, ps, nullptr);
      return VectorXd(lpn.aug.colwise().mean().transpose());
    };
    const MatrixXd a_star = numeric_jacobian(mean_aug_at, nuis_hat, 1e-4);
    lp.aug += upsilon * a_star.transpose();
    if (spec.kind == EstimatorKind::AIPW) {
      auto mean_b_at = [&](const VectorXd& nu) {
        NuisanceBundle nb = at(nu);
        std::vector<RecordPi> ps = all_record_pis(spec, data, nb, nullptr);
        LambdaPieces lpn =
            lambda_pieces(spec, data, theta_pilot, nb, ps, nullptr);
        return VectorXd(lpn.b.colwise().mean().transpose());
      };
      const MatrixXd a_star_w = numeric_jacobian(mean_b_at, nuis_hat, 1e-4);
      lp.b += upsilon * a_star_w.transpose();
    }
  }

  // Cross moment oriented to match the way Lambda is applied
  // (phi = b + Lambda * aug): the variance-minimizing choice is
  // Lambda = -E[b aug'] E[aug aug']^{-1}.
  MatrixXd cross = lp.b.transpose() * lp.aug / n;
  MatrixXd outer = lp.aug.transpose() * lp.aug / n;
  // The outer moment can be structurally rank-deficient: for some mean forms
  // the components of Psi are exactly linearly dependent, so a direction of
  // the augmentation space carries no signal. A pseudo-inverse drops that
  // direction (its augmentation contribution is identically zero) instead of
  // amplifying round-off noise.
  Eigen::JacobiSVD<MatrixXd> svd(outer,
                                 Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double smax = svd.singularValues()(0);
  if (!(smax > 0) || !outer.allFinite())
    throw EstimatorError(
        "estimate_lambda: outer moment of the augmentation term is degenerate");
  const double tol = 1e-8 * smax;
  VectorXd inv_s = svd.singularValues();
  for (int j = 0; j < inv_s.size(); ++j)
    inv_s(j) = inv_s(j) > tol ? 1.0 / inv_s(j) : 0.0;
  const MatrixXd outer_pinv =
      svd.matrixV() * inv_s.asDiagonal() * svd.matrixU().transpose();
  return -cross * outer_pinv;
}

FitResult fit_estimator(const EstimatorSpec& spec, const Dataset& data,
                        const NuisanceConfig& nuisance) {
  spec.validate();
  if (data.n() == 0) throw EstimatorError("fit_estimator: empty dataset");
  if (data.problem != spec.problem)
    throw EstimatorError("fit_estimator: dataset/spec problem mismatch");

  NuisanceBundle bundle = nuisance.known;
  bundle.dependence = spec.dependence;
  if (nuisance.mode == NuisanceConfig::Mode::Estimate) {
    if (spec.kind != EstimatorKind::CC) {
      if (spec.problem == Problem::Missing ||
          nuisance.x_only_from_complete_cases) {
        // covariate block only, from the complete cases
        std::vector<CensoredObservation> complete;
        for (const auto& o : data.records)
          if (o.delta == 1) complete.push_back(o);
        AlphaFit af = fit_alpha(complete, Dependence::Independent, 0.0);
        // re-align per-record scores with the full dataset: incomplete
        // records contribute nothing to this likelihood
        MatrixXd full_scores = MatrixXd::Zero(data.n(), af.alpha.size());
        int k = 0;
        for (int i = 0; i < data.n(); ++i)
          if (data.records[i].delta == 1) full_scores.row(i) = af.scores.row(k++);
        af.scores = std::move(full_scores);
        // the mean score Jacobian is over the fitting records; rescale to the
        // full-sample mean used in the influence expansion
        af.score_jacobian *=
            static_cast<double>(complete.size()) / data.n();
        bundle.x_given_z = af.x_given_z;
        bundle.alpha_fit = std::move(af);
      } else {
        AlphaFit af =
            fit_alpha(data.records, spec.dependence, nuisance.known_resid_cov_xc);
        bundle.x_given_z = af.x_given_z;
        if (spec.dependence == Dependence::Dependent) {
          bundle.c_cond = derive_c_given_xz(af.x_given_z, af.c_given_z,
                                            af.resid_cov_xc);
          bundle.x_given_cz = derive_x_given_cz(af.x_given_z, af.c_given_z,
                                                af.resid_cov_xc);
        } else {
          bundle.c_cond = af.c_given_z;
        }
        bundle.alpha_fit = std::move(af);
      }
      if (spec.probability_source == ProbabilitySource::Logistic) {
        std::vector<int> ind(data.n());
        MatrixXd design(data.n(), 2 + data.records.front().z.size());
        for (int i = 0; i < data.n(); ++i) {
          ind[i] = data.records[i].delta;
          design.row(i) = with_intercept_yz(data.records[i]).transpose();
        }
        LogisticFit kf = fit_logistic_kappa(ind, design);
        bundle.kappa = kf.kappa;
        bundle.kappa_fit = std::move(kf);
      }
    }
  }

  ClampCounter clamps;
  const std::vector<RecordPi> pis = all_record_pis(spec, data, bundle, &clamps);
  const Theta theta0 = least_squares_init(data, spec.mean);
  const int p = theta0.dim();

  SolverConfig scfg;
  auto solve_kind = [&](const EstimatorSpec& s, const std::vector<RecordPi>& ps,
                        const std::optional<MatrixXd>& L, const Theta& init) {
    auto phi_mean = [&](const VectorXd& tf) {
      const Theta t = Theta::from_flat(tf);
      VectorXd acc = VectorXd::Zero(p);
      for (int i = 0; i < data.n(); ++i)
        acc += phi_contribution(s, data.records[i], t, bundle, ps[i], L,
                                &clamps);
      return VectorXd(acc / data.n());
    };
    return solve_estimating_equation(phi_mean, init.flat(), scfg, p - 1);
  };

  FitResult out;
  std::optional<MatrixXd> lambda;
  SolveResult final;
  if (spec.kind == EstimatorKind::CC) {
    final = solve_kind(spec, pis, std::nullopt, theta0);
  } else {
    EstimatorSpec cc = spec;
    cc.kind = EstimatorKind::CC;
    cc.lambda_mode = LambdaMode::None;
    cc.weight_by_pi_yz = false;
    SolveResult pilot = solve_kind(cc, pis, std::nullopt, theta0);
    if (!pilot.diag.converged)
      throw EstimatorError("fit_estimator: pilot CC fit did not converge");
    Theta theta_pilot = Theta::from_flat(pilot.x);
    if (spec.kind == EstimatorKind::AIPW) {
      EstimatorSpec ipw = spec;
      ipw.kind = EstimatorKind::IPW;
      ipw.lambda_mode = LambdaMode::None;
      std::vector<RecordPi> ipw_pis = all_record_pis(ipw, data, bundle, &clamps);
      SolveResult ipw_pilot = solve_kind(ipw, ipw_pis, std::nullopt, theta_pilot);
      if (!ipw_pilot.diag.converged)
        throw EstimatorError("fit_estimator: pilot IPW fit did not converge");
      theta_pilot = Theta::from_flat(ipw_pilot.x);
    }
    if (spec.augmented() && spec.lambda_mode != LambdaMode::None)
      lambda = estimate_lambda(spec, data, theta_pilot, bundle, pis, &clamps);
    final = solve_kind(spec, pis, lambda, theta_pilot);
  }

  out.theta_hat = Theta::from_flat(final.x);
  out.converged = final.diag.converged;
  // The estimating equation vanishes as sigma grows without bound, so a
  // runaway root can satisfy the residual tolerance. Reject roots far from
  // the consistent complete-case initializer as spurious.
  const double beta_scale = 1.0 + theta0.beta.norm();
  if (out.converged &&
      ((out.theta_hat.beta - theta0.beta).norm() > 50.0 * beta_scale ||
       !(out.theta_hat.sigma > theta0.sigma / 50.0 &&
         out.theta_hat.sigma < theta0.sigma * 50.0)))
    out.converged = false;
  out.iterations = final.diag.iterations;
  out.lambda = lambda;
  out.clamp_events = clamps.events;
  out.covariance = MatrixXd::Zero(p, p);
  out.se = VectorXd::Zero(p);
  if (!out.converged) return out;

  auto phi_matrix = [&](const NuisanceBundle& nb,
                        const std::vector<RecordPi>& ps, const VectorXd& tf) {
    const Theta t = Theta::from_flat(tf);
    MatrixXd m(data.n(), p);
    for (int i = 0; i < data.n(); ++i)
      m.row(i) =
          phi_contribution(spec, data.records[i], t, nb, ps[i], lambda, nullptr)
              .transpose();
    return m;
  };
  auto phi_at_theta = [&](const VectorXd& tf) {
    return phi_matrix(bundle, pis, tf);
  };

  std::optional<NuisanceCorrection> corr;
  if (nuisance.mode == NuisanceConfig::Mode::Estimate) {
    const bool use_kappa = spec.kind == EstimatorKind::ACC;
    if (use_kappa && bundle.kappa_fit) {
      const LogisticFit& kf = *bundle.kappa_fit;
      NuisanceCorrection c;
      c.scores = kf.scores;
      c.score_jacobian = kf.score_jacobian;
      c.nuis_hat.resize(kf.kept.size());
      for (std::size_t k = 0; k < kf.kept.size(); ++k)
        c.nuis_hat(k) = kf.kappa(kf.kept[k]);
      const VectorXd kappa_full = kf.kappa;
      const std::vector<int> kept = kf.kept;
      const VectorXd theta_flat = final.x;
      c.phi_at = [&, kappa_full, kept, theta_flat](const VectorXd& nu) {
        VectorXd full = kappa_full;
        for (std::size_t k = 0; k < kept.size(); ++k) full(kept[k]) = nu(k);
        NuisanceBundle nb = bundle_at_kappa(bundle, full);
        return phi_matrix(nb, all_record_pis(spec, data, nb, nullptr),
                          theta_flat);
      };
      corr = std::move(c);
    } else if (!use_kappa && bundle.alpha_fit &&
               spec.kind != EstimatorKind::CC) {
      const AlphaFit& af = *bundle.alpha_fit;
      NuisanceCorrection c;
      c.scores = af.scores;
      c.score_jacobian = af.score_jacobian;
      c.nuis_hat = af.alpha;
      const VectorXd theta_flat = final.x;
      c.phi_at = [&, theta_flat](const VectorXd& nu) {
        NuisanceBundle nb = bundle_at_alpha(bundle, nu);
        return phi_matrix(nb, all_record_pis(spec, data, nb, nullptr),
                          theta_flat);
      };
      corr = std::move(c);
    }
  }

  SandwichResult sw = sandwich(phi_at_theta, final.x, corr);
  if (sw.covariance_corrected) {
    out.covariance = *sw.covariance_corrected;
    out.covariance_uncorrected = sw.covariance;
    out.se_uncorrected = VectorXd(sw.covariance.diagonal().cwiseMax(0.0).cwiseSqrt());
  } else {
    out.covariance = sw.covariance;
  }
  out.se = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.clamp_events = clamps.events;
  return out;
}

}  // namespace cencov
