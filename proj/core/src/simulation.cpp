#include "cencov/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "cencov/numerics.hpp"

namespace cencov {

namespace {

constexpr std::uint64_t kInjectionStreamBase = 0x8000000000000000ull;

int gaussian_zdim(const Scenario& sc) {
  return static_cast<int>(sc.mvn_cov.cols()) - 2;
}

// length of the model covariate vector z as seen by the estimators
int model_zdim(const Scenario& sc) {
  if (sc.beta_gap) return 1;
  return gaussian_zdim(sc) + (sc.mean.form == MeanForm::TimeToEvent ? 1 : 0);
}

}  // namespace

double Scenario::resid_cov_xc() const {
  const int zg = static_cast<int>(mvn_cov.cols()) - 2;
  if (zg < 1) return mvn_cov(0, 1);
  const MatrixXd szz = mvn_cov.bottomRightCorner(zg, zg);
  const VectorXd sxz = mvn_cov.block(0, 2, 1, zg).transpose();
  const VectorXd scz = mvn_cov.block(1, 2, 1, zg).transpose();
  return mvn_cov(0, 1) - sxz.dot(szz.ldlt().solve(scz));
}

void Scenario::validate() const {
  if (n < 1) throw SimulationError("scenario: n must be positive");
  if (replications < 1)
    throw SimulationError("scenario: replications must be positive");
  if (!(failure_cap >= 0.0 && failure_cap <= 1.0))
    throw SimulationError("scenario: failure_cap must be in [0, 1]");
  if (!(theta_true.sigma > 0))
    throw SimulationError("scenario: true sigma must be positive");
  if (beta_gap) {
    if (beta_gap->eta.size() != 3)
      throw SimulationError(
          "scenario: beta_gap design needs logistic coefficients over "
          "(1, x, z)");
    if (!(beta_gap->x_sd > 0))
      throw SimulationError("scenario: beta_gap x sd must be positive");
  } else {
    if (mvn_cov.rows() != mvn_cov.cols() || mvn_cov.rows() < 3 ||
        mvn_mean.size() != mvn_cov.rows())
      throw SimulationError(
          "scenario: need a mean vector and covariance over (X, C, Z...)");
    if ((mvn_cov - mvn_cov.transpose()).cwiseAbs().maxCoeff() >
        1e-12 * (1.0 + mvn_cov.cwiseAbs().maxCoeff()))
      throw SimulationError("scenario: covariance matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(mvn_cov);
    if (es.eigenvalues().minCoeff() < -1e-10)
      throw SimulationError("scenario: covariance matrix is not PSD");
    if (dependence == Dependence::Independent &&
        std::abs(resid_cov_xc()) > 1e-8)
      throw SimulationError(
          "scenario: independent design requires Cov(X, C | Z) = 0, got " +
          std::to_string(resid_cov_xc()));
  }
  if (arms.empty())
    throw SimulationError("scenario: at least one estimator arm is required");
  const int zdim = model_zdim(*this);
  if (theta_true.beta.size() != mean.beta_dim(zdim))
    throw SimulationError("scenario: true beta has length " +
                          std::to_string(theta_true.beta.size()) +
                          ", expected " +
                          std::to_string(mean.beta_dim(zdim)));
}

GeneratedData generate_dataset(const Scenario& sc, int replication_index) {
  Rng rng(sc.master_seed, static_cast<std::uint64_t>(replication_index));
  GeneratedData gd;
  gd.data.problem = Problem::Censored;
  gd.data.records.resize(sc.n);
  gd.true_x.resize(sc.n);

  if (sc.beta_gap) {
    const BetaGapDesign& bg = *sc.beta_gap;
    for (int i = 0; i < sc.n; ++i) {
      const double z = rng.normal();
      const double x = bg.x_intercept + bg.x_slope * z + bg.x_sd * rng.normal();
      VectorXd zv(1);
      zv(0) = z;
      const double y = mean_value(sc.theta_true, x, zv, sc.mean) +
                       sc.theta_true.sigma * rng.normal();
      VectorXd design(3);
      design << 1.0, x, z;
      const double pr = logistic_mean(bg.eta, design);
      const int delta = rng.uniform() < pr ? 1 : 0;
      CensoredObservation& o = gd.data.records[i];
      o.y = y;
      o.z = zv;
      o.delta = delta;
      // Beta(exp(z), 1) via inverse CDF
      o.w = delta == 1
                ? x
                : x - std::pow(rng.uniform(), 1.0 / std::exp(z));
      gd.true_x(i) = x;
    }
    return gd;
  }

  const int zg = gaussian_zdim(sc);
  const MatrixXd xcz = mvn_sample(sc.mvn_mean, sc.mvn_cov, sc.n, rng);
  const bool tte = sc.mean.form == MeanForm::TimeToEvent;
  for (int i = 0; i < sc.n; ++i) {
    const double x = xcz(i, 0);
    const double c = xcz(i, 1);
    VectorXd zv(model_zdim(sc));
    if (tte) {
      zv(0) = rng.normal();  // the age covariate, independent standard normal
      zv.tail(zg) = xcz.row(i).tail(zg).transpose();
    } else {
      zv = xcz.row(i).tail(zg).transpose();
    }
    const double y = mean_value(sc.theta_true, x, zv, sc.mean) +
                     sc.theta_true.sigma * rng.normal();
    CensoredObservation& o = gd.data.records[i];
    o.y = y;
    o.z = zv;
    o.delta = x <= c ? 1 : 0;
    o.w = std::min(x, c);
    gd.true_x(i) = x;
  }
  return gd;
}

NuisanceBundle known_bundle(const Scenario& sc) {
  NuisanceBundle b;
  b.dependence = sc.dependence;
  const int zdim = model_zdim(sc);
  if (sc.beta_gap) {
    b.x_given_z.intercept = sc.beta_gap->x_intercept;
    b.x_given_z.slopes = VectorXd::Constant(1, sc.beta_gap->x_slope);
    b.x_given_z.sd = sc.beta_gap->x_sd;
    return b;
  }
  const int zg = gaussian_zdim(sc);
  const bool tte = sc.mean.form == MeanForm::TimeToEvent;
  const MatrixXd szz = sc.mvn_cov.bottomRightCorner(zg, zg);
  const Eigen::LDLT<MatrixXd> szz_ldlt(szz);
  auto marginal = [&](int row) {
    const VectorXd svz = sc.mvn_cov.block(row, 2, 1, zg).transpose();
    const VectorXd w = szz_ldlt.solve(svz);
    GaussianConditional g;
    g.slopes = VectorXd::Zero(zdim);
    // the age covariate, when present, is independent of everything
    g.slopes.tail(zg) = w;
    const VectorXd zmean = sc.mvn_mean.tail(zg);
    g.intercept = sc.mvn_mean(row) - w.dot(zmean);
    g.sd = std::sqrt(sc.mvn_cov(row, row) - w.dot(svz));
    (void)tte;
    return g;
  };
  const GaussianConditional xg = marginal(0);
  const GaussianConditional cg = marginal(1);
  b.x_given_z = xg;
  if (sc.dependence == Dependence::Dependent) {
    const double rho = sc.resid_cov_xc();
    b.c_cond = derive_c_given_xz(xg, cg, rho);
    b.x_given_cz = derive_x_given_cz(xg, cg, rho);
  } else {
    b.c_cond = cg;
  }
  b.theta_for_pi = sc.theta_true;
  return b;
}

namespace {

Dataset apply_view(const GeneratedData& gd, DataView view) {
  if (view == DataView::AsIs) return gd.data;
  Dataset d = gd.data;
  for (int i = 0; i < d.n(); ++i) {
    if (view == DataView::Oracle) d.records[i].w = gd.true_x(i);
    d.records[i].delta = 1;
  }
  return d;
}

struct RepFit {
  bool ok = false;
  VectorXd est;
  VectorXd se;
};

RepFit run_arm(const Scenario& sc, const ArmSpec& arm,
               const NuisanceBundle& base_bundle, const GeneratedData& gd,
               int rep, int arm_index) {
  Dataset d = apply_view(gd, arm.view);
  EstimatorSpec es = arm.est;
  es.mean = sc.mean;
  NuisanceConfig nc;
  nc.mode = arm.nuisance_mode;
  nc.known = base_bundle;
  nc.known_resid_cov_xc = sc.beta_gap ? 0.0 : sc.resid_cov_xc();
  nc.x_only_from_complete_cases = arm.x_only_from_complete_cases;
  if (arm.injector) {
    const MisspecInjector& inj = *arm.injector;
    switch (inj.kind) {
      case MisspecInjector::Kind::UniformPi: {
        es.probability_source = ProbabilitySource::Injected;
        Rng prng(sc.master_seed,
                 kInjectionStreamBase +
                     static_cast<std::uint64_t>(rep) * 256 + arm_index);
        VectorXd pis(d.n());
        for (int i = 0; i < d.n(); ++i)
          pis(i) = inj.lo + (inj.hi - inj.lo) * prng.uniform();
        nc.known.injected_pi = std::move(pis);
        break;
      }
      case MisspecInjector::Kind::WrongXDist: {
        GaussianConditional g;
        g.intercept = inj.mean;
        g.slopes = VectorXd::Zero(d.records.front().z.size());
        g.sd = inj.sd;
        nc.known.x_dist_for_mle = g;
        break;
      }
      case MisspecInjector::Kind::UsePiYZInIPW:
        es.weight_by_pi_yz = true;
        break;
    }
  }
  RepFit rf;
  try {
    FitResult fr = fit_estimator(es, d, nc);
    if (fr.converged && fr.theta_hat.flat().allFinite()) {
      rf.ok = true;
      rf.est = fr.theta_hat.flat();
      rf.se = fr.se;
    }
  } catch (const std::exception&) {
    rf.ok = false;
  }
  return rf;
}

}  // namespace

SimulationSummary run_replications(const Scenario& sc, int threads) {
  sc.validate();
  const int reps = sc.replications;
  const int narms = static_cast<int>(sc.arms.size());
  const NuisanceBundle base_bundle = known_bundle(sc);
  std::vector<std::vector<RepFit>> results(
      reps, std::vector<RepFit>(narms));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= reps) return;
      const GeneratedData gd = generate_dataset(sc, r);
      for (int a = 0; a < narms; ++a)
        results[r][a] = run_arm(sc, sc.arms[a], base_bundle, gd, r, a);
    }
  };
  const int nworkers = std::max(1, std::min(threads, reps));
  if (nworkers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nworkers);
    for (int t = 0; t < nworkers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  SimulationSummary out;
  out.scenario_name = sc.name;
  out.master_seed = sc.master_seed;
  out.replications = reps;
  out.n = sc.n;
  out.theta_true = sc.theta_true.flat();
  const int p = static_cast<int>(out.theta_true.size());
  const double zq = normal_quantile(0.975);

  for (int a = 0; a < narms; ++a) {
    ArmSummary s;
    s.label = sc.arms[a].label;
    MatrixXd ests(0, p), ses(0, p);
    for (int r = 0; r < reps; ++r) {
      const RepFit& rf = results[r][a];
      if (!rf.ok) {
        ++s.n_failed;
        continue;
      }
      ests.conservativeResize(ests.rows() + 1, p);
      ses.conservativeResize(ses.rows() + 1, p);
      ests.row(ests.rows() - 1) = rf.est.transpose();
      ses.row(ses.rows() - 1) = rf.se.transpose();
    }
    s.n_success = static_cast<int>(ests.rows());
    if (reps > 0 &&
        static_cast<double>(s.n_failed) / reps > sc.failure_cap)
      throw SimulationError("arm '" + s.label + "': " +
                            std::to_string(s.n_failed) + " of " +
                            std::to_string(reps) +
                            " replications failed, above the cap");
    s.mean_estimate = VectorXd::Constant(p, std::nan(""));
    s.mean_bias = s.percent_bias = s.mean_se = s.empirical_sd = s.coverage =
        s.mean_estimate;
    if (s.n_success == 0) {
      out.arms.push_back(std::move(s));
      continue;
    }
    s.mean_estimate = ests.colwise().mean().transpose();
    s.mean_bias = s.mean_estimate - out.theta_true;
    s.percent_bias = VectorXd::Zero(p);
    for (int j = 0; j < p; ++j)
      if (std::abs(out.theta_true(j)) > 1e-12)
        s.percent_bias(j) = s.mean_bias(j) / out.theta_true(j);
    s.mean_se = ses.colwise().mean().transpose();
    if (s.n_success > 1) {
      const MatrixXd centered = ests.rowwise() - s.mean_estimate.transpose();
      s.empirical_sd =
          (centered.colwise().squaredNorm() / (s.n_success - 1))
              .cwiseSqrt()
              .transpose();
    } else {
      s.empirical_sd = VectorXd::Constant(p, std::nan(""));
    }
    s.coverage = VectorXd::Zero(p);
    for (int r2 = 0; r2 < static_cast<int>(ests.rows()); ++r2)
      for (int j = 0; j < p; ++j)
        if (std::abs(ests(r2, j) - out.theta_true(j)) <= zq * ses(r2, j))
          s.coverage(j) += 1.0;
    s.coverage *= 100.0 / s.n_success;
    out.total_failures += s.n_failed;
    out.arms.push_back(std::move(s));
  }
  return out;
}

namespace {

std::string fmt(double v, int prec = 2) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

}  // namespace

std::string summarize_to_table(const SimulationSummary& s) {
  std::ostringstream os;
  os << "Scenario: " << s.scenario_name << "  (n=" << s.n
     << ", replications=" << s.replications << ", seed=" << s.master_seed
     << ")\n";
  const int p = static_cast<int>(s.theta_true.size());
  auto row = [&](const std::string& a, const std::string& b,
                 const std::string& c, const std::string& d,
                 const std::string& e, const std::string& f,
                 const std::string& g) {
    os << "  ";
    os.width(24);
    os << std::left << a;
    os.width(8);
    os << std::left << b;
    for (const std::string* v : {&c, &d, &e, &f, &g}) {
      os.width(10);
      os << std::right << *v;
    }
    os << "\n";
  };
  row("Estimator", "Coef", "Estimate", "Bias", "SE", "SD", "95% Cov");
  for (const ArmSummary& arm : s.arms) {
    for (int j = 0; j < p; ++j) {
      const std::string coef =
          j == p - 1 ? "sigma" : "beta" + std::to_string(j);
      row(j == 0 ? arm.label : "", coef, fmt(arm.mean_estimate(j)),
          fmt(arm.mean_bias(j)), fmt(arm.mean_se(j) * 100.0),
          fmt(arm.empirical_sd(j) * 100.0), fmt(arm.coverage(j)));
    }
    if (arm.n_failed > 0)
      os << "    (" << arm.n_failed << " failed replications excluded)\n";
  }
  return os.str();
}

std::string summary_to_csv(const SimulationSummary& s) {
  std::ostringstream os;
  os << "estimator,coefficient,true_value,mean_estimate,mean_bias,"
        "percent_bias,mean_se_x100,empirical_sd_x100,coverage_95,"
        "n_success,n_failed\n";
  const int p = static_cast<int>(s.theta_true.size());
  for (const ArmSummary& arm : s.arms) {
    for (int j = 0; j < p; ++j) {
      const std::string coef =
          j == p - 1 ? "sigma" : "beta" + std::to_string(j);
      os << arm.label << ',' << coef << ',' << fmt(s.theta_true(j), 6) << ','
         << fmt(arm.mean_estimate(j), 6) << ',' << fmt(arm.mean_bias(j), 6)
         << ',' << fmt(arm.percent_bias(j), 6) << ','
         << fmt(arm.mean_se(j) * 100.0, 4) << ','
         << fmt(arm.empirical_sd(j) * 100.0, 4) << ','
         << fmt(arm.coverage(j), 2) << ',' << arm.n_success << ','
         << arm.n_failed << "\n";
    }
  }
  return os.str();
}

}  // namespace cencov
