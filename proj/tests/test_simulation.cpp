#include <doctest.h>

#include <algorithm>
#include <cencov/simulation.hpp>
#include <cmath>

using namespace cencov;

namespace {

Scenario base_scenario() {
  Scenario sc;
  sc.name = "test";
  sc.n = 1000;
  sc.replications = 4;
  sc.master_seed = 555;
  sc.theta_true.beta = Eigen::Vector3d(1.0, 3.0, 2.0);
  sc.theta_true.sigma = 1.0;
  sc.mean.form = MeanForm::TimeToEvent;
  sc.mean.age_column = 0;
  sc.dependence = Dependence::Independent;
  sc.mvn_mean = Eigen::Vector3d::Zero();
  sc.mvn_cov.resize(3, 3);
  sc.mvn_cov << 1, 0.25, 0.5, 0.25, 4, 0.5, 0.5, 0.5, 1;
  ArmSpec cc;
  cc.label = "CC";
  cc.est.kind = EstimatorKind::CC;
  cc.est.mean = sc.mean;
  sc.arms.push_back(cc);
  return sc;
}

Scenario beta_gap_scenario() {
  Scenario sc;
  sc.name = "bg";
  sc.n = 2000;
  sc.replications = 2;
  sc.master_seed = 777;
  sc.theta_true.beta = Eigen::Vector3d(0.0, 0.2, 0.2);
  sc.theta_true.sigma = 1.0;
  sc.mean.form = MeanForm::LinearX;
  sc.dependence = Dependence::Dependent;
  BetaGapDesign bg;
  bg.eta = Eigen::Vector3d(-1.0, -0.5, 1.0);
  sc.beta_gap = bg;
  ArmSpec cc;
  cc.label = "CC";
  cc.est.kind = EstimatorKind::CC;
  cc.est.dependence = Dependence::Dependent;
  sc.arms.push_back(cc);
  return sc;
}

}  // namespace

TEST_CASE("scenario validation rejects malformed configurations") {
  Scenario sc = base_scenario();
  CHECK_NOTHROW(sc.validate());

  Scenario bad = sc;
  bad.n = 0;
  CHECK_THROWS_AS(bad.validate(), SimulationError);

  bad = sc;
  bad.replications = 0;
  CHECK_THROWS_AS(bad.validate(), SimulationError);

  bad = sc;
  bad.failure_cap = 1.5;
  CHECK_THROWS_AS(bad.validate(), SimulationError);

  bad = sc;
  bad.theta_true.sigma = -1.0;
  CHECK_THROWS_AS(bad.validate(), SimulationError);

  bad = sc;
  bad.mvn_cov(0, 1) = 0.9;  // asymmetric
  CHECK_THROWS_AS(bad.validate(), SimulationError);

  bad = sc;
  bad.mvn_cov(0, 1) = bad.mvn_cov(1, 0) = 5.0;  // indefinite
  CHECK_THROWS_AS(bad.validate(), SimulationError);

  bad = sc;
  bad.theta_true.beta = Eigen::Vector2d(1.0, 3.0);  // wrong length
  CHECK_THROWS_AS(bad.validate(), SimulationError);

  bad = sc;
  bad.arms.clear();
  CHECK_THROWS_AS(bad.validate(), SimulationError);

  Scenario bg = beta_gap_scenario();
  CHECK_NOTHROW(bg.validate());
  bg.beta_gap->eta = Eigen::Vector2d(0.0, 0.0);
  CHECK_THROWS_AS(bg.validate(), SimulationError);
  bg = beta_gap_scenario();
  bg.beta_gap->x_sd = 0.0;
  CHECK_THROWS_AS(bg.validate(), SimulationError);
}

TEST_CASE("implied residual covariance between covariate and censoring variable") {
  Scenario sc = base_scenario();
  // Cov(X, C | Z) = cov_xc - cov_xz * cov_cz / var_z = 0.25 - 0.25 = 0.
  CHECK(sc.resid_cov_xc() == doctest::Approx(0.0).scale(1));
  sc.mvn_cov(0, 1) = sc.mvn_cov(1, 0) = 0.60;
  CHECK(sc.resid_cov_xc() == doctest::Approx(0.35).epsilon(1e-12));
}

TEST_CASE("generated data is deterministic per replication index") {
  Scenario sc = base_scenario();
  GeneratedData a = generate_dataset(sc, 3);
  GeneratedData b = generate_dataset(sc, 3);
  GeneratedData c = generate_dataset(sc, 4);
  REQUIRE(a.data.n() == sc.n);
  bool identical = true, differs = false;
  for (int i = 0; i < sc.n; ++i) {
    identical = identical && a.data.records[i].y == b.data.records[i].y &&
                a.data.records[i].w == b.data.records[i].w &&
                a.data.records[i].delta == b.data.records[i].delta;
    differs = differs || a.data.records[i].y != c.data.records[i].y;
  }
  CHECK(identical);
  CHECK(differs);
  CHECK((a.true_x - b.true_x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("censoring design: rates, record layout, and oracle covariate") {
  Scenario sc = base_scenario();
  sc.n = 20000;
  GeneratedData gd = generate_dataset(sc, 0);
  int censored = 0;
  for (int i = 0; i < gd.data.n(); ++i) {
    const auto& o = gd.data.records[i];
    REQUIRE(o.z.size() == 2);  // (age, z)
    if (o.delta == 1) {
      CHECK(o.w == gd.true_x(i));
    } else {
      ++censored;
      CHECK(o.w < gd.true_x(i));  // censoring value below the covariate
    }
  }
  // The design is tuned for 50% censoring.
  CHECK(std::abs(censored / double(gd.data.n()) - 0.5) < 0.02);
}

TEST_CASE("known_bundle reflects the generating distribution") {
  Scenario sc = base_scenario();
  NuisanceBundle b = known_bundle(sc);
  // Conditioning is on the model covariates (age, z); the age covariate is
  // independent of everything, so its slope is zero. X | Z: slope
  // cov_xz / var_z = 0.5, sd sqrt(1 - 0.25) = sqrt(0.75).
  REQUIRE(b.x_given_z.slopes.size() == 2);
  CHECK(b.x_given_z.slopes(0) == doctest::Approx(0.0).scale(1));
  CHECK(b.x_given_z.slopes(1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(b.x_given_z.sd == doctest::Approx(std::sqrt(0.75)).epsilon(1e-12));
  // Independent mechanism: C | Z with slope 0.5, sd sqrt(4 - 0.25).
  CHECK(b.dependence == Dependence::Independent);
  REQUIRE(b.c_cond.slopes.size() == 2);
  CHECK(b.c_cond.slopes(0) == doctest::Approx(0.0).scale(1));
  CHECK(b.c_cond.slopes(1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(b.c_cond.sd == doctest::Approx(std::sqrt(3.75)).epsilon(1e-12));
  REQUIRE(b.theta_for_pi.has_value());
  CHECK((b.theta_for_pi->beta - sc.theta_true.beta).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("beta-gap design: observation rate and gap direction") {
  Scenario sc = beta_gap_scenario();
  sc.n = 20000;
  GeneratedData gd = generate_dataset(sc, 0);
  int observed = 0;
  for (int i = 0; i < gd.data.n(); ++i) {
    const auto& o = gd.data.records[i];
    REQUIRE(o.z.size() == 1);
    if (o.delta == 1) {
      ++observed;
      CHECK(o.w == gd.true_x(i));
    } else {
      // The stand-in value sits below the true covariate by a Beta draw
      // (which can underflow to zero when the shape parameter is small).
      CHECK(o.w <= gd.true_x(i));
      CHECK(o.w > gd.true_x(i) - 1.0);
    }
  }
  const double rate = observed / double(gd.data.n());
  CHECK(rate > 0.20);
  CHECK(rate < 0.35);
}

TEST_CASE("replication runner aggregates and is thread-count invariant") {
  Scenario sc = base_scenario();
  sc.n = 400;
  sc.replications = 6;
  SimulationSummary s1 = run_replications(sc, 1);
  SimulationSummary s2 = run_replications(sc, 3);
  REQUIRE(s1.arms.size() == 1);
  const ArmSummary& a1 = s1.arms[0];
  const ArmSummary& a2 = s2.arms[0];
  CHECK(a1.n_success == 6);
  CHECK(a1.n_failed == 0);
  CHECK(a1.mean_estimate.size() == 4);
  // Bit-identical aggregation independent of the thread count.
  CHECK((a1.mean_estimate - a2.mean_estimate).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a1.empirical_sd - a2.empirical_sd).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a1.coverage - a2.coverage).cwiseAbs().maxCoeff() == 0.0);
  // Rough sanity of the aggregates at this tiny scale.
  CHECK(std::abs(a1.mean_estimate(0) - 1.0) < 0.2);
  CHECK(a1.mean_se(0) > 0);
  // Percent bias is defined as zero where the truth is zero.
  Scenario zc = beta_gap_scenario();
  zc.n = 600;
  SimulationSummary sz = run_replications(zc, 2);
  CHECK(sz.arms[0].percent_bias(0) == 0.0);
}

TEST_CASE("the failure cap aborts a scenario that cannot be fit") {
  // Push the censoring variable far below the covariate: every record is
  // censored, the complete-case initializer fails in every replication, and
  // the failure share exceeds any cap.
  Scenario sc = base_scenario();
  sc.n = 50;
  sc.replications = 3;
  sc.mvn_mean(1) = -1e6;
  CHECK_THROWS_AS(run_replications(sc, 1), SimulationError);
}

TEST_CASE("summaries render to a table and CSV rows") {
  Scenario sc = base_scenario();
  sc.n = 400;
  sc.replications = 3;
  SimulationSummary s = run_replications(sc, 1);
  const std::string table = summarize_to_table(s);
  CHECK(table.find("CC") != std::string::npos);
  CHECK(table.find("beta0") != std::string::npos);

  const std::string csv = summary_to_csv(s);
  // Header line plus one row per arm and coefficient.
  const long rows = std::count(csv.begin(), csv.end(), '\n');
  CHECK(rows == 1 + 1 * 4);
  CHECK(csv.find("estimator,coefficient") == 0);
  CHECK(csv.rfind("\n") == csv.size() - 1);
}
