#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cencov/estimators.hpp"
#include "cencov/nuisance.hpp"

// Scenario-driven Monte Carlo harness: trivariate-normal censoring designs,
// the beta-gap dependent design, the replication runner, and table-style
// summaries.
namespace cencov {

struct SimulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// How an arm views the generated data before fitting: as observed, with the
// true covariate revealed (oracle), or with w naively treated as x.
enum class DataView { AsIs, Oracle, Naive };

struct ArmSpec {
  std::string label;
  DataView view = DataView::AsIs;
  EstimatorSpec est;
  NuisanceConfig::Mode nuisance_mode = NuisanceConfig::Mode::Known;
  bool x_only_from_complete_cases = false;
  std::optional<MisspecInjector> injector;
};

// Covariate and observation mechanism of the dependent design: z ~ N(0,1),
// x | z Gaussian, Pr(observed | x, z) logistic, and for unobserved records
// w = x - B with B ~ Beta(exp(z), 1).
struct BetaGapDesign {
  double x_intercept = 0.0;
  double x_slope = 0.5;
  double x_sd = 0.8660254037844386;  // sqrt(0.75)
  VectorXd eta;                      // logistic coefficients over (1, x, z)
};

struct Scenario {
  std::string name;
  int n = 1000;
  int replications = 300;
  std::uint64_t master_seed = 0;
  Theta theta_true;
  MeanSpec mean;
  Dependence dependence = Dependence::Independent;
  // Trivariate-normal design over (X, C, Z...); the age covariate A is an
  // independent standard normal appended as the first model covariate when
  // the mean form is TimeToEvent.
  VectorXd mvn_mean;
  MatrixXd mvn_cov;
  std::optional<BetaGapDesign> beta_gap;
  std::vector<ArmSpec> arms;
  double failure_cap = 0.02;

  // Cov(X, C | Z) implied by the covariance matrix.
  double resid_cov_xc() const;
  void validate() const;
};

struct GeneratedData {
  Dataset data;     // observed records, censored layout
  VectorXd true_x;  // the uncensored covariate, for oracle fits
};

// Deterministic per (master_seed, replication_index).
GeneratedData generate_dataset(const Scenario& sc, int replication_index);

// The nuisance blocks implied by the scenario's generating distribution,
// with theta_for_pi set to the truth (mechanistic mode).
NuisanceBundle known_bundle(const Scenario& sc);

struct ArmSummary {
  std::string label;
  int n_success = 0;
  int n_failed = 0;
  VectorXd mean_estimate;
  VectorXd mean_bias;
  VectorXd percent_bias;  // zero where the true value is zero
  VectorXd mean_se;
  VectorXd empirical_sd;  // NaN when fewer than two successes
  VectorXd coverage;      // percent
};

struct SimulationSummary {
  std::string scenario_name;
  std::uint64_t master_seed = 0;
  int replications = 0;
  int n = 0;
  VectorXd theta_true;
  std::vector<ArmSummary> arms;
  long total_failures = 0;
};

// Runs all replications across `threads` workers (each replication owns its
// RNG streams) and aggregates. Throws SimulationError when the failure share
// of any arm exceeds the scenario's cap.
SimulationSummary run_replications(const Scenario& sc, int threads = 1);

// Human-readable grid in table style: Estimate, Bias, SE and SD scaled by
// 100, and 95% coverage.
std::string summarize_to_table(const SimulationSummary& s);
// Machine-readable rows (one per arm and coefficient), same quantities.
std::string summary_to_csv(const SimulationSummary& s);

}  // namespace cencov
