#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cencov/closed_forms.hpp"
#include "cencov/model.hpp"
#include "cencov/nuisance.hpp"

// The six estimating-function families (CC, IPW, MLE, ACC, MACC, AIPW), their
// Lambda-augmented variants, and the fitting pipeline: pilot fit -> Lambda
// estimate -> final solve -> sandwich covariance.
namespace cencov {

struct EstimatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class EstimatorKind { CC, IPW, MLE, ACC, MACC, AIPW };
enum class PsiMode { Effective, Closed };
enum class LambdaMode { None, Plain, NuisanceAdjusted };
enum class ProbabilitySource { Analytic, Logistic, Injected };

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::CC;
  Problem problem = Problem::Censored;
  Dependence dependence = Dependence::Independent;
  MeanSpec mean;
  PsiMode psi_mode = PsiMode::Closed;
  LambdaMode lambda_mode = LambdaMode::None;
  ProbabilitySource probability_source = ProbabilitySource::Analytic;
  // Deliberate misspecification: weight the IPW score by pi_{Y,Z} instead of
  // pi_{X,Z}. Biased on purpose; used to demonstrate the inconsistency.
  bool weight_by_pi_yz = false;
  int quad_nodes = 60;

  bool augmented() const {
    return kind == EstimatorKind::ACC || kind == EstimatorKind::MACC ||
           kind == EstimatorKind::AIPW;
  }
  // Throws EstimatorError on forbidden combinations, notably the MLE for the
  // dependent missing problem where the marginal of Y is not computable.
  void validate() const;
};

// Uniform record container for both problems. Missing-problem records are
// stored with w = x when observed and w = -infinity when not, so the MLE's
// censored-record likelihood (a lower-truncated integral) covers both cases.
struct Dataset {
  Problem problem = Problem::Censored;
  std::vector<CensoredObservation> records;

  static Dataset from_missing(const std::vector<MissingObservation>& recs);
  int n() const { return static_cast<int>(records.size()); }
};

// Observation probabilities for one record, frozen while theta is solved for.
struct RecordPi {
  double weight_pi = 1.0;  // IPW weight denominator
  double pi_xz = 1.0;      // Pr(observed | x = w, z), complete records
  double pi_yz = 0.5;      // Pr(observed | y, z)
};

struct FitResult {
  Theta theta_hat;
  MatrixXd covariance;  // nuisance-corrected when nuisance was estimated
  VectorXd se;
  std::optional<MatrixXd> covariance_uncorrected;
  std::optional<VectorXd> se_uncorrected;
  std::optional<MatrixXd> lambda;
  bool converged = false;
  int iterations = 0;
  long clamp_events = 0;
};

// How the nuisance blocks are obtained: taken as given in `known`, or
// estimated from the data (Gaussian blocks by censored MLE, observation
// probabilities by logistic regression when the spec asks for them). In
// Estimate mode, `known` still supplies the fields that are never estimated:
// theta_for_pi, injected_pi, x_dist_for_mle.
struct NuisanceConfig {
  enum class Mode { Known, Estimate };
  Mode mode = Mode::Known;
  NuisanceBundle known;
  double known_resid_cov_xc = 0.0;  // required to identify the dep blocks
  // Fit only f_{X|Z}, from the complete cases. Used when the joint censored
  // likelihood is unavailable (dependent mechanisms without a known residual
  // covariance) and the estimator needs no censoring block.
  bool x_only_from_complete_cases = false;
};

RecordPi compute_record_pi(const EstimatorSpec& spec,
                           const CensoredObservation& obs,
                           const NuisanceBundle& bundle,
                           std::optional<double> injected_pi = std::nullopt,
                           ClampCounter* clamps = nullptr);

// The augmentation vector Psi(y, z; theta) in its closed or effective form.
VectorXd psi_augmentation(const EstimatorSpec& spec,
                          const CensoredObservation& obs, const Theta& theta,
                          const NuisanceBundle& bundle,
                          ClampCounter* clamps = nullptr);

// Per-record estimating-function value. `lambda` premultiplies the
// augmentation term; identity when absent.
VectorXd phi_contribution(const EstimatorSpec& spec,
                          const CensoredObservation& obs, const Theta& theta,
                          const NuisanceBundle& bundle, const RecordPi& pi,
                          const std::optional<MatrixXd>& lambda = std::nullopt,
                          ClampCounter* clamps = nullptr);

// Sample-mean Lambda at a pilot theta: minus the cross moment of the
// augmentation term with the pilot estimating function, times the inverted
// outer moment of the augmentation term. The nuisance-adjusted variant adds
// the A* Upsilon influence terms of the estimated nuisance block inside both
// moments. `bundle` must carry the corresponding fit in that case.
MatrixXd estimate_lambda(const EstimatorSpec& spec, const Dataset& data,
                         const Theta& theta_pilot, const NuisanceBundle& bundle,
                         const std::vector<RecordPi>& pis,
                         ClampCounter* clamps = nullptr);

FitResult fit_estimator(const EstimatorSpec& spec, const Dataset& data,
                        const NuisanceConfig& nuisance);

// Internal hooks shared with the inference module and tests.

// Rebuild the Gaussian-block-dependent parts of a bundle at a packed alpha
// (same layout as pack_alpha); used for numeric nuisance derivatives.
NuisanceBundle bundle_at_alpha(const NuisanceBundle& bundle,
                               const VectorXd& alpha);
// Same for the logistic coefficients of pi_{Y,Z}.
NuisanceBundle bundle_at_kappa(const NuisanceBundle& bundle,
                               const VectorXd& kappa);

// Complete-case least squares, the initializer for every Newton solve.
Theta least_squares_init(const Dataset& data, const MeanSpec& mean);

}  // namespace cencov
