#pragma once

// Ridge-augmented synthetic control. Base weights balance the full
// pre-treatment outcome vector (plus covariates, mode permitting) under
// uniform variable weights; a ridge regression of donor post-treatment
// outcomes on (intercept, covariates, pre-treatment outcomes) then corrects
// the estimate by the remaining imbalance:
//
//   Y1_hat(0)_t = sum_j w_j Y_{j,t} + (phi_1 - Phi' w)' beta_hat
//
// which is equivalently a synthetic control with augmented weights
// w~ = w + Phi (Phi'Phi + Lambda)^-1 (phi_1 - Phi' w). Unlike the base
// weights, w~ may leave the donor convex hull.
//
// RESIDUALIZED mode zeroes the ridge penalty on the covariate block, which
// makes the augmented weights match every covariate exactly, so the estimate
// no longer depends on which reference categories the design omitted; its
// base weights therefore balance the pre-treatment outcomes only.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scm/panel.hpp"
#include "scm/synth.hpp"

namespace scm {

enum class AugmentMode { kAllCovariates, kNoCovariates, kResidualized };

std::string to_string(AugmentMode mode);

struct RidgePenalty {
  double outcomes = 1.0;
  double covariates = 1.0;  // ignored in kNoCovariates, forced to 0 in kResidualized
};

struct PenaltySelection {
  // When unset, the outcome-block penalty is chosen by leave-one-donor-out
  // cross-validation over `grid` (covariate block shares the same value in
  // kAllCovariates mode).
  std::optional<RidgePenalty> fixed;
  std::vector<double> grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
};

struct AugmentOptions {
  bool per_period_ridge = false;  // fit beta_hat per post period instead of pooled
};

// Footnote-style dispersion penalty on the base weights: an L2 pull toward
// uniform with coefficient kDispersionCoefficient * outcome-block lambda.
inline constexpr double kDispersionCoefficient = 1e-3;

struct AugmentedFit {
  DonorWeights w;                     // base SC weights (convex)
  Eigen::VectorXd augmented_weights;  // sums to 1; negative entries allowed
  Eigen::VectorXd synthetic_path;     // base path pre-treatment, augmented after
  Eigen::VectorXd ridge_coefficients; // pooled beta_hat over ridge features
  std::vector<std::string> ridge_feature_names;
  Eigen::VectorXd correction_series;  // per post period
  double rmspe_pre = 0.0;
  Eigen::VectorXd att_series;
  double att_mean = 0.0;
  AugmentMode mode = AugmentMode::kAllCovariates;
  RidgePenalty penalty;
};

// The design supplies the covariate features (its outcome-summary block is
// ignored here; augmentation always uses the full pre-treatment outcome
// vector). Throws errc::rank_failure if kResidualized cannot balance the
// covariates exactly (more independent covariates than donors).
AugmentedFit augmented_fit(const PanelData& panel, const DesignMatrices& design,
                           AugmentMode mode, const PenaltySelection& selection = {},
                           const AugmentOptions& opts = {});

// Leave-one-donor-out cross-validated ridge penalty over the grid, computed
// with the exact LOO identity; ties resolve to the larger penalty. The first
// n_unpenalized columns of `features` are never penalized.
double select_penalty(const Eigen::MatrixXd& features, const Eigen::VectorXd& target,
                      int n_unpenalized, const std::vector<double>& grid);

}  // namespace scm
