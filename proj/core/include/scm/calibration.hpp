#pragma once

// CalibrationSet: the coefficient means/covariances that parameterize the
// simulation's regression chain (industry | year; education | industry, year;
// race | industry, education, year; wage | all prior) plus the two outcome
// models. Calibrations live in versioned JSON files and are fully swappable;
// the repo ships a documented synthetic default.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scm/panel.hpp"

namespace scm {

struct RegressionFamily {
  std::string name;
  std::vector<std::string> predictors;  // subset of {year, industry, education, race}
  int n_rows = 1;                  // response categories; 1 for the linear wage family
  Eigen::MatrixXd coef_mean;       // n_rows x p, p = 1 (intercept) + predictor widths
  Eigen::MatrixXd coef_cov;        // (n_rows*p) x (n_rows*p), row-major flattening
  double residual_sd = 0.0;        // linear family only
  Eigen::VectorXd state_effects;   // lambda_s, one per unit
  double state_effect_sd = 0.0;    // sigma_lambda
};

struct OutcomeModel {
  Eigen::VectorXd coef_mean;
  Eigen::MatrixXd coef_cov;
  double residual_sd = 0.0;
};

struct CalibrationSet {
  std::string description;
  std::vector<std::string> unit_labels;  // treated unit first
  std::vector<std::string> industry_categories;   // 5
  std::vector<std::string> education_categories;  // 4
  std::vector<std::string> race_categories;       // 3
  std::string wage_name = "wage";
  // "mean" replaces every Dirichlet draw by alpha / sum(alpha); used by the
  // zero-noise calibration so identical inputs give identical covariates.
  bool composition_mean_mode = false;

  RegressionFamily industry;
  RegressionFamily education;
  RegressionFamily race;
  RegressionFamily wage;

  OutcomeModel linear_outcome;  // intercept, year, wage, industry, education, race
  OutcomeModel factor_outcome;  // intercept, year, 13 pre-means, year x 13 pre-means
  double outcome_reference_sd = 0.0;  // treated-unit outcome SD the 2-SD tau refers to
  double tau_default = 0.0;

  int n_units() const { return static_cast<int>(unit_labels.size()); }
  // Groups in design order (race, education, industry) plus the wage scalar.
  CompositionalSpec compositional_spec() const;
  void validate() const;
};

CalibrationSet load_calibration(const std::string& json_text);
CalibrationSet load_calibration_file(const std::string& path);

}  // namespace scm
