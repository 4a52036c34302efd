#pragma once

// Interactive fixed-effects counterfactual ("generalized synthetic control"):
// fit Y_{j,t} = lambda_j + delta_t + x_{j,t}' gamma + f_t' l_j + e on donors
// only, recover the treated unit's effect from its pre-treatment residual
// mean, and recombine. Because the covariates enter through an unconstrained
// regression, predictions do not depend on which reference category a
// compositional group omits.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scm/panel.hpp"

namespace scm {

enum class IfeCovariates { kAll, kNone };

struct IfeOptions {
  int max_iterations = 500;  // factor/coefficient alternation rounds
  double rel_tol = 1e-9;     // relative objective change stop
};

struct IfeFit {
  Eigen::VectorXd gamma;  // covariate coefficients (empty with kNone)
  std::vector<std::string> gamma_names;
  Eigen::VectorXd delta;         // T year effects (carry the grand level)
  Eigen::VectorXd unit_effects;  // J donor effects, normalized to mean zero
  double treated_effect = 0.0;
  Eigen::MatrixXd factors;   // T x r
  Eigen::MatrixXd loadings;  // J x r donor loadings
  Eigen::VectorXd treated_loadings;  // r
  Eigen::VectorXd counterfactual_path;  // all T periods
  Eigen::VectorXd att_series;
  double att_mean = 0.0;
  double rmspe_pre = 0.0;
  double donor_residual_ss = 0.0;  // in-sample, after factors
  bool collinear_warning = false;  // covariates needed a pseudo-inverse
};

// Time-varying covariates are taken straight from the panel; `omit` picks
// which category of each compositional group stays out (ignored with kNone).
// r latent factors are extracted from donor residuals by iterated
// rank-r SVD; r must satisfy r < min(J, T0).
IfeFit ife_fit(const PanelData& panel, const CompositionalSpec& spec,
               const OmissionChoice& omit, IfeCovariates covariates, int r,
               const IfeOptions& opts = {});

}  // namespace scm
