#pragma once

// The standard synthetic control estimator: inner simplex-constrained
// quadratic solve for donor weights W given variable weights V, an outer
// derivative-free search over V (the nested optimizer), the regression-weight
// V initialization, and the ATT/RMSPE outputs.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "scm/panel.hpp"

namespace scm {

struct VWeights {
  Eigen::VectorXd values;  // nonnegative, normalized to sum to 1

  static VWeights uniform(int k);
  // Rescales nonnegative entries to sum to 1; rejects negatives and all-zero.
  static VWeights normalized(const Eigen::VectorXd& raw);
  int size() const { return static_cast<int>(values.size()); }
};

struct DonorWeights {
  Eigen::VectorXd values;  // J entries; convex for constrained SC

  int size() const { return static_cast<int>(values.size()); }
};

struct SolveDiagnostics {
  double objective = 0.0;     // (x1 - X0 w)' diag(V) (x1 - X0 w)
  double kkt_residual = 0.0;  // Frank-Wolfe gap of the scaled least-squares form
  int iterations = 0;
  bool converged = true;
};

// argmin_w (x1 - X0 w)' diag(V) (x1 - X0 w)  s.t.  w >= 0, sum(w) = 1.
// Ties between equally optimal w resolve to the minimum-norm one. A failed
// convergence is reported through diag (best iterate still returned).
DonorWeights solve_w_given_v(const DesignMatrices& design, const VWeights& v,
                             SolveDiagnostics* diag = nullptr,
                             const DonorWeights* warm_start = nullptr);

struct SynthFit {
  DonorWeights w;
  VWeights v;
  Eigen::VectorXd synthetic_path;  // T: sum_j w_j Y_{j,t}
  double rmspe_pre = 0.0;
  Eigen::VectorXd att_series;  // T - T0 entries, Y_1t minus synthetic path
  double att_mean = 0.0;
  // Best outer objective (pre-treatment MSPE of the incumbent W) after each
  // outer iteration; non-increasing. For fixed-V fits this has one entry.
  std::vector<double> optimizer_trace;
};

struct NestedOptions {
  int restarts = 3;              // random restarts beyond the supplied init
  int budget_per_restart = 500;  // inner solves allowed per restart
  std::uint64_t seed = 0;
  double tol = 1e-12;  // Nelder-Mead objective-spread stopping threshold
};

// Regression-weight V initialization: standardize the stacked (X0, X1)
// columns by their sample SD, append an intercept, regress each pre-period
// outcome cross-section on the result, and normalize the summed squared
// coefficients (intercept excluded). Throws errc::singular_design when the
// standardized Gram matrix has condition number above 1e12; callers fall
// back to uniform V.
VWeights regression_v_init(const DesignMatrices& design, const PanelData& panel);

struct ContributionBreakdown {
  std::map<std::string, double> sum_squares;
  double total = 0.0;
  std::map<std::string, double> shares;
};

// The arithmetic behind regression weights: per-variable sums of squared
// coefficients and the resulting shares of total variable weight.
ContributionBreakdown v_contribution_breakdown(
    const std::map<std::string, std::vector<double>>& coefficients);
std::map<std::string, double> v_contribution_shares(
    const std::map<std::string, std::vector<double>>& coefficients);

// Two-step optimization: outer Nelder-Mead over softmax-parameterized V
// minimizing pre-treatment MSPE of W*(V), inner solve_w_given_v.
SynthFit nested_fit(const PanelData& panel, const DesignMatrices& design, const VWeights& init,
                    const NestedOptions& opts = {});

// Single inner solve at the supplied V (Stata's regression-weights mode).
SynthFit fixed_v_fit(const PanelData& panel, const DesignMatrices& design, const VWeights& v);

double rmspe(const PanelData& panel, const DonorWeights& w);
std::pair<Eigen::VectorXd, double> att(const PanelData& panel, const DonorWeights& w);

// sum_j w_j Y_{j,t} over donors, all T periods.
Eigen::VectorXd synthetic_path(const PanelData& panel, const DonorWeights& w);

}  // namespace scm
