#include "scm/augment.hpp"

#include <algorithm>
#include <cmath>

#include "scm/simplex_qp.hpp"

namespace scm {

std::string to_string(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::kAllCovariates: return "ALL_COVARIATES";
    case AugmentMode::kNoCovariates: return "NO_COVARIATES";
    case AugmentMode::kResidualized: return "RESIDUALIZED";
  }
  return "?";
}

namespace {

struct RidgeProblem {
  Eigen::MatrixXd features;  // J x p: intercept, covariate block, pre-outcome block
  Eigen::VectorXd treated;   // p
  std::vector<std::string> names;
  int n_unpenalized = 1;  // intercept plus (in residualized mode) the covariate block
  int covariate_cols = 0;
};

// Deterministic greedy basis selection: keeps covariate columns (in design
// order) that are linearly independent of the intercept and the columns kept
// so far. Needed in residualized mode, where the covariate block is
// unpenalized and an ALL_CATEGORIES design is exactly collinear.
std::vector<int> independent_columns(const Eigen::MatrixXd& z) {
  const int j = static_cast<int>(z.rows());
  std::vector<int> kept;
  Eigen::MatrixXd basis(j, 1 + z.cols());
  basis.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(j)));
  int nb = 1;
  for (int c = 0; c < z.cols(); ++c) {
    Eigen::VectorXd v = z.col(c);
    double norm0 = v.norm();
    v -= basis.leftCols(nb) * (basis.leftCols(nb).transpose() * v);
    v -= basis.leftCols(nb) * (basis.leftCols(nb).transpose() * v);  // re-orthogonalize
    if (v.norm() > 1e-10 * std::max(1.0, norm0)) {
      basis.col(nb++) = v / v.norm();
      kept.push_back(c);
    }
  }
  return kept;
}

RidgeProblem build_ridge_problem(const PanelData& panel, const DesignMatrices& design,
                                 AugmentMode mode) {
  const auto donors = panel.donor_indices();
  const int j = static_cast<int>(donors.size());
  const int t0 = panel.t0;
  const int k_cov = design.n_covariate_features();

  Eigen::MatrixXd z(j, k_cov);
  Eigen::VectorXd z1(k_cov);
  if (mode != AugmentMode::kNoCovariates) {
    for (int d = 0; d < j; ++d) z.row(d) = design.x0.col(d).head(k_cov).transpose();
    z1 = design.x1.head(k_cov);
  }

  std::vector<int> cov_cols;
  if (mode == AugmentMode::kAllCovariates) {
    cov_cols.resize(static_cast<std::size_t>(k_cov));
    for (int c = 0; c < k_cov; ++c) cov_cols[static_cast<std::size_t>(c)] = c;
  } else if (mode == AugmentMode::kResidualized) {
    cov_cols = independent_columns(z);
  }

  RidgeProblem prob;
  const int n_cov = static_cast<int>(cov_cols.size());
  prob.covariate_cols = n_cov;
  prob.n_unpenalized = mode == AugmentMode::kResidualized ? 1 + n_cov : 1;
  prob.features.resize(j, 1 + n_cov + t0);
  prob.treated.resize(1 + n_cov + t0);
  prob.features.col(0).setOnes();
  prob.treated[0] = 1.0;
  prob.names.push_back("intercept");
  for (int c = 0; c < n_cov; ++c) {
    prob.features.col(1 + c) = z.col(cov_cols[static_cast<std::size_t>(c)]);
    prob.treated[1 + c] = z1[cov_cols[static_cast<std::size_t>(c)]];
    prob.names.push_back(design.column_names[static_cast<std::size_t>(
        cov_cols[static_cast<std::size_t>(c)])]);
  }
  for (int t = 0; t < t0; ++t) {
    for (int d = 0; d < j; ++d)
      prob.features(d, 1 + n_cov + t) = panel.outcome(t, donors[static_cast<std::size_t>(d)]);
    prob.treated[1 + n_cov + t] = panel.outcome(t, panel.treated_unit);
    prob.names.push_back("pre_outcome_t" + std::to_string(panel.times[t]));
  }
  return prob;
}

Eigen::VectorXd penalty_diagonal(const RidgeProblem& prob, AugmentMode mode,
                                 const RidgePenalty& penalty) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(prob.features.cols());
  const int n_cov = prob.covariate_cols;
  if (mode == AugmentMode::kAllCovariates)
    diag.segment(1, n_cov).setConstant(penalty.covariates);
  diag.tail(prob.features.cols() - 1 - n_cov).setConstant(penalty.outcomes);
  return diag;
}

}  // namespace

double select_penalty(const Eigen::MatrixXd& features, const Eigen::VectorXd& target,
                      int n_unpenalized, const std::vector<double>& grid) {
  require(!grid.empty(), errc::invalid_argument, "penalty grid is empty");
  require(features.rows() == target.size(), errc::invalid_argument,
          "features/target row mismatch");
  const int j = static_cast<int>(features.rows());
  const int p = static_cast<int>(features.cols());

  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());

  double best_err = std::numeric_limits<double>::infinity();
  double best_lambda = sorted.front();
  for (double lambda : sorted) {
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(p);
    diag.tail(p - n_unpenalized).setConstant(lambda);
    Eigen::MatrixXd gram = features.transpose() * features;
    gram.diagonal() += diag;
    Eigen::LDLT<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) continue;
    // Exact ridge LOO: e_i / (1 - h_ii) with H the hat matrix.
    Eigen::MatrixXd ginv_ft = solver.solve(features.transpose());
    Eigen::VectorXd fitted = features * (ginv_ft * target);
    double err = 0.0;
    for (int i = 0; i < j; ++i) {
      double h = features.row(i).dot(ginv_ft.col(i));
      double denom = std::max(1.0 - h, 1e-12);
      double e = (target[i] - fitted[i]) / denom;
      err += e * e;
    }
    if (err <= best_err) {  // <= so exact ties take the larger penalty
      best_err = err;
      best_lambda = lambda;
    }
  }
  return best_lambda;
}

AugmentedFit augmented_fit(const PanelData& panel, const DesignMatrices& design,
                           AugmentMode mode, const PenaltySelection& selection,
                           const AugmentOptions& opts) {
  panel.validate();
  const auto donors = panel.donor_indices();
  const int j = static_cast<int>(donors.size());
  const int t0 = panel.t0;
  const int n_post = panel.n_post();

  RidgeProblem prob = build_ridge_problem(panel, design, mode);

  Eigen::VectorXd y_post_mean(j);
  for (int d = 0; d < j; ++d)
    y_post_mean[d] = panel.outcome.col(donors[static_cast<std::size_t>(d)]).tail(n_post).mean();

  RidgePenalty penalty;
  if (selection.fixed.has_value()) {
    penalty = *selection.fixed;
  } else {
    double lambda =
        select_penalty(prob.features, y_post_mean, prob.n_unpenalized, selection.grid);
    penalty.outcomes = lambda;
    penalty.covariates = lambda;
  }
  if (mode == AugmentMode::kResidualized) penalty.covariates = 0.0;

  // Base weights: uniform variable weights over the balance features, with
  // the dispersion pull toward uniform donor weights.
  const int k_cov = design.n_covariate_features();
  const bool balance_covariates = mode == AugmentMode::kAllCovariates;
  const int balance_rows = (balance_covariates ? k_cov : 0) + t0;
  Eigen::MatrixXd balance(balance_rows, j);
  Eigen::VectorXd balance_target(balance_rows);
  int row = 0;
  if (balance_covariates) {
    balance.topRows(k_cov) = design.x0.topRows(k_cov);
    balance_target.head(k_cov) = design.x1.head(k_cov);
    row = k_cov;
  }
  for (int t = 0; t < t0; ++t, ++row) {
    for (int d = 0; d < j; ++d)
      balance(row, d) = panel.outcome(t, donors[static_cast<std::size_t>(d)]);
    balance_target[row] = panel.outcome(t, panel.treated_unit);
  }

  double dispersion = kDispersionCoefficient * penalty.outcomes;
  SimplexLsqResult base =
      solve_simplex_lsq(balance, balance_target, {}, nullptr, dispersion, nullptr);
  if (!base.converged)
    fail(errc::solver_failure, "augmented base weights did not converge");

  // Ridge system shared by the pooled fit, the per-period fits, and the
  // augmented-weight construction.
  Eigen::VectorXd diag = penalty_diagonal(prob, mode, penalty);
  Eigen::MatrixXd gram = prob.features.transpose() * prob.features;
  gram.diagonal() += diag;
  Eigen::LDLT<Eigen::MatrixXd> solver(gram);
  bool solvable = solver.info() == Eigen::Success;
  Eigen::VectorXd beta_pooled;
  if (solvable) {
    beta_pooled = solver.solve(prob.features.transpose() * y_post_mean);
    solvable = beta_pooled.allFinite();
  }
  if (!solvable) {
    if (mode == AugmentMode::kResidualized)
      fail(errc::rank_failure,
           "cannot balance covariates exactly: ridge system is singular "
           "(more independent covariates than donors); use ALL_COVARIATES");
    fail(errc::solver_failure, "ridge system is singular");
  }

  Eigen::VectorXd imbalance = prob.treated - prob.features.transpose() * base.w;
  Eigen::VectorXd augmented = base.w + prob.features * solver.solve(imbalance);

  Eigen::VectorXd correction(n_post);
  if (opts.per_period_ridge) {
    for (int s = 0; s < n_post; ++s) {
      Eigen::VectorXd y_t(j);
      for (int d = 0; d < j; ++d)
        y_t[d] = panel.outcome(t0 + s, donors[static_cast<std::size_t>(d)]);
      correction[s] = imbalance.dot(solver.solve(prob.features.transpose() * y_t));
    }
  } else {
    correction.setConstant(imbalance.dot(beta_pooled));
  }

  AugmentedFit fit;
  fit.w = DonorWeights{base.w};
  fit.augmented_weights = augmented;
  fit.ridge_coefficients = beta_pooled;
  fit.ridge_feature_names = prob.names;
  fit.correction_series = correction;
  fit.mode = mode;
  fit.penalty = penalty;
  fit.synthetic_path = synthetic_path(panel, fit.w);
  fit.synthetic_path.tail(n_post) += correction;
  fit.rmspe_pre = rmspe(panel, fit.w);
  fit.att_series =
      panel.outcome.col(panel.treated_unit).tail(n_post) - fit.synthetic_path.tail(n_post);
  fit.att_mean = fit.att_series.mean();

  if (mode == AugmentMode::kResidualized && k_cov > 0) {
    // Exact balance must hold for every original covariate column, including
    // the collinear ones dropped from the ridge basis.
    Eigen::VectorXd gap =
        design.x1.head(k_cov) - design.x0.topRows(k_cov) * augmented;
    if (gap.cwiseAbs().maxCoeff() > 1e-8)
      fail(errc::rank_failure,
           "residualized fit cannot balance covariates exactly (imbalance " +
               std::to_string(gap.cwiseAbs().maxCoeff()) + "); use ALL_COVARIATES");
  }
  return fit;
}

}  // namespace scm
