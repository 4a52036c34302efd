#include "scm/ife.hpp"

#include <algorithm>
#include <cmath>

namespace scm {

namespace {

// Two-way within transform: subtract unit means, time means, add grand mean.
Eigen::MatrixXd within(const Eigen::MatrixXd& m) {
  Eigen::VectorXd time_means = m.rowwise().mean();
  Eigen::RowVectorXd unit_means = m.colwise().mean();
  double grand = m.mean();
  return (m.colwise() - time_means).rowwise() - unit_means.array().matrix() +
         Eigen::MatrixXd::Constant(m.rows(), m.cols(), grand);
}

std::vector<std::string> covariate_columns(const CompositionalSpec& spec,
                                           const OmissionChoice& omit) {
  std::vector<std::string> cols;
  for (const auto& name : spec.scalar_covariates) cols.push_back(name);
  for (const auto& g : spec.groups) {
    auto it = omit.omitted.find(g.name);
    for (const auto& cat : g.categories)
      if (it == omit.omitted.end() || it->second != cat) cols.push_back(cat);
  }
  return cols;
}

struct TwoWayFit {
  Eigen::VectorXd gamma;
  Eigen::VectorXd delta;         // time effect including the grand level
  Eigen::VectorXd unit_effects;  // mean zero across donors
  bool collinear = false;
};

// Least squares of target on (unit FE, time FE, covariates) over donors.
// Covariates are within-transformed once by the caller.
TwoWayFit two_way_fit(const Eigen::MatrixXd& target,
                      const std::vector<Eigen::MatrixXd>& x_within,
                      const std::vector<Eigen::MatrixXd>& x_raw) {
  const int t = static_cast<int>(target.rows());
  const int j = static_cast<int>(target.cols());
  const int k = static_cast<int>(x_within.size());

  TwoWayFit fit;
  fit.gamma.resize(k);
  Eigen::MatrixXd resid = target;
  if (k > 0) {
    Eigen::MatrixXd y_within = within(target);
    Eigen::MatrixXd gram(k, k);
    Eigen::VectorXd rhs(k);
    for (int a = 0; a < k; ++a) {
      rhs[a] = (x_within[static_cast<std::size_t>(a)].array() * y_within.array()).sum();
      for (int b = a; b < k; ++b) {
        gram(a, b) = (x_within[static_cast<std::size_t>(a)].array() *
                      x_within[static_cast<std::size_t>(b)].array())
                         .sum();
        gram(b, a) = gram(a, b);
      }
    }
    Eigen::LDLT<Eigen::MatrixXd> solver(gram);
    Eigen::VectorXd gamma = solver.solve(rhs);
    double gap = (gram * gamma - rhs).norm();
    if (solver.info() != Eigen::Success || !gamma.allFinite() ||
        gap > 1e-8 * std::max(1.0, rhs.norm())) {
      // Collinear covariates: fall back to the minimum-norm solution.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
      Eigen::VectorXd inv = eig.eigenvalues();
      double cutoff = 1e-12 * std::max(inv.maxCoeff(), 1.0);
      for (int i = 0; i < k; ++i) inv[i] = inv[i] > cutoff ? 1.0 / inv[i] : 0.0;
      gamma = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * rhs;
      fit.collinear = true;
    }
    fit.gamma = gamma;
    for (int a = 0; a < k; ++a) resid -= gamma[a] * x_raw[static_cast<std::size_t>(a)];
  }

  Eigen::RowVectorXd unit_means = resid.colwise().mean();
  double grand = resid.mean();
  fit.unit_effects = (unit_means.transpose().array() - grand).matrix();
  Eigen::MatrixXd centered = resid.rowwise() - fit.unit_effects.transpose();
  fit.delta = centered.rowwise().mean();
  (void)t;
  (void)j;
  return fit;
}

}  // namespace

IfeFit ife_fit(const PanelData& panel, const CompositionalSpec& spec,
               const OmissionChoice& omit, IfeCovariates covariates, int r,
               const IfeOptions& opts) {
  panel.validate();
  const auto donors = panel.donor_indices();
  const int j = static_cast<int>(donors.size());
  const int t = panel.n_periods();
  const int t0 = panel.t0;
  require(r >= 0, errc::invalid_argument, "r must be nonnegative");
  require(r < std::min(j, t0), errc::invalid_argument,
          "need r < min(J, T0) latent factors");

  std::vector<std::string> cols;
  if (covariates == IfeCovariates::kAll) {
    spec.validate();
    cols = covariate_columns(spec, omit);
  }
  const int k = static_cast<int>(cols.size());

  // Donor blocks, treated column kept aside: post-treatment treated data
  // never enters estimation.
  Eigen::MatrixXd y(t, j);
  for (int d = 0; d < j; ++d) y.col(d) = panel.outcome.col(donors[static_cast<std::size_t>(d)]);
  std::vector<Eigen::MatrixXd> x_raw;
  std::vector<Eigen::MatrixXd> x_within;
  Eigen::MatrixXd x_treated(t, k);
  for (int c = 0; c < k; ++c) {
    const Eigen::MatrixXd& full = panel.covariate(cols[static_cast<std::size_t>(c)]);
    Eigen::MatrixXd block(t, j);
    for (int d = 0; d < j; ++d) block.col(d) = full.col(donors[static_cast<std::size_t>(d)]);
    x_within.push_back(within(block));
    x_raw.push_back(std::move(block));
    x_treated.col(c) = full.col(panel.treated_unit);
  }

  TwoWayFit fe = two_way_fit(y, x_within, x_raw);
  Eigen::MatrixXd factors(t, r);
  Eigen::MatrixXd loadings(j, r);
  factors.setZero();
  loadings.setZero();

  auto donor_residual = [&](const TwoWayFit& f, const Eigen::MatrixXd& factor_part) {
    Eigen::MatrixXd resid = y - factor_part;
    for (int c = 0; c < k; ++c) resid -= f.gamma[c] * x_raw[static_cast<std::size_t>(c)];
    resid.colwise() -= f.delta;
    resid.rowwise() -= f.unit_effects.transpose();
    return resid;
  };

  double objective = donor_residual(fe, Eigen::MatrixXd::Zero(t, j)).squaredNorm();
  if (r > 0) {
    // Alternate (FE + covariates given factors) with (rank-r SVD of the
    // residual) until the fit stops improving.
    for (int it = 0; it < opts.max_iterations; ++it) {
      Eigen::MatrixXd resid = donor_residual(fe, factors * loadings.transpose()) +
                              factors * loadings.transpose();
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(resid, Eigen::ComputeThinU | Eigen::ComputeThinV);
      factors = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
      loadings = svd.matrixV().leftCols(r);
      fe = two_way_fit(y - factors * loadings.transpose(), x_within, x_raw);
      double next = donor_residual(fe, factors * loadings.transpose()).squaredNorm();
      bool done = std::abs(objective - next) <= opts.rel_tol * std::max(objective, 1e-300);
      objective = next;
      if (done) break;
    }
  }

  // Treated effect: loadings from the pre-treatment residual, then its mean.
  Eigen::VectorXd u =
      panel.outcome.col(panel.treated_unit) - fe.delta - x_treated * fe.gamma;
  Eigen::VectorXd treated_loadings = Eigen::VectorXd::Zero(r);
  if (r > 0) {
    Eigen::MatrixXd f_pre = factors.topRows(t0);
    treated_loadings =
        f_pre.completeOrthogonalDecomposition().solve(u.head(t0));
    u -= factors * treated_loadings;
  }
  double treated_effect = u.head(t0).mean();

  IfeFit fit;
  fit.gamma = fe.gamma;
  fit.gamma_names = cols;
  fit.delta = fe.delta;
  fit.unit_effects = fe.unit_effects;
  fit.treated_effect = treated_effect;
  fit.factors = factors;
  fit.loadings = loadings;
  fit.treated_loadings = treated_loadings;
  fit.collinear_warning = fe.collinear;
  fit.donor_residual_ss = objective;
  fit.counterfactual_path = fe.delta + x_treated * fe.gamma +
                            factors * treated_loadings +
                            Eigen::VectorXd::Constant(t, treated_effect);
  Eigen::VectorXd gap_pre = panel.outcome.col(panel.treated_unit).head(t0) -
                            fit.counterfactual_path.head(t0);
  fit.rmspe_pre = std::sqrt(gap_pre.squaredNorm() / t0);
  const int n_post = panel.n_post();
  fit.att_series = panel.outcome.col(panel.treated_unit).tail(n_post) -
                   fit.counterfactual_path.tail(n_post);
  fit.att_mean = fit.att_series.mean();
  return fit;
}

}  // namespace scm
