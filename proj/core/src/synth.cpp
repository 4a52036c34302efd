#include "scm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "scm/rng.hpp"
#include "scm/simplex_qp.hpp"

namespace scm {

VWeights VWeights::uniform(int k) {
  require(k >= 1, errc::invalid_argument, "V needs at least one entry");
  return {Eigen::VectorXd::Constant(k, 1.0 / k)};
}

VWeights VWeights::normalized(const Eigen::VectorXd& raw) {
  require(raw.size() >= 1, errc::invalid_argument, "V needs at least one entry");
  require(raw.minCoeff() >= 0.0, errc::invalid_argument, "V entries must be nonnegative");
  double total = raw.sum();
  require(total > 0.0, errc::invalid_argument, "V entries sum to zero");
  return {raw / total};
}

DonorWeights solve_w_given_v(const DesignMatrices& design, const VWeights& v,
                             SolveDiagnostics* diag, const DonorWeights* warm_start) {
  const int k = design.n_features();
  require(v.size() == k, errc::invalid_argument, "V length must match design columns");
  require(design.n_donors() >= 1, errc::empty_donor_pool, "design has no donors");

  // (x1 - X0 w)' diag(V) (x1 - X0 w) == ||sqrt(V) x1 - sqrt(V) X0 w||^2
  Eigen::VectorXd scale = v.values.cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd b = scale.asDiagonal() * design.x0;
  Eigen::VectorXd r = scale.asDiagonal() * design.x1;

  const Eigen::VectorXd* warm = nullptr;
  if (warm_start != nullptr && warm_start->size() == design.n_donors())
    warm = &warm_start->values;

  SimplexLsqResult res = solve_simplex_lsq(b, r, {}, warm);
  if (diag != nullptr) {
    diag->objective = res.objective;
    diag->kkt_residual = res.kkt_residual;
    diag->iterations = res.iterations;
    diag->converged = res.converged;
  }
  return {res.w};
}

VWeights regression_v_init(const DesignMatrices& design, const PanelData& panel) {
  const int k = design.n_features();
  const int n = panel.n_units();
  const auto donors = panel.donor_indices();

  // Rows: donors then the treated unit, matching the (X0, X1) stacking.
  Eigen::MatrixXd x(n, k);
  for (int d = 0; d < n - 1; ++d) x.row(d) = design.x0.col(d).transpose();
  x.row(n - 1) = design.x1.transpose();

  Eigen::MatrixXd xs(n, k + 1);
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd col = x.col(c);
    double mean = col.mean();
    double sd = std::sqrt((col.array() - mean).square().sum() / (n - 1));
    if (!(sd > 0.0)) fail(errc::singular_design, "design column with zero variance");
    xs.col(c) = col / sd;
  }
  xs.col(k).setOnes();

  Eigen::MatrixXd gram = xs.transpose() * xs;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  double lo = eig.eigenvalues().minCoeff();
  double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12)
    fail(errc::singular_design, "standardized design is singular (condition number > 1e12)");

  Eigen::LDLT<Eigen::MatrixXd> solver(gram);
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(k);
  for (int t = 0; t < panel.t0; ++t) {
    Eigen::VectorXd y(n);
    for (int d = 0; d < n - 1; ++d) y[d] = panel.outcome(t, donors[static_cast<std::size_t>(d)]);
    y[n - 1] = panel.outcome(t, panel.treated_unit);
    Eigen::VectorXd beta = solver.solve(xs.transpose() * y);
    sums += beta.head(k).cwiseAbs2();
  }
  double total = sums.sum();
  if (!(total > 0.0)) return VWeights::uniform(k);  // outcomes orthogonal to every column
  return {sums / total};
}

ContributionBreakdown v_contribution_breakdown(
    const std::map<std::string, std::vector<double>>& coefficients) {
  require(!coefficients.empty(), errc::invalid_argument, "no coefficients given");
  ContributionBreakdown out;
  for (const auto& [name, values] : coefficients) {
    double ss = 0.0;
    for (double c : values) ss += c * c;
    out.sum_squares[name] = ss;
    out.total += ss;
  }
  require(out.total > 0.0, errc::invalid_argument, "all coefficients are zero");
  for (const auto& [name, ss] : out.sum_squares) out.shares[name] = ss / out.total;
  return out;
}

std::map<std::string, double> v_contribution_shares(
    const std::map<std::string, std::vector<double>>& coefficients) {
  return v_contribution_breakdown(coefficients).shares;
}

Eigen::VectorXd synthetic_path(const PanelData& panel, const DonorWeights& w) {
  const auto donors = panel.donor_indices();
  require(w.size() == static_cast<int>(donors.size()), errc::invalid_argument,
          "donor weights length mismatch");
  Eigen::VectorXd path = Eigen::VectorXd::Zero(panel.n_periods());
  for (std::size_t d = 0; d < donors.size(); ++d)
    path += w.values[static_cast<int>(d)] * panel.outcome.col(donors[d]);
  return path;
}

double rmspe(const PanelData& panel, const DonorWeights& w) {
  Eigen::VectorXd path = synthetic_path(panel, w);
  Eigen::VectorXd gap =
      panel.outcome.col(panel.treated_unit).head(panel.t0) - path.head(panel.t0);
  return std::sqrt(gap.squaredNorm() / panel.t0);
}

std::pair<Eigen::VectorXd, double> att(const PanelData& panel, const DonorWeights& w) {
  Eigen::VectorXd path = synthetic_path(panel, w);
  const int post = panel.n_post();
  Eigen::VectorXd series =
      panel.outcome.col(panel.treated_unit).tail(post) - path.tail(post);
  return {series, series.mean()};
}

namespace {

double pre_mspe(const PanelData& panel, const Eigen::VectorXd& path) {
  Eigen::VectorXd gap =
      panel.outcome.col(panel.treated_unit).head(panel.t0) - path.head(panel.t0);
  return gap.squaredNorm() / panel.t0;
}

SynthFit assemble_fit(const PanelData& panel, const DesignMatrices& design,
                      const VWeights& v, const DonorWeights& w, std::vector<double> trace) {
  (void)design;
  SynthFit fit;
  fit.w = w;
  fit.v = v;
  fit.synthetic_path = synthetic_path(panel, w);
  fit.rmspe_pre = std::sqrt(pre_mspe(panel, fit.synthetic_path));
  std::tie(fit.att_series, fit.att_mean) = att(panel, w);
  fit.optimizer_trace = std::move(trace);
  return fit;
}

// Softmax with the last logit pinned to zero; removes the scale gauge so the
// Nelder-Mead search space has no flat direction.
Eigen::VectorXd logits_to_v(const Eigen::VectorXd& z) {
  const int k = static_cast<int>(z.size()) + 1;
  Eigen::VectorXd full(k);
  full.head(k - 1) = z;
  full[k - 1] = 0.0;
  full.array() -= full.maxCoeff();
  Eigen::VectorXd v = full.array().exp();
  return v / v.sum();
}

Eigen::VectorXd v_to_logits(const VWeights& v) {
  const int k = v.size();
  Eigen::VectorXd z(k - 1);
  double ref = std::log(std::max(v.values[k - 1], 1e-8));
  for (int i = 0; i < k - 1; ++i) z[i] = std::log(std::max(v.values[i], 1e-8)) - ref;
  return z;
}

struct NelderMeadOutcome {
  Eigen::VectorXd best_z;
  double best_f = std::numeric_limits<double>::infinity();
};

// Standard Nelder-Mead (reflection 1, expansion 2, contraction 0.5, shrink
// 0.5) with a hard budget on objective evaluations.
template <typename F>
NelderMeadOutcome nelder_mead(F&& objective, const Eigen::VectorXd& z0, int budget, double tol,
                              std::vector<double>* trace) {
  const int n = static_cast<int>(z0.size());
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& z) {
    ++evals;
    return objective(z);
  };

  std::vector<Eigen::VectorXd> pts;
  std::vector<double> fs;
  pts.push_back(z0);
  fs.push_back(eval(z0));
  for (int i = 0; i < n && evals < budget; ++i) {
    Eigen::VectorXd z = z0;
    z[i] += 0.5;
    pts.push_back(z);
    fs.push_back(eval(z));
  }

  auto record = [&](double best) {
    if (trace != nullptr)
      trace->push_back(trace->empty() ? best : std::min(trace->back(), best));
  };

  auto order = [&] {
    std::vector<std::size_t> idx(pts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return fs[a] < fs[b];
    });
    std::vector<Eigen::VectorXd> p2;
    std::vector<double> f2;
    for (auto i : idx) {
      p2.push_back(pts[i]);
      f2.push_back(fs[i]);
    }
    pts = std::move(p2);
    fs = std::move(f2);
  };

  order();
  record(fs.front());
  while (evals < budget && static_cast<int>(pts.size()) == n + 1) {
    if (fs.back() - fs.front() <= tol) break;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) centroid += pts[i];
    centroid /= n;

    Eigen::VectorXd reflected = centroid + (centroid - pts.back());
    double f_ref = eval(reflected);
    if (f_ref < fs.front()) {
      Eigen::VectorXd expanded = centroid + 2.0 * (centroid - pts.back());
      double f_exp = evals < budget ? eval(expanded) : f_ref;
      if (f_exp < f_ref) {
        pts.back() = expanded;
        fs.back() = f_exp;
      } else {
        pts.back() = reflected;
        fs.back() = f_ref;
      }
    } else if (f_ref < fs[fs.size() - 2]) {
      pts.back() = reflected;
      fs.back() = f_ref;
    } else {
      Eigen::VectorXd contracted = centroid + 0.5 * (pts.back() - centroid);
      double f_con = evals < budget ? eval(contracted) : f_ref;
      if (f_con < fs.back()) {
        pts.back() = contracted;
        fs.back() = f_con;
      } else {
        for (std::size_t i = 1; i < pts.size() && evals < budget; ++i) {
          pts[i] = pts.front() + 0.5 * (pts[i] - pts.front());
          fs[i] = eval(pts[i]);
        }
      }
    }
    order();
    record(fs.front());
  }

  NelderMeadOutcome out;
  out.best_z = pts.front();
  out.best_f = fs.front();
  return out;
}

}  // namespace

SynthFit fixed_v_fit(const PanelData& panel, const DesignMatrices& design, const VWeights& v) {
  SolveDiagnostics diag;
  DonorWeights w = solve_w_given_v(design, v, &diag);
  if (!diag.converged)
    fail(errc::solver_failure, "inner solver did not converge (kkt residual " +
                                   std::to_string(diag.kkt_residual) + ")");
  Eigen::VectorXd path = synthetic_path(panel, w);
  return assemble_fit(panel, design, v, w, {pre_mspe(panel, path)});
}

SynthFit nested_fit(const PanelData& panel, const DesignMatrices& design, const VWeights& init,
                    const NestedOptions& opts) {
  const int k = design.n_features();
  require(init.size() == k, errc::invalid_argument, "init V length must match design");
  if (k == 1) {
    // One design column: the V simplex is a single point.
    return fixed_v_fit(panel, design, VWeights::uniform(1));
  }

  std::vector<double> trace;
  double best_f = std::numeric_limits<double>::infinity();
  VWeights best_v = init;
  DonorWeights best_w;
  DonorWeights last_w;  // warm start across outer evaluations

  auto outer_objective = [&](const Eigen::VectorXd& z) {
    VWeights v{logits_to_v(z)};
    SolveDiagnostics diag;
    DonorWeights w =
        solve_w_given_v(design, v, &diag, last_w.size() > 0 ? &last_w : nullptr);
    if (!diag.converged)
      fail(errc::solver_failure, "inner solver did not converge during nested fit");
    last_w = w;
    double f = pre_mspe(panel, synthetic_path(panel, w));
    if (f < best_f) {
      best_f = f;
      best_v = v;
      best_w = w;
    }
    return f;
  };

  RngStream rng(opts.seed);
  for (int restart = 0; restart <= opts.restarts; ++restart) {
    Eigen::VectorXd z0 = restart == 0 ? v_to_logits(init) : rng.normal_vector(k - 1);
    nelder_mead(outer_objective, z0, opts.budget_per_restart, opts.tol, &trace);
  }
  return assemble_fit(panel, design, best_v, best_w, std::move(trace));
}

}  // namespace scm
