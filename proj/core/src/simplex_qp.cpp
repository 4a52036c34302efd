#include "scm/simplex_qp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "scm/errors.hpp"

namespace scm {

namespace {

// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
// deterministic start; a few percent of headroom is added by the caller.
double psd_max_eigenvalue(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  Eigen::VectorXd v = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd av = a * v;
    double norm = av.norm();
    if (norm <= 0.0) return 0.0;
    av /= norm;
    double next = av.dot(a * av);
    if (it > 2 && std::abs(next - lambda) <= 1e-12 * std::max(1.0, std::abs(next))) {
      return next;
    }
    lambda = next;
    v = av;
  }
  return lambda;
}

struct Objective {
  const Eigen::MatrixXd& b;
  const Eigen::VectorXd& r;
  double ridge;
  const Eigen::VectorXd& center;

  double value(const Eigen::VectorXd& w) const {
    double v = (b * w - r).squaredNorm();
    if (ridge > 0.0) v += ridge * (w - center).squaredNorm();
    return v;
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
    Eigen::VectorXd g = 2.0 * (b.transpose() * (b * w - r));
    if (ridge > 0.0) g += 2.0 * ridge * (w - center);
    return g;
  }
  // Frank-Wolfe duality gap: g'w - min_j g_j >= f(w) - f*.
  double gap(const Eigen::VectorXd& w, const Eigen::VectorXd& g) const {
    return g.dot(w) - g.minCoeff();
  }
};

// Exact solve on the face spanned by `support`: parameterize w_S = u_bar + Z c
// with Z an orthonormal basis of {z : 1'z = 0}, then take the minimum-norm
// least-squares c. Because u_bar is the uniform vector and 1'Z = 0, the
// minimum-norm c is also the minimum-norm w on that face.
std::optional<Eigen::VectorXd> polish_on_support(const Objective& f, std::vector<int> support,
                                                 int n) {
  for (int round = 0; round < n + 1 && !support.empty(); ++round) {
    const int s = static_cast<int>(support.size());
    Eigen::VectorXd w_full = Eigen::VectorXd::Zero(n);
    if (s == 1) {
      w_full[support[0]] = 1.0;
      return w_full;
    }
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(
                            Eigen::VectorXd::Ones(s))
                            .householderQ();
    Eigen::MatrixXd z = q.rightCols(s - 1);

    const int m = static_cast<int>(f.b.rows());
    const bool with_ridge = f.ridge > 0.0;
    Eigen::MatrixXd bs(m + (with_ridge ? s : 0), s);
    Eigen::VectorXd rhs(bs.rows());
    for (int j = 0; j < s; ++j) bs.col(j).head(m) = f.b.col(support[static_cast<std::size_t>(j)]);
    Eigen::VectorXd u_bar = Eigen::VectorXd::Constant(s, 1.0 / s);
    rhs.head(m) = f.r - bs.topRows(m) * u_bar;
    if (with_ridge) {
      const double sq = std::sqrt(f.ridge);
      bs.bottomRows(s) = sq * Eigen::MatrixXd::Identity(s, s);
      for (int j = 0; j < s; ++j)
        rhs[m + j] = sq * (f.center[support[static_cast<std::size_t>(j)]] - u_bar[j]);
    }
    Eigen::VectorXd coef =
        (bs * z).completeOrthogonalDecomposition().solve(rhs);
    Eigen::VectorXd ws = u_bar + z * coef;

    int worst = -1;
    double worst_val = -1e-12;
    for (int j = 0; j < s; ++j)
      if (ws[j] < worst_val) {
        worst_val = ws[j];
        worst = j;
      }
    if (worst < 0) {
      for (int j = 0; j < s; ++j) w_full[support[static_cast<std::size_t>(j)]] = std::max(ws[j], 0.0);
      return w_full;
    }
    support.erase(support.begin() + worst);
  }
  return std::nullopt;
}

}  // namespace

Eigen::VectorXd project_onto_simplex(const Eigen::VectorXd& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double tau = 0.0;
  int rho = 0;
  for (int i = 0; i < n; ++i) {
    cumsum += u[static_cast<std::size_t>(i)];
    double candidate = (cumsum - 1.0) / (i + 1);
    if (u[static_cast<std::size_t>(i)] - candidate > 0.0) {
      rho = i + 1;
      tau = candidate;
    }
  }
  (void)rho;
  return (v.array() - tau).cwiseMax(0.0);
}

SimplexLsqResult solve_simplex_lsq(const Eigen::MatrixXd& b, const Eigen::VectorXd& r,
                                   const SimplexLsqOptions& opts,
                                   const Eigen::VectorXd* warm_start, double ridge,
                                   const Eigen::VectorXd* ridge_center) {
  const int n = static_cast<int>(b.cols());
  require(n >= 1, errc::empty_donor_pool, "simplex solve needs at least one column");
  require(b.rows() == r.size(), errc::invalid_argument, "B rows must match r");

  Eigen::VectorXd center =
      ridge_center != nullptr ? *ridge_center : Eigen::VectorXd::Constant(n, 1.0 / n);
  Objective f{b, r, ridge, center};

  SimplexLsqResult result;
  if (n == 1) {
    result.w = Eigen::VectorXd::Ones(1);
    result.objective = f.value(result.w);
    result.converged = true;
    return result;
  }

  Eigen::VectorXd w = warm_start != nullptr && warm_start->size() == n
                          ? project_onto_simplex(*warm_start)
                          : Eigen::VectorXd::Constant(n, 1.0 / n);

  // Lipschitz constant of the gradient: 2 (lambda_max(B'B) + ridge).
  Eigen::MatrixXd gram = b.transpose() * b;
  double lipschitz = 2.0 * (psd_max_eigenvalue(gram) * 1.02 + ridge);
  const double gap_tol = opts.gap_tol * std::max(1.0, r.squaredNorm());

  auto finish = [&](const Eigen::VectorXd& w_final, int iterations, bool converged) {
    SimplexLsqResult out;
    out.w = w_final;
    // Tiny negatives from the polish are clipped; the sum stays within 1e-8.
    out.w = out.w.cwiseMax(0.0);
    out.objective = f.value(out.w);
    out.kkt_residual = f.gap(out.w, f.gradient(out.w));
    out.iterations = iterations;
    out.converged = converged;
    return out;
  };

  if (lipschitz <= 0.0) {
    return finish(w, 0, true);  // constant objective, any feasible point optimal
  }
  const double step = 1.0 / lipschitz;

  auto try_polish = [&](const Eigen::VectorXd& w_at) -> std::optional<Eigen::VectorXd> {
    double scale = w_at.maxCoeff();
    std::vector<int> support;
    for (int j = 0; j < n; ++j)
      if (w_at[j] > 1e-9 * std::max(1.0, scale)) support.push_back(j);
    if (support.empty()) return std::nullopt;
    auto polished = polish_on_support(f, support, n);
    if (!polished) return std::nullopt;
    if (f.value(*polished) > f.value(w_at) + 1e-12 * std::max(1.0, f.value(w_at)))
      return std::nullopt;
    if (f.gap(*polished, f.gradient(*polished)) > gap_tol) return std::nullopt;
    return polished;
  };

  Eigen::VectorXd w_prev = w;
  double t_prev = 1.0;
  double f_best = f.value(w);
  Eigen::VectorXd w_best = w;

  for (int it = 1; it <= opts.max_iterations; ++it) {
    double t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_prev * t_prev));
    Eigen::VectorXd y = w + ((t_prev - 1.0) / t) * (w - w_prev);
    Eigen::VectorXd w_next = project_onto_simplex(y - step * f.gradient(y));
    w_prev = w;
    w = w_next;
    t_prev = t;

    double fw = f.value(w);
    if (fw > f_best) {
      // adaptive restart keeps FISTA monotone enough for the gap check
      t_prev = 1.0;
      w_prev = w;
    } else {
      f_best = fw;
      w_best = w;
    }

    if (it % 25 == 0 || it == opts.max_iterations) {
      Eigen::VectorXd g = f.gradient(w_best);
      double gap = f.gap(w_best, g);
      if (gap <= gap_tol) {
        if (auto polished = try_polish(w_best)) return finish(*polished, it, true);
        return finish(w_best, it, true);
      }
      if (it % opts.polish_interval == 0) {
        if (auto polished = try_polish(w_best)) return finish(*polished, it, true);
      }
    }
  }
  // Non-convergence: report the best iterate with its residual so the caller
  // can decide whether it is usable.
  return finish(w_best, opts.max_iterations, false);
}

}  // namespace scm
