#pragma once

// Least squares over the probability simplex:
//
//   minimize  ||B w - r||^2 + ridge * ||w - center||^2
//   s.t.      w >= 0,  sum(w) = 1
//
// Solved by FISTA with exact simplex projection, followed by an active-set
// polish that solves the reduced optimality system directly. The polish
// parameterizes the face through an orthonormal basis of {z : 1'z = 0}, so
// its minimum-norm least-squares solution is the minimum-norm w on the
// optimal face: ties between equally optimal weight vectors resolve to the
// smallest-norm one.

#include <optional>

#include <Eigen/Dense>

namespace scm {

struct SimplexLsqOptions {
  double gap_tol = 1e-11;    // Frank-Wolfe gap target, scaled by max(1, ||r||^2)
  int max_iterations = 200000;
  int polish_interval = 250;  // try the exact polish this often once near-feasible
};

struct SimplexLsqResult {
  Eigen::VectorXd w;
  double objective = 0.0;     // ||B w - r||^2 + ridge * ||w - center||^2
  double kkt_residual = 0.0;  // Frank-Wolfe duality gap at w
  int iterations = 0;
  bool converged = false;
};

// Projection of v onto {w >= 0, sum(w) = 1}.
Eigen::VectorXd project_onto_simplex(const Eigen::VectorXd& v);

SimplexLsqResult solve_simplex_lsq(const Eigen::MatrixXd& B, const Eigen::VectorXd& r,
                                   const SimplexLsqOptions& opts = {},
                                   const Eigen::VectorXd* warm_start = nullptr,
                                   double ridge = 0.0,
                                   const Eigen::VectorXd* ridge_center = nullptr);

}  // namespace scm
