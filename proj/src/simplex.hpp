#pragma once

#include <Eigen/Dense>

namespace baryir::oracle::detail {

struct LpResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  int iterations = 0;
};

// Two-phase dense-tableau primal simplex with Bland's rule for
//   min c^T x  s.t.  A x = b, x >= 0.
// Intended for the desk-scale barycenter LP; throws InputError if infeasible
// and NumericalError if the iteration cap is hit.
LpResult solve_lp_equality(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                           const Eigen::VectorXd& c, int max_iters = 0);

}  // namespace baryir::oracle::detail
