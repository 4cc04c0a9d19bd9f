#include "simplex.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "baryir/errors.hpp"

namespace baryir::oracle::detail {

namespace {

constexpr double kPivotTol = 1e-11;

// One simplex phase on an explicit tableau. `tab` holds m constraint rows
// followed by an objective row; the last column is the right-hand side.
// Basis holds the basic column per constraint row. Bland's rule on both the
// entering and leaving choices guarantees finite termination.
int run_phase(Eigen::MatrixXd& tab, std::vector<int>& basis, int n_enterable, int max_iters) {
  const int m = static_cast<int>(tab.rows()) - 1;
  const int obj = m;
  const int rhs = static_cast<int>(tab.cols()) - 1;
  int iters = 0;
  while (true) {
    int enter = -1;
    for (int j = 0; j < n_enterable; ++j) {
      if (tab(obj, j) < -kPivotTol) {
        enter = j;
        break;
      }
    }
    if (enter < 0) return iters;
    if (++iters > max_iters)
      throw baryir::NumericalError("simplex: iteration cap reached after " +
                                   std::to_string(iters) + " pivots");
    int leave = -1;
    double best_ratio = 0.0;
    for (int i = 0; i < m; ++i) {
      const double a = tab(i, enter);
      if (a > kPivotTol) {
        const double ratio = tab(i, rhs) / a;
        if (leave < 0 || ratio < best_ratio - 1e-15 ||
            (std::fabs(ratio - best_ratio) <= 1e-15 && basis[i] < basis[leave])) {
          leave = i;
          best_ratio = ratio;
        }
      }
    }
    if (leave < 0) throw baryir::NumericalError("simplex: unbounded objective");
    tab.row(leave) /= tab(leave, enter);
    for (int i = 0; i <= m; ++i) {
      if (i == leave) continue;
      const double f = tab(i, enter);
      if (f != 0.0) tab.row(i) -= f * tab.row(leave);
    }
    basis[leave] = enter;
  }
}

}  // namespace

LpResult solve_lp_equality(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                           const Eigen::VectorXd& c, int max_iters) {
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());
  if (b.size() != m || c.size() != n)
    throw baryir::InputError("simplex: inconsistent LP dimensions");
  if (max_iters <= 0) max_iters = 2000 + 40 * (m + n);

  // Tableau [A | I | b] with artificial identity columns; rows are flipped
  // first so the right-hand side is nonnegative.
  Eigen::MatrixXd tab = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
  tab.block(0, 0, m, n) = a;
  tab.block(0, n + m, m, 1) = b;
  for (int i = 0; i < m; ++i) {
    if (tab(i, n + m) < 0.0) tab.row(i) = -tab.row(i);
    tab(i, n + i) = 1.0;
  }
  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i) basis[i] = n + i;

  // Phase 1: minimize the artificial sum; reduced-cost row is minus the sum
  // of constraint rows over the structural and rhs columns.
  for (int j = 0; j <= n + m; ++j) {
    if (j >= n && j < n + m) {
      tab(m, j) = 0.0;
      continue;
    }
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += tab(i, j);
    tab(m, j) = -s;
  }
  run_phase(tab, basis, n + m, max_iters);
  const double phase1 = -tab(m, n + m);
  if (phase1 > 1e-7)
    throw baryir::InputError("simplex: infeasible LP (phase-1 residual " + std::to_string(phase1) +
                             ")");
  // Pivot lingering artificials out of the basis where possible; a row with
  // no eligible pivot is redundant and its artificial stays basic at zero.
  for (int i = 0; i < m; ++i) {
    if (basis[i] >= n) {
      int pivot_col = -1;
      for (int j = 0; j < n; ++j) {
        if (std::fabs(tab(i, j)) > kPivotTol) {
          pivot_col = j;
          break;
        }
      }
      if (pivot_col < 0) continue;
      tab.row(i) /= tab(i, pivot_col);
      for (int r = 0; r <= m; ++r) {
        if (r == i) continue;
        const double f = tab(r, pivot_col);
        if (f != 0.0) tab.row(r) -= f * tab.row(i);
      }
      basis[i] = pivot_col;
    }
  }

  // Phase 2 objective row: reduced costs of c over structural columns only.
  for (int j = 0; j < n; ++j) tab(m, j) = c(j);
  for (int j = n; j <= n + m; ++j) tab(m, j) = 0.0;
  for (int i = 0; i < m; ++i) {
    const int bc = basis[i];
    if (bc >= n) continue;
    const double f = tab(m, bc);
    if (f != 0.0) tab.row(m) -= f * tab.row(i);
  }
  LpResult res;
  res.iterations = run_phase(tab, basis, n, max_iters);

  res.x = Eigen::VectorXd::Zero(n);
  const int rhs = n + m;
  for (int i = 0; i < m; ++i)
    if (basis[i] < n) res.x(basis[i]) = std::max(0.0, tab(i, rhs));
  res.objective = c.dot(res.x);
  return res;
}

}  // namespace baryir::oracle::detail
