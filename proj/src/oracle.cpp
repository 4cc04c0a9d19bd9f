#include "baryir/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "baryir/errors.hpp"
#include "simplex.hpp"

namespace baryir::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate_weights(const Eigen::VectorXd& w, const char* who) {
  if (w.size() < 1) throw InputError(std::string(who) + ": empty weight vector");
  double sum = 0.0;
  for (int i = 0; i < w.size(); ++i) {
    if (w(i) < 0.0) throw InputError(std::string(who) + ": negative weight");
    sum += w(i);
  }
  if (std::fabs(sum - 1.0) > 1e-12)
    throw InputError(std::string(who) + ": weights sum to " + std::to_string(sum) +
                     ", expected 1");
}

// Shortest-augmenting-path assignment solver with dual potentials
// (O(n^3)); handles the uniform equal-size specialization of the
// transportation LP. Returns col -> row matching and potentials with
// c(i,j) - u_i - v_j >= 0, equality on matched pairs.
struct Assignment {
  std::vector<int> row_of_col;
  Eigen::VectorXd u, v;
};

Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  Assignment res;
  res.row_of_col.assign(n, -1);
  res.u = Eigen::VectorXd(n);
  res.v = Eigen::VectorXd(n);
  for (int j = 1; j <= n; ++j) res.row_of_col[j - 1] = p[j] - 1;
  for (int i = 1; i <= n; ++i) res.u(i - 1) = u[i];
  for (int j = 1; j <= n; ++j) res.v(j - 1) = v[j];
  return res;
}

// Transportation simplex (MODI). Basis cells form a spanning tree over the
// bipartite row/column node set; duals are recomputed from the tree each
// pivot. Dantzig entering rule with a switch to Bland's rule after a pivot
// budget, so termination is guaranteed.
struct TransportSimplex {
  const Eigen::MatrixXd& cost;
  const Eigen::VectorXd& a;
  const Eigen::VectorXd& b;
  int n, m;
  Eigen::MatrixXd flow;
  std::vector<std::vector<int>> adj;  // node -> adjacent nodes; rows 0..n-1, cols n..n+m-1
  Eigen::VectorXd u, v;

  TransportSimplex(const Eigen::MatrixXd& c, const Eigen::VectorXd& a_, const Eigen::VectorXd& b_)
      : cost(c), a(a_), b(b_), n(static_cast<int>(a_.size())), m(static_cast<int>(b_.size())) {
    flow = Eigen::MatrixXd::Zero(n, m);
    adj.assign(n + m, {});
    u = Eigen::VectorXd::Zero(n);
    v = Eigen::VectorXd::Zero(m);
  }

  bool in_basis(int i, int j) const {
    for (int node : adj[i])
      if (node == n + j) return true;
    return false;
  }

  void add_edge(int i, int j) {
    adj[i].push_back(n + j);
    adj[n + j].push_back(i);
  }

  void remove_edge(int i, int j) {
    auto& ai = adj[i];
    ai.erase(std::find(ai.begin(), ai.end(), n + j));
    auto& aj = adj[n + j];
    aj.erase(std::find(aj.begin(), aj.end(), i));
  }

  // Northwest-corner initial basic feasible solution; when a row and column
  // are exhausted simultaneously the next cell enters with zero flow so the
  // basis always has exactly n + m - 1 cells.
  void init_basis() {
    Eigen::VectorXd ra = a, rb = b;
    int i = 0, j = 0;
    while (true) {
      const double f = std::min(ra(i), rb(j));
      flow(i, j) = f;
      add_edge(i, j);
      ra(i) -= f;
      rb(j) -= f;
      if (i == n - 1 && j == m - 1) break;
      const bool row_done = ra(i) <= 1e-15;
      const bool col_done = rb(j) <= 1e-15;
      if (row_done && !col_done) {
        ++i;
      } else if (col_done && !row_done) {
        ++j;
      } else if (i < n - 1) {
        ++i;  // degenerate step; the next cell gets zero flow
      } else {
        ++j;
      }
    }
  }

  void compute_duals() {
    std::vector<char> seen(n + m, 0);
    std::vector<int> stack{0};
    u(0) = 0.0;
    seen[0] = 1;
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      for (int nb : adj[node]) {
        if (seen[nb]) continue;
        seen[nb] = 1;
        if (node < n)
          v(nb - n) = cost(node, nb - n) - u(node);
        else
          u(nb) = cost(nb, node - n) - v(node - n);
        stack.push_back(nb);
      }
    }
  }

  // Tree path from row node i to column node n + j (exists and is unique).
  std::vector<int> tree_path(int i, int j) const {
    std::vector<int> parent(n + m, -2);
    std::vector<int> stack{i};
    parent[i] = -1;
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      if (node == n + j) break;
      for (int nb : adj[node]) {
        if (parent[nb] == -2) {
          parent[nb] = node;
          stack.push_back(nb);
        }
      }
    }
    std::vector<int> path;
    for (int node = n + j; node != -1; node = parent[node]) path.push_back(node);
    std::reverse(path.begin(), path.end());  // i ... n+j
    return path;
  }

  TransportPlan run() {
    init_basis();
    const long max_pivots = 2000L + 60L * static_cast<long>(n) * m;
    const long bland_after = max_pivots / 2;
    long pivots = 0;
    while (true) {
      compute_duals();
      int ei = -1, ej = -1;
      double best = -1e-11;
      const bool bland = pivots > bland_after;
      for (int i = 0; i < n && (ei < 0 || !bland); ++i) {
        for (int j = 0; j < m; ++j) {
          const double r = cost(i, j) - u(i) - v(j);
          if (r < best && !in_basis(i, j)) {
            best = r;
            ei = i;
            ej = j;
            if (bland) break;
          }
        }
      }
      if (ei < 0) break;
      if (++pivots > max_pivots)
        throw NumericalError("transport simplex: no convergence after " +
                             std::to_string(pivots) + " pivots");

      // Cycle = entering cell + unique tree path col -> row. Cells along the
      // path alternate signs starting with - next to the entering column.
      const std::vector<int> path = tree_path(ei, ej);
      std::vector<std::pair<int, int>> minus_cells, plus_cells;
      for (size_t t = 0; t + 1 < path.size(); ++t) {
        const int x = path[t], y = path[t + 1];
        const int ri = x < n ? x : y;
        const int cj = x < n ? y - n : x - n;
        if (t % 2 == 0)
          minus_cells.push_back({ri, cj});
        else
          plus_cells.push_back({ri, cj});
      }
      double theta = kInf;
      for (const auto& [ri, cj] : minus_cells) theta = std::min(theta, flow(ri, cj));
      std::pair<int, int> leave{-1, -1};
      for (const auto& [ri, cj] : minus_cells) {
        if (flow(ri, cj) == theta && (leave.first < 0 || std::make_pair(ri, cj) < leave))
          leave = {ri, cj};
      }
      for (const auto& [ri, cj] : plus_cells) flow(ri, cj) += theta;
      for (const auto& [ri, cj] : minus_cells) flow(ri, cj) -= theta;
      flow(ei, ej) += theta;
      flow(leave.first, leave.second) = 0.0;
      remove_edge(leave.first, leave.second);
      add_edge(ei, ej);
    }

    TransportPlan plan;
    plan.matrix = flow;
    plan.cost = (flow.array() * cost.array()).sum();
    plan.u = u;
    plan.v = v;
    plan.iterations = static_cast<int>(pivots);
    return plan;
  }
};

}  // namespace

void DiscreteDistribution::validate(bool strict) const {
  if (points.rows() < 1) throw InputError("discrete distribution: empty support");
  if (points.rows() != weights.size())
    throw InputError("discrete distribution: support/weight size mismatch");
  validate_weights(weights, "discrete distribution");
  if (strict) {
    for (int i = 0; i < size(); ++i)
      for (int j = i + 1; j < size(); ++j)
        if ((points.row(i) - points.row(j)).norm() == 0.0)
          throw InputError("discrete distribution: duplicate support points in strict mode");
  }
}

DiscreteDistribution DiscreteDistribution::uniform(Eigen::MatrixXd pts) {
  DiscreteDistribution d;
  const int n = static_cast<int>(pts.rows());
  d.points = std::move(pts);
  d.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
  // Exact normalization: last entry takes the remainder.
  d.weights(n - 1) = 1.0 - d.weights.head(n - 1).sum();
  return d;
}

DiscreteDistribution DiscreteDistribution::dirac(const Eigen::VectorXd& point) {
  DiscreteDistribution d;
  d.points = point.transpose();
  d.weights = Eigen::VectorXd::Ones(1);
  return d;
}

double TransportPlan::marginal_error(const Eigen::VectorXd& mu_w,
                                     const Eigen::VectorXd& nu_w) const {
  const double row_err = (matrix.rowwise().sum() - mu_w).cwiseAbs().maxCoeff();
  const double col_err = (matrix.colwise().sum().transpose() - nu_w).cwiseAbs().maxCoeff();
  return std::max(row_err, col_err);
}

void GaussianSpec::validate() const {
  if (mean.size() < 1) throw InputError("gaussian: empty mean");
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
    throw InputError("gaussian: covariance shape mismatch");
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw InputError("gaussian: covariance not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw InputError("gaussian: covariance not positive semi-definite");
}

GaussianSpec GaussianSpec::iso(double m, double var) {
  GaussianSpec g;
  g.mean = Eigen::VectorXd::Constant(1, m);
  g.covariance = Eigen::MatrixXd::Constant(1, 1, var);
  return g;
}

Eigen::MatrixXd cost_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, CostKind kind) {
  if (x.cols() != y.cols())
    throw InputError("cost_matrix: dimension mismatch between supports");
  Eigen::MatrixXd c(x.rows(), y.rows());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < y.rows(); ++j) {
      const double d2 = (x.row(i) - y.row(j)).squaredNorm();
      c(i, j) = kind == CostKind::squared_euclidean ? d2 : std::sqrt(d2);
    }
  return c;
}

TransportPlan solve_discrete_ot(const DiscreteDistribution& mu, const DiscreteDistribution& nu,
                                CostKind kind) {
  mu.validate();
  nu.validate();
  const int n = mu.size(), m = nu.size();
  if (n > 1024 || m > 1024)
    throw InputError("solve_discrete_ot: support too large for the exact solver");
  const Eigen::MatrixXd c = cost_matrix(mu.points, nu.points, kind);

  const bool uniform_square = n == m && (mu.weights.array() - 1.0 / n).abs().maxCoeff() < 1e-15 &&
                              (nu.weights.array() - 1.0 / n).abs().maxCoeff() < 1e-15;
  if (uniform_square && n > 1) {
    const Assignment as = solve_assignment(c);
    TransportPlan plan;
    plan.matrix = Eigen::MatrixXd::Zero(n, n);
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
      plan.matrix(as.row_of_col[j], j) = mu.weights(as.row_of_col[j]);
      total += c(as.row_of_col[j], j);
    }
    plan.cost = total / n;
    plan.u = as.u;
    plan.v = as.v;
    plan.iterations = n;
    return plan;
  }
  TransportSimplex ts(c, mu.weights, nu.weights);
  return ts.run();
}

double c_transform_discrete(const Eigen::VectorXd& f, const Eigen::VectorXd& mu_point,
                            const DiscreteDistribution& nu, CostKind kind) {
  if (nu.size() < 1) throw InputError("c_transform: empty support");
  if (f.size() != nu.size()) throw InputError("c_transform: potential size mismatch");
  double best = kInf;
  for (int j = 0; j < nu.size(); ++j) {
    if (!std::isfinite(f(j))) throw InputError("c_transform: non-finite potential");
    const double d2 = (mu_point.transpose() - nu.points.row(j)).squaredNorm();
    const double cst = kind == CostKind::squared_euclidean ? d2 : std::sqrt(d2);
    best = std::min(best, cst - f(j));
  }
  return best;
}

double dual_value_discrete(const Eigen::VectorXd& f, const DiscreteDistribution& mu,
                           const DiscreteDistribution& nu, CostKind kind) {
  mu.validate();
  nu.validate();
  double acc = 0.0;
  for (int i = 0; i < mu.size(); ++i)
    acc += mu.weights(i) * c_transform_discrete(f, mu.points.row(i).transpose(), nu, kind);
  acc += nu.weights.dot(f);
  return acc;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double gaussian_w2_squared(const GaussianSpec& a, const GaussianSpec& b) {
  a.validate();
  b.validate();
  if (a.mean.size() != b.mean.size()) throw InputError("gaussian_w2: dimension mismatch");
  const Eigen::MatrixXd sb = psd_sqrt(b.covariance);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sb * a.covariance * sb);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double val =
      (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
  return std::max(0.0, val);
}

GaussianSpec gaussian_barycenter(const std::vector<GaussianSpec>& specs,
                                 const Eigen::VectorXd& weights, int max_iters, double tol) {
  if (specs.empty()) throw InputError("gaussian_barycenter: no inputs");
  if (static_cast<int>(specs.size()) != weights.size())
    throw InputError("gaussian_barycenter: weight count mismatch");
  for (int k = 0; k < weights.size(); ++k)
    if (weights(k) <= 0.0) throw InputError("gaussian_barycenter: weights must be positive");
  validate_weights(weights, "gaussian_barycenter");
  for (const auto& s : specs) s.validate();
  if (specs.size() == 1) return specs[0];

  const int d = static_cast<int>(specs[0].mean.size());
  GaussianSpec out;
  out.mean = Eigen::VectorXd::Zero(d);
  for (size_t k = 0; k < specs.size(); ++k) out.mean += weights(static_cast<int>(k)) * specs[k].mean;

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, d);
  for (size_t k = 0; k < specs.size(); ++k)
    s += weights(static_cast<int>(k)) * specs[k].covariance;
  double resid = kInf;
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXd root = psd_sqrt(s);
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(d, d);
    for (size_t k = 0; k < specs.size(); ++k)
      next += weights(static_cast<int>(k)) * psd_sqrt(root * specs[k].covariance * root);
    resid = (next - s).norm();
    s = 0.5 * (next + next.transpose());  // symmetrize fp drift
    if (resid < tol) {
      out.covariance = s;
      return out;
    }
  }
  throw NumericalError("gaussian_barycenter: fixed point not converged, residual " +
                       std::to_string(resid));
}

BarycenterLpResult discrete_barycenter_lp(const std::vector<DiscreteDistribution>& mus,
                                          const Eigen::VectorXd& weights,
                                          const Eigen::MatrixXd& candidate_support,
                                          CostKind kind) {
  if (mus.empty()) throw InputError("discrete_barycenter_lp: no sources");
  if (static_cast<int>(mus.size()) != weights.size())
    throw InputError("discrete_barycenter_lp: weight count mismatch");
  validate_weights(weights, "discrete_barycenter_lp");
  const int grid_n = static_cast<int>(candidate_support.rows());
  if (grid_n < 1 || grid_n > 128)
    throw InputError("discrete_barycenter_lp: candidate support must have 1..128 points");
  int total_rows = 0;
  for (const auto& mu : mus) {
    mu.validate();
    if (mu.size() > 64) throw InputError("discrete_barycenter_lp: source support > 64 points");
    total_rows += mu.size();
  }
  const int k_count = static_cast<int>(mus.size());

  // Variables: couplings pi^k (n_k x G each, row-major) followed by q (G).
  std::vector<int> offset(mus.size());
  int nvars = 0;
  for (size_t k = 0; k < mus.size(); ++k) {
    offset[k] = nvars;
    nvars += mus[k].size() * grid_n;
  }
  const int q_off = nvars;
  nvars += grid_n;

  const int nrows = total_rows + k_count * grid_n;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nrows, nvars);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(nrows);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(nvars);

  int row = 0;
  for (size_t k = 0; k < mus.size(); ++k) {
    const Eigen::MatrixXd ck = cost_matrix(mus[k].points, candidate_support, kind);
    for (int i = 0; i < mus[k].size(); ++i) {
      for (int j = 0; j < grid_n; ++j) {
        const int var = offset[k] + i * grid_n + j;
        a(row, var) = 1.0;
        c(var) = weights(static_cast<int>(k)) * ck(i, j);
      }
      b(row) = mus[k].weights(i);
      ++row;
    }
  }
  for (size_t k = 0; k < mus.size(); ++k) {
    for (int j = 0; j < grid_n; ++j) {
      for (int i = 0; i < mus[k].size(); ++i) a(row, offset[k] + i * grid_n + j) = 1.0;
      a(row, q_off + j) = -1.0;
      ++row;
    }
  }

  const detail::LpResult lp = detail::solve_lp_equality(a, b, c);

  BarycenterLpResult res;
  res.objective = lp.objective;
  res.grid_weights = lp.x.segment(q_off, grid_n);
  std::vector<int> live;
  for (int j = 0; j < grid_n; ++j)
    if (res.grid_weights(j) > 1e-12) live.push_back(j);
  if (live.empty()) throw NumericalError("discrete_barycenter_lp: empty barycenter support");
  res.barycenter.points = Eigen::MatrixXd(static_cast<int>(live.size()), candidate_support.cols());
  res.barycenter.weights = Eigen::VectorXd(static_cast<int>(live.size()));
  for (size_t t = 0; t < live.size(); ++t) {
    res.barycenter.points.row(static_cast<int>(t)) = candidate_support.row(live[t]);
    res.barycenter.weights(static_cast<int>(t)) = res.grid_weights(live[t]);
  }
  res.barycenter.weights /= res.barycenter.weights.sum();
  return res;
}

SinkhornResult sinkhorn(const DiscreteDistribution& mu, const DiscreteDistribution& nu,
                        CostKind kind, double epsilon, int iters, double tol) {
  mu.validate();
  nu.validate();
  if (epsilon <= 0.0) throw InputError("sinkhorn: epsilon must be positive");
  const int n = mu.size(), m = nu.size();
  for (int i = 0; i < n; ++i)
    if (mu.weights(i) <= 0.0) throw InputError("sinkhorn: zero-weight atom (drop it first)");
  for (int j = 0; j < m; ++j)
    if (nu.weights(j) <= 0.0) throw InputError("sinkhorn: zero-weight atom (drop it first)");

  const Eigen::MatrixXd c = cost_matrix(mu.points, nu.points, kind);
  const Eigen::VectorXd loga = mu.weights.array().log();
  const Eigen::VectorXd logb = nu.weights.array().log();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n), g = Eigen::VectorXd::Zero(m);

  const auto lse = [](const Eigen::VectorXd& x) {
    const double mx = x.maxCoeff();
    return mx + std::log((x.array() - mx).exp().sum());
  };

  SinkhornResult res;
  Eigen::MatrixXd plan(n, m);
  const auto rebuild_plan = [&]() {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        plan(i, j) =
            std::exp((f(i) + g(j) - c(i, j)) / epsilon) * mu.weights(i) * nu.weights(j);
  };

  int it = 0;
  for (; it < iters; ++it) {
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd t = (g - c.row(i).transpose()) / epsilon + logb;
      f(i) = -epsilon * lse(t);
    }
    for (int j = 0; j < m; ++j) {
      const Eigen::VectorXd t = (f - c.col(j)) / epsilon + loga;
      g(j) = -epsilon * lse(t);
    }
    if (!f.allFinite() || !g.allFinite())
      throw NumericalError("sinkhorn: numerical underflow; increase epsilon");
    rebuild_plan();
    const double err =
        std::max((plan.rowwise().sum() - mu.weights).cwiseAbs().maxCoeff(),
                 (plan.colwise().sum().transpose() - nu.weights).cwiseAbs().maxCoeff());
    if (err < tol) {
      ++it;
      break;
    }
  }
  rebuild_plan();
  if (!plan.allFinite()) throw NumericalError("sinkhorn: numerical underflow; increase epsilon");
  res.plan = plan;
  res.cost = (plan.array() * c.array()).sum();
  res.marginal_error =
      std::max((plan.rowwise().sum() - mu.weights).cwiseAbs().maxCoeff(),
               (plan.colwise().sum().transpose() - nu.weights).cwiseAbs().maxCoeff());
  res.iterations = it;
  return res;
}

double w2sq_1d(std::vector<double> xs, std::vector<double> xw, std::vector<double> ys,
               std::vector<double> yw) {
  if (xs.empty() || ys.empty()) throw InputError("w2sq_1d: empty sample set");
  if (xs.size() != xw.size() || ys.size() != yw.size())
    throw InputError("w2sq_1d: weight size mismatch");
  std::vector<size_t> xi(xs.size()), yi(ys.size());
  std::iota(xi.begin(), xi.end(), 0);
  std::iota(yi.begin(), yi.end(), 0);
  std::sort(xi.begin(), xi.end(), [&](size_t a2, size_t b2) { return xs[a2] < xs[b2]; });
  std::sort(yi.begin(), yi.end(), [&](size_t a2, size_t b2) { return ys[a2] < ys[b2]; });

  double acc = 0.0;
  size_t i = 0, j = 0;
  double pa = xw[xi[0]], pb = yw[yi[0]];
  while (i < xi.size() && j < yi.size()) {
    const double t = std::min(pa, pb);
    const double d = xs[xi[i]] - ys[yi[j]];
    acc += t * d * d;
    pa -= t;
    pb -= t;
    if (pa <= 1e-15) {
      ++i;
      if (i < xi.size()) pa = xw[xi[i]];
    }
    if (pb <= 1e-15) {
      ++j;
      if (j < yi.size()) pb = yw[yi[j]];
    }
  }
  return acc;
}

double normal_quantile(double p) {
  if (p <= 0.0 || p >= 1.0) throw InputError("normal_quantile: p must be in (0, 1)");
  // Acklam's rational approximation.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  // One Halley refinement against erfc.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1 + x * u / 2);
  return x;
}

Eigen::MatrixXd gaussian_quantile_points(double mean, double variance, int n) {
  if (n < 1) throw InputError("gaussian_quantile_points: n must be positive");
  if (variance < 0.0) throw InputError("gaussian_quantile_points: negative variance");
  const double sd = std::sqrt(variance);
  Eigen::MatrixXd pts(n, 1);
  for (int i = 0; i < n; ++i)
    pts(i, 0) = mean + sd * normal_quantile((i + 0.5) / static_cast<double>(n));
  return pts;
}

Eigen::MatrixXd gaussian_ot_map_matrix(const GaussianSpec& a, const GaussianSpec& b) {
  a.validate();
  b.validate();
  const Eigen::MatrixXd sa = psd_sqrt(a.covariance);
  // Pseudo-inverse of sa via eigendecomposition (degenerate directions map by 0).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sa);
  Eigen::VectorXd inv = es.eigenvalues();
  for (int i = 0; i < inv.size(); ++i) inv(i) = inv(i) > 1e-12 ? 1.0 / inv(i) : 0.0;
  const Eigen::MatrixXd sa_inv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::MatrixXd mid = psd_sqrt(sa * b.covariance * sa);
  return sa_inv * mid * sa_inv;
}

}  // namespace baryir::oracle
