#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace baryir::oracle {

enum class CostKind { euclidean, squared_euclidean };

// Finite-support probability measure: n support points in R^d with
// nonnegative weights summing to one (within 1e-12).
struct DiscreteDistribution {
  Eigen::MatrixXd points;   // n x d
  Eigen::VectorXd weights;  // n

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  // Throws InputError on weight violations; strict mode also rejects
  // duplicate support points.
  void validate(bool strict = false) const;

  static DiscreteDistribution uniform(Eigen::MatrixXd pts);
  static DiscreteDistribution dirac(const Eigen::VectorXd& point);
};

// Coupling between two discrete distributions plus its transport cost and the
// optimal dual potentials (u on the source support, v on the target support).
struct TransportPlan {
  Eigen::MatrixXd matrix;  // n x m, nonnegative
  double cost = 0.0;
  Eigen::VectorXd u;  // duals on mu support
  Eigen::VectorXd v;  // duals on nu support
  int iterations = 0;

  // Max absolute row/column marginal violation.
  double marginal_error(const Eigen::VectorXd& mu_w, const Eigen::VectorXd& nu_w) const;
};

// Gaussian measure N(mean, covariance); covariance must be symmetric PSD.
struct GaussianSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  void validate() const;  // symmetry within 1e-10, eigenvalues >= -1e-10
  static GaussianSpec iso(double m, double var);  // 1-D helper
};

Eigen::MatrixXd cost_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, CostKind kind);

// Exact optimal transport between discrete measures via linear programming
// over the transportation polytope: a shortest-augmenting-path assignment
// solver for uniform equal-size instances and the transportation simplex
// (MODI with Bland's rule) otherwise.
TransportPlan solve_discrete_ot(const DiscreteDistribution& mu, const DiscreteDistribution& nu,
                                CostKind kind);

// f^c(x) = min_y [ c(x, y) - f(y) ] over the support of nu.
double c_transform_discrete(const Eigen::VectorXd& f, const Eigen::VectorXd& mu_point,
                            const DiscreteDistribution& nu, CostKind kind);

// sum_x mu(x) f^c(x) + sum_y nu(y) f(y); never exceeds the primal optimum.
double dual_value_discrete(const Eigen::VectorXd& f, const DiscreteDistribution& mu,
                           const DiscreteDistribution& nu, CostKind kind);

// Squared Bures-Wasserstein distance:
// |m_a - m_b|^2 + tr(S_a + S_b - 2 (S_b^{1/2} S_a S_b^{1/2})^{1/2}).
double gaussian_w2_squared(const GaussianSpec& a, const GaussianSpec& b);

// W2 barycenter of Gaussians under squared cost: exact mean, covariance by
// the fixed-point iteration S <- sum_k w_k (S^{1/2} S_k S^{1/2})^{1/2}.
GaussianSpec gaussian_barycenter(const std::vector<GaussianSpec>& specs,
                                 const Eigen::VectorXd& weights, int max_iters = 500,
                                 double tol = 1e-10);

struct BarycenterLpResult {
  DiscreteDistribution barycenter;
  double objective = 0.0;  // L*
  // Barycenter weights on the full candidate grid (including zero entries).
  Eigen::VectorXd grid_weights;
};

// Exact fixed-support barycenter: minimizes sum_k w_k OT(mu_k, q) over
// distributions q on the candidate grid, as one linear program.
BarycenterLpResult discrete_barycenter_lp(const std::vector<DiscreteDistribution>& mus,
                                          const Eigen::VectorXd& weights,
                                          const Eigen::MatrixXd& candidate_support, CostKind kind);

struct SinkhornResult {
  Eigen::MatrixXd plan;
  double cost = 0.0;
  double marginal_error = 0.0;
  int iterations = 0;
};

// Entropic-regularized OT with log-domain updates (mandatory for small
// epsilon). Stops early once the marginal violation drops below tol.
SinkhornResult sinkhorn(const DiscreteDistribution& mu, const DiscreteDistribution& nu,
                        CostKind kind, double epsilon, int iters, double tol = 1e-9);

// Exact 1-D squared-W2 between weighted empirical measures given unsorted
// sample/weight lists; used by sliced-distance metrics.
double w2sq_1d(std::vector<double> xs, std::vector<double> xw, std::vector<double> ys,
               std::vector<double> yw);

// Inverse standard normal CDF (Acklam approximation plus one Halley step).
double normal_quantile(double p);

// Equal-mass n-point discretization of a 1-D Gaussian at the quantiles
// (i - 0.5)/n; the deterministic low-variance stand-in for an n-sample
// empirical measure in oracle comparisons.
Eigen::MatrixXd gaussian_quantile_points(double mean, double variance, int n);

// Affine map transporting N(mean_a, cov_a) onto N(mean_b, cov_b) under
// squared cost: x -> mean_b + A (x - mean_a).
Eigen::MatrixXd gaussian_ot_map_matrix(const GaussianSpec& a, const GaussianSpec& b);

// Symmetric PSD square root via eigendecomposition with eigenvalue clamping.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

}  // namespace baryir::oracle
