#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "baryir/autodiff.hpp"
#include "baryir/oracle.hpp"
#include "baryir/tensor.hpp"

namespace baryir::mlot {

using BaseCost = oracle::CostKind;

// Mini-batch of latent vectors for one source; the unit of all objective
// computation. barycenter_latents holds the mapped points T(z) and
// source_specific the residuals z - T(z) when available. row_weights carries
// exact atom masses in discrete-verification mode (uniform otherwise).
struct SourceBatch {
  int source_id = 1;  // 1-based
  ad::Tensor latents;
  std::optional<ad::Tensor> barycenter_latents;
  std::optional<ad::Tensor> source_specific;
  std::optional<std::vector<double>> row_weights;

  int rows() const { return latents.shape[0]; }
  int dim() const { return latents.shape[1]; }
  void validate(int k_total) const;
};

// Transport-cost and objective hyperparameters.
struct MlotConfig {
  BaseCost base_cost = BaseCost::squared_euclidean;
  double gamma = 0.1;
  double tau = 0.07;
  std::vector<double> weights;  // lambda_{1:K}, positive, sums to 1
  double beta = 2.0;            // strong-convexity constant for bound checks
  double congruence_coeff = 1.0;

  int k_count() const { return static_cast<int>(weights.size()); }
  void validate() const;
};

// Estimated duality gaps and the map-error bound they certify.
struct DualityGapReport {
  double e1 = 0.0;
  double e2 = 0.0;
  double l_star = 0.0;
  double beta = 2.0;
  double bound = 0.0;  // (2/beta) (e1 + e2)
  std::optional<double> measured_w2_sum;
  bool pass = false;
  double margin = 0.0;

  // Gap nonnegativity up to tolerance 1e-6; e2 is only enforceable when both
  // L* and the functional are computed on exact distributions, so callers opt
  // in via exact_mode.
  void validate(bool exact_mode) const;
  std::string to_json() const;
};

// ---- plain evaluators (no differentiation graph) ----

// s = z - z_b elementwise.
ad::Tensor source_specific(const ad::Tensor& z, const ad::Tensor& z_b);

// Contrastive loss given precomputed similarities:
// -log [ sum_p e^{p/tau} / (sum_p e^{p/tau} + sum_n e^{n/tau}) ],
// evaluated as logsumexp(all) - logsumexp(pos).
double contrastive_from_sims(const std::vector<double>& pos_sims,
                             const std::vector<double>& neg_sims, double tau);

double cosine(const std::vector<double>& u, const std::vector<double>& v, double eps);

// Anchor-level contrastive loss over explicit positive/negative vectors.
double contrastive_loss(const std::vector<double>& anchor,
                        const std::vector<std::vector<double>>& positives,
                        const std::vector<std::vector<double>>& negatives, double tau,
                        bool strict = true);

// sum over every source-specific sample of |cos(z_b, s)|.
double orthogonality_loss(const std::vector<double>& z_b,
                          const std::vector<std::vector<double>>& all_source_specific,
                          bool strict = true);

// Batch context for transport-cost evaluation at arbitrary candidate targets:
// the fixed source-specific sets of the current batch.
struct BatchContext {
  std::vector<std::vector<std::vector<double>>> s_by_source;  // [k][sample][dim]
  static BatchContext from_batches(const std::vector<SourceBatch>& batches);
};

// C_k(z, z_b) = base(z, z_b) + gamma (L_ctr + L_ort). When anchor_index >= 0
// the anchor's own batch entry in source k is replaced by s' = z - z_b (and
// excluded from its positives); with gamma = 0 the context may be empty.
double transport_cost(const std::vector<double>& z, const std::vector<double>& z_b,
                      const BatchContext& ctx, int k, const MlotConfig& cfg,
                      int anchor_index = -1);

using PotentialFn = std::function<double(const std::vector<double>&)>;
using MapFn = std::function<std::vector<double>(const std::vector<double>&)>;

// L(f_{1:K}) = sum_k lambda_k E_k[ min_c (C_k(z, c) - f_k(c)) ] over the
// candidate set. Batches supply the expectation measure (row weights or
// uniform); candidates must be nonempty.
double dual_functional(const std::vector<PotentialFn>& potentials,
                       const std::vector<SourceBatch>& batches,
                       const std::vector<std::vector<double>>& candidates, const MlotConfig& cfg);

// F(f_{1:K}, T) = sum_k lambda_k E_k[ C_k(z, T(z)) - f_k(T(z)) ]; the batches
// must already carry barycenter_latents = T(z).
double maximin_objective(const std::vector<PotentialFn>& potentials,
                         const std::vector<SourceBatch>& batches, const MlotConfig& cfg);
double maximin_objective(const std::vector<PotentialFn>& potentials, const MapFn& map,
                         std::vector<SourceBatch> batches, const MlotConfig& cfg);

// rho = mean over z_b rows of (sum_k lambda_k f_k(z_b))^2.
double congruence_penalty(const std::vector<PotentialFn>& potentials, const ad::Tensor& z_b_batch,
                          const std::vector<double>& weights);

struct E1Result {
  double value = 0.0;
  double grid_spacing = 0.0;    // 0 when the candidate set is not a grid
  double inf_gap_bound = 0.0;   // resolution * Lipschitz estimate
};

// E1 = F(f, T) - L(f) with the inner inf brute-forced over the candidates.
// Candidates should include the mapped batch points so the estimate is
// nonnegative by construction.
E1Result duality_gap_e1(const std::vector<PotentialFn>& potentials,
                        const std::vector<SourceBatch>& batches,
                        const std::vector<std::vector<double>>& candidates, const MlotConfig& cfg,
                        double grid_spacing = 0.0);

// E2 = L* - L(f).
double duality_gap_e2(const std::vector<PotentialFn>& potentials,
                      const std::vector<SourceBatch>& batches, double l_star,
                      const std::vector<std::vector<double>>& candidates, const MlotConfig& cfg);

// Theorem-2 style verdict: sum_k lambda_k W2^2(T#P_k, T*#P_k) <= bound,
// with 5% slack for estimation noise. Requires measured_w2_sum.
void theorem2_check(DualityGapReport& report);

// ---- graph builders (training path) ----

// Evaluates f_k at an [n x d] matrix of barycenter points, returning [n x 1].
using PotentialGraphFn = std::function<ad::Var(ad::Graph&, int k, ad::Var z_b)>;

struct BatchVars {
  int source_id = 1;
  ad::Var z;    // n x d
  ad::Var z_b;  // n x d mapped points
};

struct MaximinGraph {
  ad::Var value;                      // scalar F
  std::vector<ad::Var> source_cost;   // per-source mean C_k (scalars)
};

// Builds F over the batch with gradients flowing through both the base and
// the auxiliary cost terms. Smoothed norms (training mode).
MaximinGraph maximin_objective_graph(ad::Graph& g, const std::vector<BatchVars>& batches,
                                     const PotentialGraphFn& potentials, const MlotConfig& cfg);

// Anchor-averaged contrastive loss for source k over the batch's
// source-specific matrices (one Var per source, each n_k x d).
ad::Var contrastive_batch_graph(ad::Graph& g, const std::vector<ad::Var>& s_by_source, int k_index,
                                double tau);

// Anchor-averaged orthogonality loss: mean over rows of z_b_k of the summed
// |cos| against every source-specific sample in the batch.
ad::Var orthogonality_batch_graph(ad::Graph& g, ad::Var z_b_k,
                                  const std::vector<ad::Var>& s_by_source);

// rho over the pooled mapped batch.
ad::Var congruence_penalty_graph(ad::Graph& g, ad::Var z_b_all, const PotentialGraphFn& potentials,
                                 const MlotConfig& cfg);

}  // namespace baryir::mlot
