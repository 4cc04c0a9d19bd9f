#include "baryir/mlot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "baryir/errors.hpp"

namespace baryir::mlot {

namespace {

constexpr double kEps = ad::Graph::kNormEps;
constexpr double kGapTol = 1e-6;

double vec_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double base_cost_value(const std::vector<double>& z, const std::vector<double>& z_b,
                       BaseCost kind) {
  if (z.size() != z_b.size()) throw DimensionError("transport_cost: dimension mismatch");
  double ss = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - z_b[i];
    ss += d * d;
  }
  return kind == BaseCost::squared_euclidean ? ss : std::sqrt(ss);
}

double logsumexp_vec(const std::vector<double>& xs) {
  double mx = xs[0];
  for (double x : xs) mx = std::max(mx, x);
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

std::vector<double> tensor_row(const ad::Tensor& t, int i) {
  const int d = t.shape[1];
  return std::vector<double>(t.data.begin() + static_cast<size_t>(i) * d,
                             t.data.begin() + static_cast<size_t>(i + 1) * d);
}

std::vector<double> batch_row_weights(const SourceBatch& b) {
  if (b.row_weights) {
    if (static_cast<int>(b.row_weights->size()) != b.rows())
      throw ContractError("source batch: row weight count mismatch");
    return *b.row_weights;
  }
  return std::vector<double>(static_cast<size_t>(b.rows()), 1.0 / b.rows());
}

}  // namespace

void SourceBatch::validate(int k_total) const {
  if (source_id < 1 || source_id > k_total)
    throw ContractError("source batch: source_id " + std::to_string(source_id) +
                        " outside 1.." + std::to_string(k_total));
  if (latents.ndim() != 2) throw DimensionError("source batch: latents must be a matrix");
  if (barycenter_latents && !barycenter_latents->same_shape(latents))
    throw DimensionError("source batch: mapped latents shape mismatch");
  if (source_specific) {
    if (!barycenter_latents)
      throw ContractError("source batch: source_specific without barycenter_latents");
    for (size_t i = 0; i < latents.data.size(); ++i) {
      const double expect = latents.data[i] - barycenter_latents->data[i];
      if (std::fabs(source_specific->data[i] - expect) > 1e-12)
        throw ContractError("source batch: source_specific != latents - barycenter_latents");
    }
  }
}

void MlotConfig::validate() const {
  if (weights.empty()) throw InputError("mlot config: empty weights");
  double sum = 0.0;
  for (double w : weights) {
    if (w <= 0.0) throw InputError("mlot config: weights must be positive");
    sum += w;
  }
  if (std::fabs(sum - 1.0) > 1e-12)
    throw InputError("mlot config: weights sum to " + std::to_string(sum));
  if (gamma < 0.0) throw InputError("mlot config: gamma must be >= 0");
  if (tau <= 0.0) throw InputError("mlot config: tau must be > 0");
  if (beta <= 0.0) throw InputError("mlot config: beta must be > 0");
  if (congruence_coeff < 0.0) throw InputError("mlot config: congruence_coeff must be >= 0");
}

void DualityGapReport::validate(bool exact_mode) const {
  if (e1 < -kGapTol)
    throw NumericalError("duality gap report: e1 = " + std::to_string(e1) + " below -1e-6");
  if (exact_mode && e2 < -kGapTol)
    throw NumericalError("duality gap report: e2 = " + std::to_string(e2) + " below -1e-6");
}

std::string DualityGapReport::to_json() const {
  nlohmann::json j;
  j["e1"] = e1;
  j["e2"] = e2;
  j["l_star"] = l_star;
  j["beta"] = beta;
  j["bound"] = bound;
  if (measured_w2_sum)
    j["measured_w2_sum"] = *measured_w2_sum;
  else
    j["measured_w2_sum"] = nullptr;
  j["pass"] = pass;
  j["margin"] = margin;
  return j.dump();
}

ad::Tensor source_specific(const ad::Tensor& z, const ad::Tensor& z_b) {
  if (!z.same_shape(z_b))
    throw DimensionError("source_specific: shape mismatch: " + z.shape_str() + " vs " +
                         z_b.shape_str());
  ad::Tensor s = z;
  for (size_t i = 0; i < s.data.size(); ++i) s.data[i] -= z_b.data[i];
  return s;
}

double cosine(const std::vector<double>& u, const std::vector<double>& v, double eps) {
  if (u.size() != v.size()) throw DimensionError("cosine: dimension mismatch");
  const double uu = vec_dot(u, u) + eps, vv = vec_dot(v, v) + eps;
  if (uu == 0.0 || vv == 0.0) throw DegenerateInputError("cosine: zero-norm input in strict mode");
  return vec_dot(u, v) / std::sqrt(uu * vv);
}

double contrastive_from_sims(const std::vector<double>& pos_sims,
                             const std::vector<double>& neg_sims, double tau) {
  if (pos_sims.empty() || neg_sims.empty())
    throw ContractError("contrastive loss: needs at least one positive and one negative");
  std::vector<double> pos, all;
  for (double s : pos_sims) pos.push_back(s / tau);
  all = pos;
  for (double s : neg_sims) all.push_back(s / tau);
  return logsumexp_vec(all) - logsumexp_vec(pos);
}

double contrastive_loss(const std::vector<double>& anchor,
                        const std::vector<std::vector<double>>& positives,
                        const std::vector<std::vector<double>>& negatives, double tau,
                        bool strict) {
  const double eps = strict ? 0.0 : kEps;
  std::vector<double> pos, neg;
  for (const auto& p : positives) pos.push_back(cosine(anchor, p, eps));
  for (const auto& n : negatives) neg.push_back(cosine(anchor, n, eps));
  return contrastive_from_sims(pos, neg, tau);
}

double orthogonality_loss(const std::vector<double>& z_b,
                          const std::vector<std::vector<double>>& all_source_specific,
                          bool strict) {
  const double eps = strict ? 0.0 : kEps;
  double acc = 0.0;
  for (const auto& s : all_source_specific) acc += std::fabs(cosine(z_b, s, eps));
  return acc;
}

BatchContext BatchContext::from_batches(const std::vector<SourceBatch>& batches) {
  BatchContext ctx;
  for (const auto& b : batches) {
    if (!b.source_specific)
      throw ContractError("batch context: source_specific representations missing");
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < b.rows(); ++i) rows.push_back(tensor_row(*b.source_specific, i));
    ctx.s_by_source.push_back(std::move(rows));
  }
  return ctx;
}

double transport_cost(const std::vector<double>& z, const std::vector<double>& z_b,
                      const BatchContext& ctx, int k, const MlotConfig& cfg, int anchor_index) {
  const double base = base_cost_value(z, z_b, cfg.base_cost);
  if (cfg.gamma == 0.0) return base;
  if (ctx.s_by_source.empty())
    throw ContractError("transport_cost: batch context required when gamma > 0");
  const int kk = k - 1;
  if (kk < 0 || kk >= static_cast<int>(ctx.s_by_source.size()))
    throw ContractError("transport_cost: source id out of range");

  std::vector<double> anchor_s(z.size());
  for (size_t i = 0; i < z.size(); ++i) anchor_s[i] = z[i] - z_b[i];

  std::vector<std::vector<double>> positives, negatives, all_s;
  for (size_t j = 0; j < ctx.s_by_source.size(); ++j) {
    const auto& rows = ctx.s_by_source[j];
    for (size_t i = 0; i < rows.size(); ++i) {
      const bool is_anchor_slot = static_cast<int>(j) == kk && static_cast<int>(i) == anchor_index;
      const std::vector<double>& s = is_anchor_slot ? anchor_s : rows[i];
      all_s.push_back(s);
      if (static_cast<int>(j) == kk) {
        if (!is_anchor_slot) positives.push_back(s);
      } else {
        negatives.push_back(s);
      }
    }
  }
  const double ctr = contrastive_loss(anchor_s, positives, negatives, cfg.tau, false);
  const double ort = orthogonality_loss(z_b, all_s, false);
  return base + cfg.gamma * (ctr + ort);
}

double dual_functional(const std::vector<PotentialFn>& potentials,
                       const std::vector<SourceBatch>& batches,
                       const std::vector<std::vector<double>>& candidates, const MlotConfig& cfg) {
  cfg.validate();
  if (candidates.empty()) throw ContractError("dual_functional: empty candidate set");
  if (static_cast<int>(potentials.size()) != cfg.k_count())
    throw ContractError("dual_functional: potential count mismatch");
  BatchContext ctx;
  if (cfg.gamma > 0.0) ctx = BatchContext::from_batches(batches);

  double total = 0.0;
  for (const auto& b : batches) {
    if (b.rows() < 1) throw ContractError("dual_functional: empty batch");
    b.validate(cfg.k_count());
    const int kk = b.source_id - 1;
    // Cache f_k over the candidate set.
    std::vector<double> f_vals(candidates.size());
    for (size_t c = 0; c < candidates.size(); ++c) f_vals[c] = potentials[kk](candidates[c]);

    const std::vector<double> w = batch_row_weights(b);
    double acc = 0.0;
    for (int i = 0; i < b.rows(); ++i) {
      const std::vector<double> z = tensor_row(b.latents, i);
      double best = std::numeric_limits<double>::infinity();
      for (size_t c = 0; c < candidates.size(); ++c) {
        const double v = transport_cost(z, candidates[c], ctx, b.source_id, cfg, i) - f_vals[c];
        best = std::min(best, v);
      }
      acc += w[static_cast<size_t>(i)] * best;
    }
    total += cfg.weights[static_cast<size_t>(kk)] * acc;
  }
  return total;
}

double maximin_objective(const std::vector<PotentialFn>& potentials,
                         const std::vector<SourceBatch>& batches, const MlotConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(potentials.size()) != cfg.k_count())
    throw ContractError("maximin_objective: potential count mismatch");
  BatchContext ctx;
  if (cfg.gamma > 0.0) ctx = BatchContext::from_batches(batches);

  double total = 0.0;
  for (const auto& b : batches) {
    b.validate(cfg.k_count());
    if (!b.barycenter_latents)
      throw ContractError("maximin_objective: batches must carry mapped latents");
    const int kk = b.source_id - 1;
    const std::vector<double> w = batch_row_weights(b);
    double acc = 0.0;
    for (int i = 0; i < b.rows(); ++i) {
      const std::vector<double> z = tensor_row(b.latents, i);
      const std::vector<double> zb = tensor_row(*b.barycenter_latents, i);
      acc += w[static_cast<size_t>(i)] *
             (transport_cost(z, zb, ctx, b.source_id, cfg, i) - potentials[kk](zb));
    }
    total += cfg.weights[static_cast<size_t>(kk)] * acc;
  }
  return total;
}

double maximin_objective(const std::vector<PotentialFn>& potentials, const MapFn& map,
                         std::vector<SourceBatch> batches, const MlotConfig& cfg) {
  for (auto& b : batches) {
    ad::Tensor zb = b.latents;
    for (int i = 0; i < b.rows(); ++i) {
      const std::vector<double> out = map(tensor_row(b.latents, i));
      if (static_cast<int>(out.size()) != b.dim())
        throw DimensionError("maximin_objective: map output dimension mismatch");
      std::copy(out.begin(), out.end(), zb.data.begin() + static_cast<size_t>(i) * b.dim());
    }
    b.barycenter_latents = zb;
    b.source_specific = source_specific(b.latents, zb);
  }
  return maximin_objective(potentials, batches, cfg);
}

double congruence_penalty(const std::vector<PotentialFn>& potentials, const ad::Tensor& z_b_batch,
                          const std::vector<double>& weights) {
  if (z_b_batch.ndim() != 2 || z_b_batch.shape[0] < 1)
    throw ContractError("congruence_penalty: nonempty matrix batch required");
  if (potentials.size() != weights.size())
    throw ContractError("congruence_penalty: potential/weight count mismatch");
  double acc = 0.0;
  for (int i = 0; i < z_b_batch.shape[0]; ++i) {
    const std::vector<double> zb = tensor_row(z_b_batch, i);
    double s = 0.0;
    for (size_t k = 0; k < potentials.size(); ++k) s += weights[k] * potentials[k](zb);
    acc += s * s;
  }
  return acc / z_b_batch.shape[0];
}

E1Result duality_gap_e1(const std::vector<PotentialFn>& potentials,
                        const std::vector<SourceBatch>& batches,
                        const std::vector<std::vector<double>>& candidates, const MlotConfig& cfg,
                        double grid_spacing) {
  if (candidates.empty()) throw ContractError("duality_gap_e1: empty candidate set");
  E1Result res;
  res.value = maximin_objective(potentials, batches, cfg) -
              dual_functional(potentials, batches, candidates, cfg);
  res.grid_spacing = grid_spacing;
  if (grid_spacing > 0.0) {
    // Crude Lipschitz estimate of c - f along the candidate list.
    double lip_f = 0.0;
    for (size_t k = 0; k < potentials.size(); ++k) {
      for (size_t c = 1; c < candidates.size(); ++c) {
        double dist = 0.0;
        for (size_t t = 0; t < candidates[c].size(); ++t) {
          const double d = candidates[c][t] - candidates[c - 1][t];
          dist += d * d;
        }
        dist = std::sqrt(dist);
        if (dist <= 0.0 || dist > 4.0 * grid_spacing) continue;
        lip_f = std::max(
            lip_f, std::fabs(potentials[k](candidates[c]) - potentials[k](candidates[c - 1])) / dist);
      }
    }
    double diam = 0.0;
    for (const auto& b : batches)
      for (double v : b.latents.data) diam = std::max(diam, std::fabs(v));
    const double lip_cost = cfg.base_cost == BaseCost::squared_euclidean ? 4.0 * diam + 4.0 : 1.0;
    res.inf_gap_bound = grid_spacing * (lip_cost + lip_f);
  }
  return res;
}

double duality_gap_e2(const std::vector<PotentialFn>& potentials,
                      const std::vector<SourceBatch>& batches, double l_star,
                      const std::vector<std::vector<double>>& candidates, const MlotConfig& cfg) {
  return l_star - dual_functional(potentials, batches, candidates, cfg);
}

void theorem2_check(DualityGapReport& report) {
  if (!report.measured_w2_sum)
    throw ContractError("theorem2_check: measured_w2_sum requires a known reference map");
  report.bound = (2.0 / report.beta) * (report.e1 + report.e2);
  const double slackened = report.bound * 1.05 + 1e-9;
  report.margin = slackened - *report.measured_w2_sum;
  report.pass = *report.measured_w2_sum <= slackened;
}

// ---- graph builders ----

ad::Var contrastive_batch_graph(ad::Graph& g, const std::vector<ad::Var>& s_by_source, int k_index,
                                double tau) {
  const int k_count = static_cast<int>(s_by_source.size());
  if (k_index < 0 || k_index >= k_count) throw ContractError("contrastive graph: bad source index");
  std::vector<int> offsets(static_cast<size_t>(k_count) + 1, 0);
  for (int k = 0; k < k_count; ++k)
    offsets[static_cast<size_t>(k) + 1] = offsets[static_cast<size_t>(k)] + g.value(s_by_source[static_cast<size_t>(k)]).rows();
  const int n_all = offsets[static_cast<size_t>(k_count)];
  const int n_k = g.value(s_by_source[static_cast<size_t>(k_index)]).rows();
  if (n_k < 2)
    throw ContractError("contrastive graph: source needs >= 2 samples for positives");
  if (n_all - n_k < 1) throw ContractError("contrastive graph: no negatives in batch");

  ad::Var all_s = g.concat_rows(s_by_source);
  ad::Var normed = g.normalize_rows(all_s, ad::Graph::kNormEps);
  ad::Var sim = g.matmul_nt(normed, normed);  // n_all x n_all

  const int base = offsets[static_cast<size_t>(k_index)];
  ad::Var acc = g.scalar(0.0);
  for (int a = base; a < base + n_k; ++a) {
    std::vector<int64_t> pos_idx, all_idx;
    for (int j = 0; j < n_all; ++j) {
      if (j == a) continue;
      const bool same = j >= base && j < base + n_k;
      const int64_t flat = static_cast<int64_t>(a) * n_all + j;
      all_idx.push_back(flat);
      if (same) pos_idx.push_back(flat);
    }
    ad::Var lse_all = g.logsumexp(g.scale(g.gather(sim, all_idx), 1.0 / tau));
    ad::Var lse_pos = g.logsumexp(g.scale(g.gather(sim, pos_idx), 1.0 / tau));
    acc = g.add(acc, g.sub(lse_all, lse_pos));
  }
  return g.scale(acc, 1.0 / n_k);
}

ad::Var orthogonality_batch_graph(ad::Graph& g, ad::Var z_b_k,
                                  const std::vector<ad::Var>& s_by_source) {
  const int n_k = g.value(z_b_k).rows();
  ad::Var all_s = g.concat_rows(s_by_source);
  ad::Var nb = g.normalize_rows(z_b_k, ad::Graph::kNormEps);
  ad::Var ns = g.normalize_rows(all_s, ad::Graph::kNormEps);
  ad::Var cosines = g.matmul_nt(nb, ns);  // n_k x n_all
  return g.scale(g.sum(g.abs(cosines)), 1.0 / n_k);
}

MaximinGraph maximin_objective_graph(ad::Graph& g, const std::vector<BatchVars>& batches,
                                     const PotentialGraphFn& potentials, const MlotConfig& cfg) {
  cfg.validate();
  if (batches.empty()) throw ContractError("maximin graph: no batches");

  std::vector<ad::Var> s_vars;
  s_vars.reserve(batches.size());
  for (const auto& b : batches) s_vars.push_back(g.sub(b.z, b.z_b));

  MaximinGraph out;
  ad::Var total = g.scalar(0.0);
  for (size_t t = 0; t < batches.size(); ++t) {
    const auto& b = batches[t];
    const int kk = b.source_id - 1;
    if (kk < 0 || kk >= cfg.k_count()) throw ContractError("maximin graph: bad source id");
    ad::Var base_vec = cfg.base_cost == BaseCost::squared_euclidean
                           ? g.rows_sumsq(s_vars[t])
                           : g.rows_norm(s_vars[t], ad::Graph::kNormEps);
    ad::Var cost_k = g.mean(base_vec);
    if (cfg.gamma > 0.0) {
      ad::Var ctr = contrastive_batch_graph(g, s_vars, static_cast<int>(t), cfg.tau);
      ad::Var ort = orthogonality_batch_graph(g, b.z_b, s_vars);
      cost_k = g.add(cost_k, g.scale(g.add(ctr, ort), cfg.gamma));
    }
    ad::Var f_vals = potentials(g, b.source_id, b.z_b);
    ad::Var term = g.sub(cost_k, g.mean(f_vals));
    total = g.add(total, g.scale(term, cfg.weights[static_cast<size_t>(kk)]));
    out.source_cost.push_back(cost_k);
  }
  out.value = total;
  return out;
}

ad::Var congruence_penalty_graph(ad::Graph& g, ad::Var z_b_all, const PotentialGraphFn& potentials,
                                 const MlotConfig& cfg) {
  const int n = g.value(z_b_all).rows();
  ad::Var acc = potentials(g, 1, z_b_all);
  acc = g.scale(acc, cfg.weights[0]);
  for (int k = 2; k <= cfg.k_count(); ++k) {
    ad::Var fk = potentials(g, k, z_b_all);
    acc = g.add(acc, g.scale(fk, cfg.weights[static_cast<size_t>(k - 1)]));
  }
  return g.scale(g.sum(g.mul(acc, acc)), 1.0 / n);
}

}  // namespace baryir::mlot
