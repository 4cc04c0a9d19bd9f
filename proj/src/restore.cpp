#include "baryir/restore.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "baryir/errors.hpp"
#include "baryir/mlot.hpp"
#include "baryir/rng.hpp"

namespace baryir::restore {

namespace {

using ad::Tensor;

constexpr double kPsnrCap = 99.0;

}  // namespace

AggregationMode aggregation_from_string(const std::string& s) {
  if (s == "barycenter_only") return AggregationMode::barycenter_only;
  if (s == "original_only") return AggregationMode::original_only;
  if (s == "original_plus_specific") return AggregationMode::original_plus_specific;
  if (s == "barycenter_plus_specific") return AggregationMode::barycenter_plus_specific;
  throw InputError("unknown aggregation mode '" + s + "'");
}

std::string to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::barycenter_only: return "barycenter_only";
    case AggregationMode::original_only: return "original_only";
    case AggregationMode::original_plus_specific: return "original_plus_specific";
    case AggregationMode::barycenter_plus_specific: return "barycenter_plus_specific";
  }
  return "?";
}

void RestoreMetrics::validate() const {
  if (psnr_per_source.empty()) throw ContractError("metrics: no per-source PSNR values");
  double mean = 0.0;
  for (double v : psnr_per_source) mean += v;
  mean /= static_cast<double>(psnr_per_source.size());
  if (std::fabs(mean - psnr_avg) > 1e-9)
    throw ContractError("metrics: psnr_avg is not the mean of the per-source values");
  if (orthogonality_score < 0.0 || orthogonality_score > 1.0)
    throw ContractError("metrics: orthogonality score out of [0, 1]");
  if (contrastive_margin < -2.0 || contrastive_margin > 2.0)
    throw ContractError("metrics: contrastive margin out of [-2, 2]");
}

std::string RestoreMetrics::to_json() const {
  nlohmann::json j;
  j["schema"] = 1;
  j["psnr_per_source"] = psnr_per_source;
  j["psnr_avg"] = psnr_avg;
  j["orthogonality_score"] = orthogonality_score;
  j["contrastive_margin"] = contrastive_margin;
  j["pushforward_alignment"] = pushforward_alignment;
  return j.dump();
}

ad::Var aggregate(ad::Graph& g, ad::Var z_b, ad::Var s, AggregationMode mode,
                  const std::string& fuse,
                  std::optional<std::pair<ad::Var, ad::Var>> reduction) {
  if (!g.value(z_b).same_shape(g.value(s)))
    throw DimensionError("aggregate: shape mismatch " + g.value(z_b).shape_str() + " vs " +
                         g.value(s).shape_str());
  switch (mode) {
    case AggregationMode::barycenter_only:
      return z_b;
    case AggregationMode::original_only:
      return g.add(z_b, s);
    case AggregationMode::original_plus_specific:
    case AggregationMode::barycenter_plus_specific: {
      ad::Var primary = mode == AggregationMode::original_plus_specific ? g.add(z_b, s) : z_b;
      if (fuse == "add") {
        if (!reduction) throw ContractError("aggregate: additive fuse needs reduction params");
        return g.add(primary, g.add_row_vector(g.matmul(s, reduction->first), reduction->second));
      }
      if (!reduction) throw ContractError("aggregate: concat fuse needs reduction params");
      return g.add_row_vector(g.matmul(g.concat_cols(primary, s), reduction->first),
                              reduction->second);
    }
  }
  throw InputError("aggregate: invalid mode");
}

ad::Var restoration_loss(ad::Graph& g, ad::Var pred, ad::Var clean) {
  if (!g.value(pred).same_shape(g.value(clean)))
    throw DimensionError("restoration_loss: shape mismatch " + g.value(pred).shape_str() + " vs " +
                         g.value(clean).shape_str());
  return g.mean(g.abs(g.sub(pred, clean)));
}

PsnrResult psnr(const ad::Tensor& a, const ad::Tensor& b, double peak) {
  if (!a.same_shape(b))
    throw DimensionError("psnr: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  PsnrResult res;
  if (mse == 0.0) {
    res.db = kPsnrCap;
    res.exact = true;
    return res;
  }
  res.db = 10.0 * std::log10(peak * peak / mse);
  return res;
}

namespace {

struct ForwardVars {
  nets::EncoderVars enc;
  nets::DecoderVars dec;
  nets::MlpVars map;
  std::optional<std::pair<ad::Var, ad::Var>> reduction;
};

ForwardVars register_model(ad::Graph& g, const nets::ModelBundle& m) {
  if (!m.encoder || !m.decoder) throw ContractError("restore: model has no image pipeline");
  ForwardVars v{nets::register_encoder(g, *m.encoder), nets::register_decoder(g, *m.decoder),
                nets::register_mlp(g, m.map.mlp), std::nullopt};
  if (m.reduction_w) v.reduction = {{g.leaf(*m.reduction_w), g.leaf(*m.reduction_b)}};
  return v;
}

}  // namespace

LatentTriple encode_decompose(const nets::ModelBundle& model, const ad::Tensor& images) {
  ad::Graph g;
  ForwardVars v = register_model(g, model);
  ad::Var z = nets::encoder_apply(g, *model.encoder, v.enc, g.leaf(images));
  ad::Var z_b = nets::map_apply(g, model.map, v.map, z);
  ad::Var s = g.sub(z, z_b);
  return {g.value(z), g.value(z_b), g.value(s)};
}

ad::Tensor restore_images(const nets::ModelBundle& model, const ad::Tensor& degraded) {
  ad::Graph g;
  ForwardVars v = register_model(g, model);
  ad::Var z = nets::encoder_apply(g, *model.encoder, v.enc, g.leaf(degraded));
  ad::Var z_b = nets::map_apply(g, model.map, v.map, z);
  ad::Var s = g.sub(z, z_b);
  ad::Var agg = aggregate(g, z_b, s, aggregation_from_string(model.arch.aggregation),
                          model.arch.fuse, v.reduction);
  ad::Var pred = nets::decoder_apply(g, *model.decoder, v.dec, agg);
  return g.value(pred);
}

DecompositionScores decomposition_scores(const std::vector<ad::Tensor>& z_b_by_source,
                                         const std::vector<ad::Tensor>& s_by_source,
                                         int projections, uint64_t projection_seed) {
  const size_t k_count = z_b_by_source.size();
  if (k_count < 2 || s_by_source.size() != k_count)
    throw ContractError("decomposition scores: need >= 2 sources with matching shapes");
  const int d = z_b_by_source[0].shape[1];

  const auto row = [](const Tensor& t, int i) {
    return std::vector<double>(t.data.begin() + static_cast<size_t>(i) * t.shape[1],
                               t.data.begin() + static_cast<size_t>(i + 1) * t.shape[1]);
  };

  // orthogonality: all (z_b anchor, s sample) pairs, pooled across sources
  double ortho = 0.0;
  long ortho_n = 0;
  for (const Tensor& zb : z_b_by_source) {
    for (int i = 0; i < zb.shape[0]; ++i) {
      const std::vector<double> anchor = row(zb, i);
      for (const Tensor& s : s_by_source)
        for (int j = 0; j < s.shape[0]; ++j) {
          ortho += std::fabs(mlot::cosine(anchor, row(s, j), ad::Graph::kNormEps));
          ++ortho_n;
        }
    }
  }
  DecompositionScores out;
  out.orthogonality_score = ortho / static_cast<double>(ortho_n);

  // contrastive margin on the source-specific vectors
  double intra = 0.0, inter = 0.0;
  long intra_n = 0, inter_n = 0;
  for (size_t a = 0; a < k_count; ++a) {
    const Tensor& sa = s_by_source[a];
    for (int i = 0; i < sa.shape[0]; ++i) {
      const std::vector<double> si = row(sa, i);
      for (size_t b = 0; b < k_count; ++b) {
        const Tensor& sb = s_by_source[b];
        for (int j = 0; j < sb.shape[0]; ++j) {
          if (a == b && i == j) continue;
          const double c = mlot::cosine(si, row(sb, j), ad::Graph::kNormEps);
          if (a == b) {
            intra += c;
            ++intra_n;
          } else {
            inter += c;
            ++inter_n;
          }
        }
      }
    }
  }
  if (intra_n == 0 || inter_n == 0)
    throw ContractError("decomposition scores: need >= 2 samples per source");
  out.contrastive_margin = intra / intra_n - inter / inter_n;

  // sliced squared-W2 between mapped latents, averaged over source pairs
  Rng rng(projection_seed);
  std::vector<std::vector<double>> dirs;
  for (int p = 0; p < projections; ++p) {
    std::vector<double> dir(static_cast<size_t>(d));
    double nrm = 0.0;
    for (double& v : dir) {
      v = rng.normal();
      nrm += v * v;
    }
    nrm = std::sqrt(nrm);
    for (double& v : dir) v /= nrm;
    dirs.push_back(std::move(dir));
  }
  const auto project = [&](const Tensor& t, const std::vector<double>& dir) {
    std::vector<double> out_p(static_cast<size_t>(t.shape[0]));
    for (int i = 0; i < t.shape[0]; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += t.data[static_cast<size_t>(i) * d + j] * dir[static_cast<size_t>(j)];
      out_p[static_cast<size_t>(i)] = acc;
    }
    return out_p;
  };
  double align = 0.0;
  int pairs = 0;
  for (size_t a = 0; a < k_count; ++a)
    for (size_t b = a + 1; b < k_count; ++b) {
      double acc = 0.0;
      for (const auto& dir : dirs) {
        const std::vector<double> pa = project(z_b_by_source[a], dir);
        const std::vector<double> pb = project(z_b_by_source[b], dir);
        acc += oracle::w2sq_1d(pa, std::vector<double>(pa.size(), 1.0 / pa.size()), pb,
                               std::vector<double>(pb.size(), 1.0 / pb.size()));
      }
      align += acc / static_cast<double>(dirs.size());
      ++pairs;
    }
  out.pushforward_alignment = align / pairs;
  return out;
}

ad::Tensor images_to_batch(const std::vector<synth::PairedSample>& samples, bool degraded,
                           int begin, int count) {
  if (samples.empty() || begin + count > static_cast<int>(samples.size()))
    throw ContractError("images_to_batch: range out of bounds");
  const int h = samples[0].clean.shape[0], w = samples[0].clean.shape[1];
  Tensor batch({count, h, w, 1});
  for (int i = 0; i < count; ++i) {
    const Tensor& src = degraded ? samples[static_cast<size_t>(begin + i)].degraded
                                 : samples[static_cast<size_t>(begin + i)].clean;
    std::copy(src.data.begin(), src.data.end(),
              batch.data.begin() + static_cast<size_t>(i) * h * w);
  }
  return batch;
}

RestoreMetrics evaluate_decomposition(const nets::ModelBundle& model,
                                      const synth::MultisourceScene& dataset, int max_per_source) {
  if (dataset.by_source.size() < 2)
    throw ContractError("evaluate_decomposition: needs >= 2 sources");
  RestoreMetrics m;
  std::vector<Tensor> z_b_by_source, s_by_source;
  for (const auto& bucket : dataset.by_source) {
    const int n = std::min<int>(max_per_source, static_cast<int>(bucket.size()));
    if (n < 2) throw ContractError("evaluate_decomposition: needs >= 2 samples per source");
    double psnr_acc = 0.0;
    std::vector<Tensor> zb_parts, s_parts;
    // chunked forward keeps peak memory modest
    const int chunk = 64;
    Tensor zb_all({n, model.arch.latent_dim}), s_all({n, model.arch.latent_dim});
    int row0 = 0;
    for (int begin = 0; begin < n; begin += chunk) {
      const int cnt = std::min(chunk, n - begin);
      const Tensor degraded = images_to_batch(bucket, true, begin, cnt);
      const Tensor clean = images_to_batch(bucket, false, begin, cnt);
      Tensor pred = restore_images(model, degraded);
      for (double& v : pred.data) v = std::min(1.0, std::max(0.0, v));
      const int hw = clean.shape[1] * clean.shape[2];
      for (int i = 0; i < cnt; ++i) {
        Tensor pi, ci;
        pi.shape = {clean.shape[1], clean.shape[2]};
        ci.shape = pi.shape;
        pi.data.assign(pred.data.begin() + static_cast<size_t>(i) * hw,
                       pred.data.begin() + static_cast<size_t>(i + 1) * hw);
        ci.data.assign(clean.data.begin() + static_cast<size_t>(i) * hw,
                       clean.data.begin() + static_cast<size_t>(i + 1) * hw);
        psnr_acc += psnr(pi, ci).db;
      }
      const LatentTriple lt = encode_decompose(model, degraded);
      std::copy(lt.z_b.data.begin(), lt.z_b.data.end(),
                zb_all.data.begin() + static_cast<size_t>(row0) * model.arch.latent_dim);
      std::copy(lt.s.data.begin(), lt.s.data.end(),
                s_all.data.begin() + static_cast<size_t>(row0) * model.arch.latent_dim);
      row0 += cnt;
    }
    m.psnr_per_source.push_back(psnr_acc / n);
    z_b_by_source.push_back(std::move(zb_all));
    s_by_source.push_back(std::move(s_all));
  }
  double avg = 0.0;
  for (double v : m.psnr_per_source) avg += v;
  m.psnr_avg = avg / static_cast<double>(m.psnr_per_source.size());

  const DecompositionScores ds = decomposition_scores(z_b_by_source, s_by_source);
  m.orthogonality_score = ds.orthogonality_score;
  m.contrastive_margin = ds.contrastive_margin;
  m.pushforward_alignment = ds.pushforward_alignment;
  m.validate();
  return m;
}

}  // namespace baryir::restore
