#pragma once

#include <optional>
#include <string>
#include <vector>

#include "baryir/autodiff.hpp"
#include "baryir/nets.hpp"
#include "baryir/synth.hpp"
#include "baryir/tensor.hpp"

namespace baryir::restore {

enum class AggregationMode {
  barycenter_only,
  original_only,
  original_plus_specific,
  barycenter_plus_specific
};

AggregationMode aggregation_from_string(const std::string& s);
std::string to_string(AggregationMode m);

struct RestoreMetrics {
  std::vector<double> psnr_per_source;
  double psnr_avg = 0.0;
  double orthogonality_score = 0.0;   // mean |cos(z_b, s)| over pairs
  double contrastive_margin = 0.0;    // intra-source minus inter-source cos of s
  double pushforward_alignment = 0.0; // mean pairwise sliced squared-W2 of mapped latents

  void validate() const;
  std::string to_json() const;
};

// Latent fusion feeding the decoder. Concat modes apply the learned linear
// reduction (2d -> d); additive fuse uses z_primary + W s. original_only
// reconstructs z = z_b + s exactly and barycenter_only ignores s.
ad::Var aggregate(ad::Graph& g, ad::Var z_b, ad::Var s, AggregationMode mode,
                  const std::string& fuse,
                  std::optional<std::pair<ad::Var, ad::Var>> reduction);

// Mean absolute error over all pixels.
ad::Var restoration_loss(ad::Graph& g, ad::Var pred, ad::Var clean);

struct PsnrResult {
  double db = 0.0;
  bool exact = false;  // MSE was zero; value capped at 99 dB
};
PsnrResult psnr(const ad::Tensor& a, const ad::Tensor& b, double peak = 1.0);

// Full forward pass on degraded images (N x H x W x 1): encode, map,
// decompose, aggregate, decode. Predictions are raw decoder output.
ad::Tensor restore_images(const nets::ModelBundle& model, const ad::Tensor& degraded);

struct LatentTriple {
  ad::Tensor z, z_b, s;
};
LatentTriple encode_decompose(const nets::ModelBundle& model, const ad::Tensor& images);

// Representation scores from explicit per-source latent matrices; the
// building block of evaluate_decomposition and of its constructed-case tests.
struct DecompositionScores {
  double orthogonality_score = 0.0;
  double contrastive_margin = 0.0;
  double pushforward_alignment = 0.0;
};
DecompositionScores decomposition_scores(const std::vector<ad::Tensor>& z_b_by_source,
                                         const std::vector<ad::Tensor>& s_by_source,
                                         int projections = 64, uint64_t projection_seed = 12345);

// Restoration quality plus representation scores over a dataset; PSNR is
// computed on predictions clamped to [0, 1].
RestoreMetrics evaluate_decomposition(const nets::ModelBundle& model,
                                      const synth::MultisourceScene& dataset,
                                      int max_per_source = 256);

ad::Tensor images_to_batch(const std::vector<synth::PairedSample>& samples, bool degraded,
                           int begin, int count);

}  // namespace baryir::restore
