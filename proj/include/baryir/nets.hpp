#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "baryir/autodiff.hpp"
#include "baryir/tensor.hpp"

namespace baryir::nets {

enum class Activation { none, relu };

struct Layer {
  ad::Tensor weight;  // in x out
  ad::Tensor bias;    // out
  Activation act = Activation::none;
};

struct MlpParams {
  std::vector<Layer> layers;

  int input_dim() const { return layers.front().weight.shape[0]; }
  int output_dim() const { return layers.back().weight.shape[1]; }
  void validate() const;  // dimension chaining and finiteness
};

// Deterministic init: weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
// biases zero. zero_last zeroes the final layer (residual heads, potentials).
MlpParams init_mlp(uint64_t seed, const std::vector<int>& dims, Activation hidden,
                   bool zero_last = false);

// Parameter handles registered as leaves of a graph.
struct MlpVars {
  std::vector<std::pair<ad::Var, ad::Var>> layers;  // (weight, bias)
};
MlpVars register_mlp(ad::Graph& g, const MlpParams& p);
ad::Var mlp_apply(ad::Graph& g, const MlpParams& p, const MlpVars& vars, ad::Var x);
ad::Tensor mlp_forward(const MlpParams& p, const ad::Tensor& x);

// Residual barycenter map T(z) = z + mlp(z); the mlp's last layer starts at
// zero so training begins from the identity transport.
struct BarycenterMap {
  MlpParams mlp;
};
BarycenterMap init_barycenter_map(uint64_t seed, int latent_dim, const std::vector<int>& hidden);
ad::Var map_apply(ad::Graph& g, const BarycenterMap& m, const MlpVars& vars, ad::Var z);
ad::Tensor map_forward(const BarycenterMap& m, const ad::Tensor& z);

// Potential f_k: latent -> scalar; affine when hidden is empty (the
// certifiable configuration for the error-bound suite).
MlpParams init_potential(uint64_t seed, int latent_dim, const std::vector<int>& hidden);

struct ConvLayer {
  ad::Tensor weight;  // conv: oc x (k*k*ic); deconv: ic x (k*k*oc)
  ad::Tensor bias;    // oc
  int in_ch = 1, out_ch = 1, k = 3, stride = 2, pad = 1;
};

// Two stride-2 convolutions followed by a learned projection to the latent
// vector (global per-image code).
struct ConvEncoder {
  ConvLayer c1, c2;
  ad::Tensor proj_w;  // (h/4 * w/4 * c2) x d
  ad::Tensor proj_b;  // d
  int image_size = 32;
  int latent_dim = 16;
};

// Mirror stack: linear seed, two stride-2 transposed convolutions, and a
// full-resolution 3x3 refinement conv.
struct ConvDecoder {
  ad::Tensor fc_w;  // d x (h/4 * w/4 * c2)
  ad::Tensor fc_b;
  ConvLayer d1, d2;  // deconvs (k = 4)
  ConvLayer d3;      // stride-1 refinement conv to one channel
  int image_size = 32;
  int latent_dim = 16;
};

ConvEncoder init_encoder(uint64_t seed, int image_size, int c1, int c2, int latent_dim);
ConvDecoder init_decoder(uint64_t seed, int image_size, int c1, int c2, int latent_dim);

struct EncoderVars {
  std::pair<ad::Var, ad::Var> c1, c2, proj;
};
struct DecoderVars {
  std::pair<ad::Var, ad::Var> fc, d1, d2, d3;
};
EncoderVars register_encoder(ad::Graph& g, const ConvEncoder& e);
DecoderVars register_decoder(ad::Graph& g, const ConvDecoder& d);
// images: N x H x W x 1 -> latents N x d
ad::Var encoder_apply(ad::Graph& g, const ConvEncoder& e, const EncoderVars& v, ad::Var images);
// latents N x d -> images N x H x W x 1
ad::Var decoder_apply(ad::Graph& g, const ConvDecoder& d, const DecoderVars& v, ad::Var z);

// Full model architecture description; everything needed to rebuild the
// parameter tree deterministically.
struct ArchSpec {
  std::string kind = "vector";  // vector | image
  int k_count = 2;
  int latent_dim = 16;
  std::vector<int> map_hidden{64, 64};
  std::vector<int> potential_hidden{64};  // empty = affine
  int image_size = 32;
  int enc_c1 = 8;
  int enc_c2 = 16;
  std::string aggregation = "barycenter_plus_specific";
  std::string fuse = "concat";  // concat | add

  bool operator==(const ArchSpec&) const = default;
};

struct ModelBundle {
  ArchSpec arch;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  BarycenterMap map;
  std::vector<MlpParams> potentials;
  std::optional<ConvEncoder> encoder;
  std::optional<ConvDecoder> decoder;
  std::optional<ad::Tensor> reduction_w;  // aggregation fusion parameters
  std::optional<ad::Tensor> reduction_b;

  // Declared parameter order used by checkpoints and the optimizer.
  std::vector<ad::Tensor*> all_tensors();
  std::vector<const ad::Tensor*> all_tensors() const;
};

ModelBundle init_model(const ArchSpec& arch, uint64_t seed, uint64_t config_hash);

// Checkpoint file: magic + JSON header (architecture, K, d, seed, config
// hash, byte-order tag, tensor shapes) followed by raw little-endian 64-bit
// floats in declared order.
void save_checkpoint(const ModelBundle& m, const std::string& path);
ModelBundle load_checkpoint(const std::string& path, const ArchSpec* expected = nullptr);

}  // namespace baryir::nets
