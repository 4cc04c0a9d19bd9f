#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "baryir/oracle.hpp"
#include "baryir/tensor.hpp"

namespace baryir::synth {

enum class PatternKind { gradient, checker, blobs };
enum class DegradationKind { gaussian_noise, box_blur, gamma_dark, haze_mix };

PatternKind pattern_from_string(const std::string& s);
std::string to_string(PatternKind k);
DegradationKind degradation_from_string(const std::string& s);
std::string to_string(DegradationKind k);

// One degradation family; each generated sample draws its level uniformly
// from `levels`.
struct DegradationSpec {
  DegradationKind kind = DegradationKind::gaussian_noise;
  std::vector<double> levels{0.1};
};

struct SceneConfig {
  int image_size = 32;
  PatternKind pattern = PatternKind::blobs;
  std::vector<DegradationSpec> sources;
  std::vector<int> counts;
  uint64_t seed = 0;
  void validate() const;
};

struct PairedSample {
  ad::Tensor clean;     // H x W in [0, 1]
  ad::Tensor degraded;  // H x W in [0, 1]
  int source_id = 1;    // 1-based
};

struct SceneManifest {
  int image_size = 0;
  int k_count = 0;
  std::vector<int> counts;
  std::vector<double> lambda;
  uint64_t seed = 0;
  uint64_t content_hash = 0;  // FNV over every sample in order
  std::string to_json() const;
};

struct MultisourceScene {
  std::vector<std::vector<PairedSample>> by_source;
  SceneManifest manifest;
};

// Deterministic Gaussian sampling (n x d matrix); covariance square root via
// symmetric eigendecomposition.
ad::Tensor sample_gaussian_source(const oracle::GaussianSpec& spec, int n, uint64_t seed);

// Procedural clean image for a per-sample seed.
ad::Tensor generate_pattern(PatternKind kind, int size, uint64_t seed);

// Degradation operators; each returns identity at its minimum level:
//   gaussian_noise: x + N(0, level^2), clamped; level in [0, 1]
//   box_blur:       k x k normalized box, k = level odd in [1, 15]
//   gamma_dark:     x^level, level in [1, 8]
//   haze_mix:       (1-a) x + a * 0.8, a = level in [0, 1]
ad::Tensor degrade(const ad::Tensor& image, DegradationKind kind, double level, uint64_t seed);

// Per-sample seeds derive from (seed, source, index), so generation order and
// thread count (BARYIR_THREADS) never change the output.
MultisourceScene make_multisource_scene(const SceneConfig& cfg);

// lambda_k = count_k / total, with the last entry taking the remainder so the
// sum is exactly one.
std::vector<double> source_weights_from_counts(const std::vector<int>& counts);

// Dataset directory: manifest.json plus raw little-endian float64 tensors per
// source; import validates the per-file hashes recorded in the manifest.
void export_scene(const MultisourceScene& scene, const std::string& dir);
MultisourceScene import_scene(const std::string& dir);

int worker_count();  // BARYIR_THREADS, default 1

}  // namespace baryir::synth
