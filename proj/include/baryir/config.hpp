#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "baryir/mlot.hpp"
#include "baryir/nets.hpp"
#include "baryir/oracle.hpp"
#include "baryir/synth.hpp"

namespace baryir::train {

struct OptimizerConfig {
  double lr_map = 1e-3;
  double lr_potentials = 1e-3;
  double lr_model = 1e-3;  // encoder/decoder/fusion in the restore pipeline
  int n_t = 5;             // map minimization steps per outer iteration
  int n_f = 1;             // potential maximization steps per outer iteration
  int iters = 2000;
  int batch_size = 64;
  double mu = 0.1;  // weight of the transport objective in the joint restore loss
  int log_interval = 50;
  int eval_interval = 500;
  int checkpoint_interval = 500;
  // Extra map-only minimization steps run before each diagnostic snapshot so
  // the inner problem is re-solved to tolerance when gaps are certified.
  int refine_map_steps = 0;
  // Linear learning-rate decay toward lr_floor_frac * lr over the run.
  bool lr_decay = false;
  double lr_floor_frac = 0.05;
};

struct GaussianExpConfig {
  std::vector<oracle::GaussianSpec> sources;
  int samples_per_source = 4096;
};

struct DiscreteExpConfig {
  std::vector<oracle::DiscreteDistribution> sources;
  Eigen::MatrixXd grid;  // candidate support (g x d)
};

struct DiagnosticsConfig {
  int grid_points = 201;    // per axis, <= 2-D candidate grids
  int eval_samples = 4096;  // per source for gap estimation
  int w2_samples = 512;     // per source for pushforward W2 measurement
};

// Parsed experiment configuration. Built from a flat `key = value` text file
// with dotted section prefixes; every key has a default and a range check.
struct TrainConfig {
  std::string experiment = "gaussian_barycenter";  // | discrete_verify | restore_toy
  uint64_t seed = 1;
  mlot::MlotConfig mlot;
  bool weights_explicit = false;  // mlot.weights given rather than derived from counts
  std::string congruence_mode = "penalty";  // penalty | hard
  nets::ArchSpec arch;
  OptimizerConfig opt;
  GaussianExpConfig gauss;
  DiscreteExpConfig discrete;
  synth::SceneConfig scene;
  std::vector<int> eval_counts;
  uint64_t eval_seed_offset = 1000;
  std::vector<synth::DegradationSpec> ood_sources;  // OOD evaluation variants
  DiagnosticsConfig diag;
  uint64_t config_hash = 0;  // FNV over the canonical source text

  int k_count() const;
  void validate() const;
  // Fills mlot.weights from source sample counts unless explicitly set.
  void finalize();
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path);

}  // namespace baryir::train
