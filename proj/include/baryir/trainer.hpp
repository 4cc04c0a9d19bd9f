#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "baryir/config.hpp"
#include "baryir/mlot.hpp"
#include "baryir/nets.hpp"
#include "baryir/restore.hpp"

namespace baryir::train {

// Adaptive moment estimation over an explicit parameter list; gradients are
// passed in the same order. Maximization callers negate their gradients.
class Adam {
 public:
  Adam(std::vector<ad::Tensor*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(const std::vector<ad::Tensor>& grads, double grad_sign = 1.0);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  const std::vector<ad::Tensor*>& params() const { return params_; }

 private:
  std::vector<ad::Tensor*> params_;
  std::vector<ad::Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct IterRecord {
  int iter = 0;
  double f = 0.0;
  double rho = 0.0;
  std::vector<double> source_cost;
  double grad_norm_theta = 0.0;
  double grad_norm_omega = 0.0;
  std::optional<double> dual_value;  // weak-duality monitor (discrete_verify)
  std::optional<double> l_star;
  double wall_ms = 0.0;
};

// JSONL + CSV sink; with an empty directory it only keeps in-memory records.
class TrainLogger {
 public:
  explicit TrainLogger(std::string out_dir);
  ~TrainLogger();
  void iter(const IterRecord& r);
  void gap(int iteration, const mlot::DualityGapReport& report);
  void metrics(int iteration, const std::string& tag, const restore::RestoreMetrics& m);
  void event(const std::string& type, const std::string& message, int iteration);
  void write_summaries();

  const std::vector<IterRecord>& records() const { return records_; }
  const std::vector<std::pair<int, mlot::DualityGapReport>>& gaps() const { return gaps_; }
  const std::vector<std::pair<int, restore::RestoreMetrics>>& metric_records() const {
    return metrics_;
  }

 private:
  std::string dir_;
  std::vector<IterRecord> records_;
  std::vector<std::pair<int, mlot::DualityGapReport>> gaps_;
  std::vector<std::pair<int, restore::RestoreMetrics>> metrics_;
  void* stream_ = nullptr;  // std::ofstream, kept opaque here
};

struct TrainResult {
  nets::ModelBundle model;
  std::vector<IterRecord> log;
  std::vector<std::pair<int, mlot::DualityGapReport>> gaps;
  std::vector<std::pair<int, restore::RestoreMetrics>> metrics;
  bool aborted = false;
  std::string abort_reason;
  std::string checkpoint_path;
};

// Maximin training of the barycenter map and potentials on the vector
// experiments (gaussian_barycenter / discrete_verify). out_dir may be empty.
TrainResult train_barycenter(const TrainConfig& cfg, const std::string& out_dir);

// Joint restoration training: L1 + mu * F minimized over encoder, decoder,
// fusion and map; potentials ascend F - rho in the interleaved max step.
TrainResult train_restore(const TrainConfig& cfg, const std::string& out_dir);

// Duality-gap diagnostics against oracle references; only defined for the
// experiments with computable L* and reference maps.
mlot::DualityGapReport run_diagnostics(const nets::ModelBundle& model, const TrainConfig& cfg);

struct TabularAscentResult {
  double best_dual = 0.0;
  double l_star = 0.0;
  int iterations = 0;
};

// Gradient ascent over hard-congruent tabular potentials on the discrete
// instance's candidate grid.
TabularAscentResult maximize_dual_tabular(const TrainConfig& cfg, int iters, double lr);

// Deterministic per-source latent pools for the vector experiments.
std::vector<ad::Tensor> make_latent_pools(const TrainConfig& cfg, int n_per_source, uint64_t salt);

// Evaluation scene variants for restore experiments.
synth::SceneConfig eval_scene_config(const TrainConfig& cfg);
synth::SceneConfig ood_scene_config(const TrainConfig& cfg);

}  // namespace baryir::train
