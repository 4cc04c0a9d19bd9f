#include "baryir/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "baryir/errors.hpp"
#include "baryir/rng.hpp"

namespace baryir::train {

namespace {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Var> flatten(const nets::MlpVars& v) {
  std::vector<Var> out;
  for (const auto& [w, b] : v.layers) {
    out.push_back(w);
    out.push_back(b);
  }
  return out;
}

std::vector<Tensor> read_grads(const ad::Graph& g, const std::vector<Var>& vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back(g.grad(v));
  return out;
}

double grad_norm(const std::vector<Tensor>& grads) {
  double acc = 0.0;
  for (const Tensor& t : grads)
    for (double v : t.data) acc += v * v;
  return std::sqrt(acc);
}

std::vector<ad::Tensor*> map_tensors(nets::ModelBundle& m) {
  std::vector<ad::Tensor*> out;
  for (nets::Layer& l : m.map.mlp.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<ad::Tensor*> potential_tensors(nets::ModelBundle& m, bool hard) {
  std::vector<ad::Tensor*> out;
  const size_t trainable = hard ? m.potentials.size() - 1 : m.potentials.size();
  for (size_t k = 0; k < trainable; ++k)
    for (nets::Layer& l : m.potentials[k].layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  return out;
}

std::vector<double> tensor_row_vec(const Tensor& t, int i) {
  const int d = t.shape[1];
  return std::vector<double>(t.data.begin() + static_cast<size_t>(i) * d,
                             t.data.begin() + static_cast<size_t>(i + 1) * d);
}

// Plain (graph-free) potential evaluators, honouring hard congruence.
std::vector<mlot::PotentialFn> plain_potentials(const nets::ModelBundle& model,
                                                const TrainConfig& cfg) {
  const int k_count = cfg.k_count();
  std::vector<mlot::PotentialFn> fs;
  const auto eval_net = [&model](int k, const std::vector<double>& z) {
    Tensor zt = Tensor::matrix(1, static_cast<int>(z.size()),
                               std::vector<double>(z.begin(), z.end()));
    return nets::mlp_forward(model.potentials[static_cast<size_t>(k)], zt).data[0];
  };
  for (int k = 0; k < k_count; ++k) {
    const bool derived = cfg.congruence_mode == "hard" && k == k_count - 1;
    if (!derived) {
      fs.push_back([&model, eval_net, k](const std::vector<double>& z) { return eval_net(k, z); });
    } else {
      const std::vector<double> lambda = cfg.mlot.weights;
      fs.push_back([eval_net, lambda, k](const std::vector<double>& z) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += lambda[static_cast<size_t>(j)] * eval_net(j, z);
        return -acc / lambda[static_cast<size_t>(k)];
      });
    }
  }
  return fs;
}

// In-graph potential application with optional hard-congruent last source.
mlot::PotentialGraphFn graph_potentials(const nets::ModelBundle& model,
                                        const std::vector<nets::MlpVars>& vars,
                                        const TrainConfig& cfg) {
  const int k_count = cfg.k_count();
  return [&model, &vars, &cfg, k_count](ad::Graph& g, int k, Var z_b) -> Var {
    const bool derived = cfg.congruence_mode == "hard" && k == k_count;
    if (!derived)
      return nets::mlp_apply(g, model.potentials[static_cast<size_t>(k - 1)],
                             vars[static_cast<size_t>(k - 1)], z_b);
    Var acc = g.scale(
        nets::mlp_apply(g, model.potentials[0], vars[0], z_b), cfg.mlot.weights[0]);
    for (int j = 2; j < k_count; ++j)
      acc = g.add(acc, g.scale(nets::mlp_apply(g, model.potentials[static_cast<size_t>(j - 1)],
                                               vars[static_cast<size_t>(j - 1)], z_b),
                               cfg.mlot.weights[static_cast<size_t>(j - 1)]));
    return g.scale(acc, -1.0 / cfg.mlot.weights[static_cast<size_t>(k_count - 1)]);
  };
}

Tensor draw_batch(const Tensor& pool, int batch_size, Rng& rng) {
  const int n = pool.shape[0], d = pool.shape[1];
  Tensor out({batch_size, d});
  for (int i = 0; i < batch_size; ++i) {
    const int idx = rng.uniform_int(n);
    std::copy(pool.data.begin() + static_cast<size_t>(idx) * d,
              pool.data.begin() + static_cast<size_t>(idx + 1) * d,
              out.data.begin() + static_cast<size_t>(i) * d);
  }
  return out;
}

struct AbortSignal {
  bool triggered = false;
  std::string reason;
};

void check_value(double v, const char* what, AbortSignal& abort) {
  if (!std::isfinite(v)) {
    abort.triggered = true;
    abort.reason = std::string(what) + " is not finite";
  } else if (std::fabs(v) > 1e6) {
    abort.triggered = true;
    abort.reason = std::string(what) + " diverged beyond 1e6";
  }
}

// Candidate set for the inner-inf brute force: a padded regular grid in <= 2
// dimensions (>= grid_points per axis) plus every mapped batch point, so the
// gap estimate is nonnegative by construction.
std::vector<std::vector<double>> build_candidates(const std::vector<mlot::SourceBatch>& batches,
                                                  int grid_points, double* spacing_out) {
  const int d = batches.front().dim();
  std::vector<double> lo(static_cast<size_t>(d), std::numeric_limits<double>::infinity());
  std::vector<double> hi(static_cast<size_t>(d), -std::numeric_limits<double>::infinity());
  for (const auto& b : batches) {
    const auto consider = [&](const Tensor& t) {
      for (int i = 0; i < t.shape[0]; ++i)
        for (int j = 0; j < d; ++j) {
          const double v = t.data[static_cast<size_t>(i) * d + j];
          lo[static_cast<size_t>(j)] = std::min(lo[static_cast<size_t>(j)], v);
          hi[static_cast<size_t>(j)] = std::max(hi[static_cast<size_t>(j)], v);
        }
    };
    consider(b.latents);
    if (b.barycenter_latents) consider(*b.barycenter_latents);
  }
  for (int j = 0; j < d; ++j) {
    const double span = std::max(hi[static_cast<size_t>(j)] - lo[static_cast<size_t>(j)], 1e-6);
    lo[static_cast<size_t>(j)] -= 0.2 * span;
    hi[static_cast<size_t>(j)] += 0.2 * span;
  }

  std::vector<std::vector<double>> cands;
  double spacing = 0.0;
  if (d == 1) {
    spacing = (hi[0] - lo[0]) / (grid_points - 1);
    for (int i = 0; i < grid_points; ++i) cands.push_back({lo[0] + spacing * i});
  } else if (d == 2) {
    spacing = std::max(hi[0] - lo[0], hi[1] - lo[1]) / (grid_points - 1);
    for (int i = 0; i < grid_points; ++i)
      for (int j = 0; j < grid_points; ++j)
        cands.push_back({lo[0] + (hi[0] - lo[0]) * i / (grid_points - 1),
                         lo[1] + (hi[1] - lo[1]) * j / (grid_points - 1)});
  }
  for (const auto& b : batches) {
    if (!b.barycenter_latents) continue;
    for (int i = 0; i < b.rows(); ++i) cands.push_back(tensor_row_vec(*b.barycenter_latents, i));
  }
  if (spacing_out) *spacing_out = spacing;
  return cands;
}

std::vector<mlot::SourceBatch> exact_discrete_batches(const TrainConfig& cfg) {
  std::vector<mlot::SourceBatch> batches;
  for (size_t k = 0; k < cfg.discrete.sources.size(); ++k) {
    const auto& src = cfg.discrete.sources[k];
    mlot::SourceBatch b;
    b.source_id = static_cast<int>(k) + 1;
    b.latents = Tensor({src.size(), src.dim()});
    for (int i = 0; i < src.size(); ++i)
      for (int j = 0; j < src.dim(); ++j)
        b.latents.data[static_cast<size_t>(i) * src.dim() + j] = src.points(i, j);
    b.row_weights = std::vector<double>(src.weights.data(), src.weights.data() + src.size());
    batches.push_back(std::move(b));
  }
  return batches;
}

void fill_mapped(const nets::ModelBundle& model, std::vector<mlot::SourceBatch>& batches) {
  for (auto& b : batches) {
    b.barycenter_latents = nets::map_forward(model.map, b.latents);
    b.source_specific = mlot::source_specific(b.latents, *b.barycenter_latents);
  }
}

}  // namespace

Adam::Adam(std::vector<ad::Tensor*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (ad::Tensor* p : params_) {
    m_.push_back(Tensor::zeros(p->shape));
    v_.push_back(Tensor::zeros(p->shape));
  }
}

void Adam::step(const std::vector<ad::Tensor>& grads, double grad_sign) {
  if (grads.size() != params_.size()) throw ContractError("adam: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t p = 0; p < params_.size(); ++p) {
    if (!params_[p]->same_shape(grads[p])) throw ContractError("adam: gradient shape mismatch");
    for (size_t i = 0; i < params_[p]->data.size(); ++i) {
      const double g = grad_sign * grads[p].data[i];
      m_[p].data[i] = beta1_ * m_[p].data[i] + (1.0 - beta1_) * g;
      v_[p].data[i] = beta2_ * v_[p].data[i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[p].data[i] / bc1;
      const double vhat = v_[p].data[i] / bc2;
      params_[p]->data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

TrainLogger::TrainLogger(std::string out_dir) : dir_(std::move(out_dir)) {
  if (!dir_.empty()) {
    std::filesystem::create_directories(dir_);
    auto* s = new std::ofstream(dir_ + "/train_log.jsonl");
    if (!*s) throw InputError("logger: cannot open " + dir_ + "/train_log.jsonl");
    stream_ = s;
  }
}

TrainLogger::~TrainLogger() { delete static_cast<std::ofstream*>(stream_); }

namespace {
void write_line(void* stream, const json& j) {
  if (!stream) return;
  auto* s = static_cast<std::ofstream*>(stream);
  (*s) << j.dump() << "\n";
  s->flush();
}
}  // namespace

void TrainLogger::iter(const IterRecord& r) {
  if (!records_.empty() && records_.back().iter >= r.iter)
    throw ContractError("logger: iteration records must be strictly ordered");
  if (!std::isfinite(r.f) || !std::isfinite(r.rho))
    throw NumericalError("logger: NaN value in training record");
  records_.push_back(r);
  json j;
  j["schema"] = 1;
  j["type"] = "iter";
  j["iter"] = r.iter;
  j["f"] = r.f;
  j["rho"] = r.rho;
  j["source_cost"] = r.source_cost;
  j["grad_norm_theta"] = r.grad_norm_theta;
  j["grad_norm_omega"] = r.grad_norm_omega;
  if (r.dual_value) j["dual_value"] = *r.dual_value;
  if (r.l_star) j["l_star"] = *r.l_star;
  j["wall_ms"] = r.wall_ms;
  write_line(stream_, j);
}

void TrainLogger::gap(int iteration, const mlot::DualityGapReport& report) {
  gaps_.push_back({iteration, report});
  json j = json::parse(report.to_json());
  j["schema"] = 1;
  j["type"] = "gap";
  j["iter"] = iteration;
  write_line(stream_, j);
}

void TrainLogger::metrics(int iteration, const std::string& tag, const restore::RestoreMetrics& m) {
  metrics_.push_back({iteration, m});
  json j = json::parse(m.to_json());
  j["type"] = "metrics";
  j["iter"] = iteration;
  j["tag"] = tag;
  write_line(stream_, j);
}

void TrainLogger::event(const std::string& type, const std::string& message, int iteration) {
  json j;
  j["schema"] = 1;
  j["type"] = type;
  j["iter"] = iteration;
  j["message"] = message;
  write_line(stream_, j);
}

void TrainLogger::write_summaries() {
  if (dir_.empty()) return;
  {
    std::ofstream csv(dir_ + "/plotdata.csv");
    csv << "iter,f,rho,e1,e2\n";
    size_t gi = 0;
    for (const IterRecord& r : records_) {
      csv << r.iter << "," << r.f << "," << r.rho << ",";
      while (gi < gaps_.size() && gaps_[gi].first < r.iter) ++gi;
      if (gi < gaps_.size() && gaps_[gi].first == r.iter)
        csv << gaps_[gi].second.e1 << "," << gaps_[gi].second.e2;
      else
        csv << ",";
      csv << "\n";
    }
  }
  if (!metrics_.empty()) {
    std::ofstream csv(dir_ + "/metrics.csv");
    csv << "iter,source,psnr,orthogonality,margin,alignment\n";
    for (const auto& [it, m] : metrics_) {
      for (size_t s = 0; s < m.psnr_per_source.size(); ++s)
        csv << it << "," << (s + 1) << "," << m.psnr_per_source[s] << ","
            << m.orthogonality_score << "," << m.contrastive_margin << ","
            << m.pushforward_alignment << "\n";
    }
  }
}

std::vector<ad::Tensor> make_latent_pools(const TrainConfig& cfg, int n_per_source,
                                          uint64_t salt) {
  std::vector<Tensor> pools;
  for (size_t k = 0; k < cfg.gauss.sources.size(); ++k)
    pools.push_back(synth::sample_gaussian_source(
        cfg.gauss.sources[k], n_per_source, Rng::mix(cfg.seed ^ salt, 0x900D, k + 1)));
  return pools;
}

synth::SceneConfig eval_scene_config(const TrainConfig& cfg) {
  synth::SceneConfig ev = cfg.scene;
  ev.counts = cfg.eval_counts;
  ev.seed = cfg.scene.seed + cfg.eval_seed_offset;
  return ev;
}

synth::SceneConfig ood_scene_config(const TrainConfig& cfg) {
  synth::SceneConfig ev = eval_scene_config(cfg);
  if (cfg.ood_sources.empty()) throw InputError("ood evaluation: scene.ood_sources not set");
  if (cfg.ood_sources.size() != ev.sources.size())
    throw InputError("ood evaluation: ood_sources must match source count");
  ev.sources = cfg.ood_sources;
  ev.seed += 17;
  return ev;
}

TrainResult train_barycenter(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.experiment == "restore_toy")
    throw ContractError("train_barycenter: use train_restore for restore_toy");
  const bool discrete = cfg.experiment == "discrete_verify";
  const bool hard = cfg.congruence_mode == "hard";
  const int k_count = cfg.k_count();

  TrainResult res;
  res.model = nets::init_model(cfg.arch, cfg.seed, cfg.config_hash);
  nets::ModelBundle& model = res.model;
  TrainLogger logger(out_dir);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<Tensor> pools;
  std::vector<mlot::SourceBatch> exact_batches;
  if (discrete) {
    exact_batches = exact_discrete_batches(cfg);
  } else {
    pools = make_latent_pools(cfg, cfg.gauss.samples_per_source, 0x7001);
  }

  // Oracle primal value for the weak-duality monitor.
  std::optional<double> l_star;
  if (discrete) {
    Eigen::VectorXd w(k_count);
    for (int k = 0; k < k_count; ++k) w(k) = cfg.mlot.weights[static_cast<size_t>(k)];
    l_star = oracle::discrete_barycenter_lp(cfg.discrete.sources, w, cfg.discrete.grid,
                                            cfg.mlot.base_cost)
                 .objective;
  }

  Adam opt_map(map_tensors(model), cfg.opt.lr_map);
  Adam opt_pot(potential_tensors(model, hard), cfg.opt.lr_potentials);

  Rng batch_rng(Rng::mix(cfg.seed, 0xBA7C));
  nets::ModelBundle last_good = model;
  AbortSignal abort;
  IterRecord rec;

  const auto draw_batches = [&]() {
    std::vector<mlot::BatchVars> out;
    return out;
  };
  (void)draw_batches;

  const auto run_step = [&](bool update_map) -> bool {
    ad::Graph g;
    nets::MlpVars map_vars = register_mlp(g, model.map.mlp);
    std::vector<nets::MlpVars> pot_vars;
    for (const auto& p : model.potentials) pot_vars.push_back(register_mlp(g, p));

    std::vector<mlot::BatchVars> bv;
    std::vector<mlot::SourceBatch>* src_batches = nullptr;
    std::vector<mlot::SourceBatch> drawn;
    if (discrete) {
      src_batches = &exact_batches;
    } else {
      for (int k = 0; k < k_count; ++k) {
        mlot::SourceBatch b;
        b.source_id = k + 1;
        b.latents = draw_batch(pools[static_cast<size_t>(k)], cfg.opt.batch_size, batch_rng);
        drawn.push_back(std::move(b));
      }
      src_batches = &drawn;
    }
    std::vector<Var> zb_list;
    for (auto& b : *src_batches) {
      Var z = g.leaf(b.latents);
      Var zb = nets::map_apply(g, model.map, map_vars, z);
      bv.push_back({b.source_id, z, zb});
      zb_list.push_back(zb);
    }
    const mlot::PotentialGraphFn pg = graph_potentials(model, pot_vars, cfg);

    try {
      mlot::MaximinGraph mg = mlot::maximin_objective_graph(g, bv, pg, cfg.mlot);
      double rho_val = 0.0;
      Var loss{-1};
      if (update_map) {
        loss = mg.value;
      } else {
        Var neg_f = g.scale(mg.value, -1.0);
        if (!hard && cfg.mlot.congruence_coeff > 0.0) {
          Var pooled = zb_list.size() == 1 ? zb_list[0] : g.concat_rows(zb_list);
          Var rho = mlot::congruence_penalty_graph(g, pooled, pg, cfg.mlot);
          rho_val = g.value(rho).data[0];
          loss = g.add(neg_f, g.scale(rho, cfg.mlot.congruence_coeff));
        } else {
          loss = neg_f;
        }
      }
      const double f_val = g.value(mg.value).data[0];
      check_value(f_val, "F", abort);
      if (abort.triggered) return false;

      g.backward(loss);
      if (update_map) {
        const auto grads = read_grads(g, flatten(map_vars));
        rec.grad_norm_theta = grad_norm(grads);
        opt_map.step(grads);
      } else {
        std::vector<Var> vars;
        const size_t trainable = hard ? pot_vars.size() - 1 : pot_vars.size();
        for (size_t k = 0; k < trainable; ++k)
          for (Var v : flatten(pot_vars[k])) vars.push_back(v);
        const auto grads = read_grads(g, vars);
        rec.grad_norm_omega = grad_norm(grads);
        opt_pot.step(grads);
        rec.rho = rho_val;
      }
      rec.f = f_val;
      rec.source_cost.clear();
      for (Var c : mg.source_cost) rec.source_cost.push_back(g.value(c).data[0]);
      return true;
    } catch (const NumericalError& e) {
      abort.triggered = true;
      abort.reason = e.what();
      return false;
    }
  };

  for (int iter = 1; iter <= cfg.opt.iters && !abort.triggered; ++iter) {
    if (cfg.opt.lr_decay) {
      const double frac = std::max(cfg.opt.lr_floor_frac,
                                   1.0 - static_cast<double>(iter - 1) / cfg.opt.iters);
      opt_map.set_lr(cfg.opt.lr_map * frac);
      opt_pot.set_lr(cfg.opt.lr_potentials * frac);
    }
    for (int t = 0; t < cfg.opt.n_t && !abort.triggered; ++t) run_step(true);
    for (int t = 0; t < cfg.opt.n_f && !abort.triggered; ++t) run_step(false);
    if (abort.triggered) break;

    if (iter % cfg.opt.log_interval == 0 || iter == cfg.opt.iters) {
      rec.iter = iter;
      rec.wall_ms = elapsed_ms(t0);
      if (discrete) {
        // Weak-duality monitor on the exact distribution.
        std::vector<mlot::SourceBatch> mon = exact_batches;
        fill_mapped(model, mon);
        std::vector<std::vector<double>> cands;
        for (int i = 0; i < cfg.discrete.grid.rows(); ++i) {
          std::vector<double> pt(static_cast<size_t>(cfg.discrete.grid.cols()));
          for (int j = 0; j < cfg.discrete.grid.cols(); ++j) pt[static_cast<size_t>(j)] = cfg.discrete.grid(i, j);
          cands.push_back(std::move(pt));
        }
        for (const auto& b : mon)
          for (int i = 0; i < b.rows(); ++i) cands.push_back(tensor_row_vec(*b.barycenter_latents, i));
        rec.dual_value = mlot::dual_functional(plain_potentials(model, cfg), mon, cands, cfg.mlot);
        rec.l_star = l_star;
      }
      logger.iter(rec);
      rec = IterRecord{};
      last_good = model;
    }
    if (iter % cfg.opt.eval_interval == 0 || iter == cfg.opt.iters) {
      for (int r = 0; r < cfg.opt.refine_map_steps && !abort.triggered; ++r) run_step(true);
      try {
        logger.gap(iter, run_diagnostics(model, cfg));
      } catch (const Error&) {
        // diagnostics unsupported for this configuration; training continues
      }
    }
    if (!out_dir.empty() &&
        (iter % cfg.opt.checkpoint_interval == 0 || iter == cfg.opt.iters)) {
      res.checkpoint_path = out_dir + "/checkpoint.bin";
      nets::save_checkpoint(model, res.checkpoint_path);
    }
  }

  if (abort.triggered) {
    res.aborted = true;
    res.abort_reason = abort.reason;
    logger.event("abort", abort.reason, static_cast<int>(logger.records().size()));
    if (!out_dir.empty()) {
      res.checkpoint_path = out_dir + "/checkpoint.bin";
      nets::save_checkpoint(last_good, res.checkpoint_path);
      std::ofstream dump(out_dir + "/abort.json");
      json j;
      j["reason"] = abort.reason;
      dump << j.dump(2) << "\n";
    }
    res.model = last_good;
  }
  logger.write_summaries();
  res.log = logger.records();
  res.gaps = logger.gaps();
  return res;
}

TrainResult train_restore(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.experiment != "restore_toy")
    throw ContractError("train_restore: experiment must be restore_toy");
  const bool hard = cfg.congruence_mode == "hard";
  const int k_count = cfg.k_count();

  synth::SceneConfig train_scene = cfg.scene;
  train_scene.seed = Rng::mix(cfg.seed, 0x5CE4E);
  const synth::MultisourceScene scene = synth::make_multisource_scene(train_scene);
  synth::SceneConfig ev_cfg = eval_scene_config(cfg);
  ev_cfg.seed = Rng::mix(cfg.seed, 0x5CE4E) + cfg.eval_seed_offset;
  const synth::MultisourceScene eval_scene = synth::make_multisource_scene(ev_cfg);

  TrainResult res;
  res.model = nets::init_model(cfg.arch, cfg.seed, cfg.config_hash);
  nets::ModelBundle& model = res.model;
  TrainLogger logger(out_dir);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<ad::Tensor*> main_params = map_tensors(model);
  if (model.encoder) {
    for (nets::ConvLayer* l : {&model.encoder->c1, &model.encoder->c2}) {
      main_params.push_back(&l->weight);
      main_params.push_back(&l->bias);
    }
    main_params.push_back(&model.encoder->proj_w);
    main_params.push_back(&model.encoder->proj_b);
  }
  if (model.decoder) {
    main_params.push_back(&model.decoder->fc_w);
    main_params.push_back(&model.decoder->fc_b);
    for (nets::ConvLayer* l : {&model.decoder->d1, &model.decoder->d2, &model.decoder->d3}) {
      main_params.push_back(&l->weight);
      main_params.push_back(&l->bias);
    }
  }
  if (model.reduction_w) {
    main_params.push_back(&*model.reduction_w);
    main_params.push_back(&*model.reduction_b);
  }
  Adam opt_main(main_params, cfg.opt.lr_model);
  Adam opt_pot(potential_tensors(model, hard), cfg.opt.lr_potentials);

  Rng batch_rng(Rng::mix(cfg.seed, 0xBA7C2));
  nets::ModelBundle last_good = model;
  AbortSignal abort;
  IterRecord rec;
  const restore::AggregationMode agg_mode = restore::aggregation_from_string(cfg.arch.aggregation);

  // Pre-training snapshot: the reference point for the alignment trajectory.
  logger.metrics(0, "init", restore::evaluate_decomposition(model, eval_scene));

  const auto run_step = [&](bool update_main) -> bool {
    ad::Graph g;
    nets::EncoderVars enc = register_encoder(g, *model.encoder);
    nets::DecoderVars dec = register_decoder(g, *model.decoder);
    nets::MlpVars map_vars = register_mlp(g, model.map.mlp);
    std::optional<std::pair<Var, Var>> red;
    if (model.reduction_w) red = {{g.leaf(*model.reduction_w), g.leaf(*model.reduction_b)}};
    std::vector<nets::MlpVars> pot_vars;
    for (const auto& p : model.potentials) pot_vars.push_back(register_mlp(g, p));

    std::vector<mlot::BatchVars> bv;
    std::vector<Var> zb_list;
    Var l1_total = g.scalar(0.0);
    try {
      for (int k = 0; k < k_count; ++k) {
        const auto& bucket = scene.by_source[static_cast<size_t>(k)];
        const int bs = std::min<int>(cfg.opt.batch_size, static_cast<int>(bucket.size()));
        Tensor deg({bs, cfg.scene.image_size, cfg.scene.image_size, 1});
        Tensor cln({bs, cfg.scene.image_size, cfg.scene.image_size, 1});
        const int hw = cfg.scene.image_size * cfg.scene.image_size;
        for (int i = 0; i < bs; ++i) {
          const int idx = batch_rng.uniform_int(static_cast<int>(bucket.size()));
          std::copy(bucket[static_cast<size_t>(idx)].degraded.data.begin(),
                    bucket[static_cast<size_t>(idx)].degraded.data.end(),
                    deg.data.begin() + static_cast<size_t>(i) * hw);
          std::copy(bucket[static_cast<size_t>(idx)].clean.data.begin(),
                    bucket[static_cast<size_t>(idx)].clean.data.end(),
                    cln.data.begin() + static_cast<size_t>(i) * hw);
        }
        Var z = nets::encoder_apply(g, *model.encoder, enc, g.leaf(deg));
        Var zb = nets::map_apply(g, model.map, map_vars, z);
        Var s = g.sub(z, zb);
        Var agg = restore::aggregate(g, zb, s, agg_mode, cfg.arch.fuse, red);
        Var pred = nets::decoder_apply(g, *model.decoder, dec, agg);
        Var l1 = restore::restoration_loss(g, pred, g.leaf(cln));
        l1_total = g.add(l1_total, g.scale(l1, cfg.mlot.weights[static_cast<size_t>(k)]));
        // The transport objective sees the latents as data: a detached copy
        // keeps F's adversarial gradient out of the encoder, whose training
        // signal is the restoration loss.
        Var zd = g.leaf(g.value(z));
        Var zbd = nets::map_apply(g, model.map, map_vars, zd);
        bv.push_back({k + 1, zd, zbd});
        zb_list.push_back(zbd);
      }
      const mlot::PotentialGraphFn pg = graph_potentials(model, pot_vars, cfg);
      mlot::MaximinGraph mg = mlot::maximin_objective_graph(g, bv, pg, cfg.mlot);
      const double f_val = g.value(mg.value).data[0];
      const double l1_val = g.value(l1_total).data[0];
      check_value(f_val, "F", abort);
      check_value(l1_val, "L1", abort);
      if (abort.triggered) return false;

      double rho_val = 0.0;
      Var loss{-1};
      if (update_main) {
        loss = g.add(l1_total, g.scale(mg.value, cfg.opt.mu));
      } else {
        Var neg = g.scale(mg.value, -cfg.opt.mu);
        if (!hard && cfg.mlot.congruence_coeff > 0.0) {
          Var pooled = zb_list.size() == 1 ? zb_list[0] : g.concat_rows(zb_list);
          Var rho = mlot::congruence_penalty_graph(g, pooled, pg, cfg.mlot);
          rho_val = g.value(rho).data[0];
          loss = g.add(neg, g.scale(rho, cfg.opt.mu * cfg.mlot.congruence_coeff));
        } else {
          loss = neg;
        }
      }
      g.backward(loss);
      if (update_main) {
        std::vector<Var> vars = flatten(map_vars);
        for (auto& pair : {enc.c1, enc.c2, enc.proj}) {
          vars.push_back(pair.first);
          vars.push_back(pair.second);
        }
        for (auto& pair : {dec.fc, dec.d1, dec.d2, dec.d3}) {
          vars.push_back(pair.first);
          vars.push_back(pair.second);
        }
        if (red) {
          vars.push_back(red->first);
          vars.push_back(red->second);
        }
        const auto grads = read_grads(g, vars);
        rec.grad_norm_theta = grad_norm(grads);
        opt_main.step(grads);
      } else {
        std::vector<Var> vars;
        const size_t trainable = hard ? pot_vars.size() - 1 : pot_vars.size();
        for (size_t k = 0; k < trainable; ++k)
          for (Var v : flatten(pot_vars[k])) vars.push_back(v);
        const auto grads = read_grads(g, vars);
        rec.grad_norm_omega = grad_norm(grads);
        opt_pot.step(grads);
        rec.rho = rho_val;
      }
      rec.f = f_val;
      rec.source_cost.clear();
      for (Var c : mg.source_cost) rec.source_cost.push_back(g.value(c).data[0]);
      return true;
    } catch (const NumericalError& e) {
      abort.triggered = true;
      abort.reason = e.what();
      return false;
    }
  };

  for (int iter = 1; iter <= cfg.opt.iters && !abort.triggered; ++iter) {
    if (cfg.opt.lr_decay) {
      const double frac = std::max(cfg.opt.lr_floor_frac,
                                   1.0 - static_cast<double>(iter - 1) / cfg.opt.iters);
      opt_main.set_lr(cfg.opt.lr_model * frac);
      opt_pot.set_lr(cfg.opt.lr_potentials * frac);
    }
    for (int t = 0; t < cfg.opt.n_t && !abort.triggered; ++t) run_step(true);
    for (int t = 0; t < cfg.opt.n_f && !abort.triggered; ++t) run_step(false);
    if (abort.triggered) break;

    if (iter % cfg.opt.log_interval == 0 || iter == cfg.opt.iters) {
      rec.iter = iter;
      rec.wall_ms = elapsed_ms(t0);
      logger.iter(rec);
      rec = IterRecord{};
      last_good = model;
    }
    if (iter % cfg.opt.eval_interval == 0 || iter == cfg.opt.iters)
      logger.metrics(iter, "eval", restore::evaluate_decomposition(model, eval_scene));
    if (!out_dir.empty() &&
        (iter % cfg.opt.checkpoint_interval == 0 || iter == cfg.opt.iters)) {
      res.checkpoint_path = out_dir + "/checkpoint.bin";
      nets::save_checkpoint(model, res.checkpoint_path);
    }
  }

  if (abort.triggered) {
    res.aborted = true;
    res.abort_reason = abort.reason;
    logger.event("abort", abort.reason, 0);
    if (!out_dir.empty()) {
      res.checkpoint_path = out_dir + "/checkpoint.bin";
      nets::save_checkpoint(last_good, res.checkpoint_path);
      std::ofstream dump(out_dir + "/abort.json");
      json j;
      j["reason"] = abort.reason;
      dump << j.dump(2) << "\n";
    }
    res.model = last_good;
  }
  logger.write_summaries();
  res.log = logger.records();
  res.metrics = logger.metric_records();
  return res;
}

mlot::DualityGapReport run_diagnostics(const nets::ModelBundle& model, const TrainConfig& cfg) {
  if (cfg.experiment == "restore_toy")
    throw InputError("diagnostics unsupported for restore_toy: no oracle reference");
  if (cfg.mlot.base_cost != mlot::BaseCost::squared_euclidean)
    throw InputError("diagnostics require the squared_euclidean base cost");
  if (cfg.mlot.gamma != 0.0)
    throw InputError("diagnostics require gamma = 0 (oracle costs are metric only)");
  const int k_count = cfg.k_count();
  Eigen::VectorXd w(k_count);
  for (int k = 0; k < k_count; ++k) w(k) = cfg.mlot.weights[static_cast<size_t>(k)];

  mlot::DualityGapReport report;
  report.beta = cfg.mlot.beta;
  const std::vector<mlot::PotentialFn> fs = plain_potentials(model, cfg);

  if (cfg.experiment == "gaussian_barycenter") {
    const auto& specs = cfg.gauss.sources;
    const int d = static_cast<int>(specs[0].mean.size());
    const oracle::GaussianSpec bary = oracle::gaussian_barycenter(specs, w);
    double l_star = 0.0;
    for (int k = 0; k < k_count; ++k)
      l_star += w(k) * oracle::gaussian_w2_squared(specs[static_cast<size_t>(k)], bary);
    report.l_star = l_star;

    // Evaluation batches: deterministic quantile points in 1-D, seeded
    // samples otherwise.
    std::vector<mlot::SourceBatch> batches;
    for (int k = 0; k < k_count; ++k) {
      mlot::SourceBatch b;
      b.source_id = k + 1;
      if (d == 1) {
        const Eigen::MatrixXd pts = oracle::gaussian_quantile_points(
            specs[static_cast<size_t>(k)].mean(0), specs[static_cast<size_t>(k)].covariance(0, 0),
            cfg.diag.eval_samples);
        b.latents = Tensor({cfg.diag.eval_samples, 1});
        for (int i = 0; i < cfg.diag.eval_samples; ++i) b.latents.data[static_cast<size_t>(i)] = pts(i, 0);
      } else {
        b.latents = synth::sample_gaussian_source(specs[static_cast<size_t>(k)],
                                                  cfg.diag.eval_samples,
                                                  Rng::mix(cfg.seed, 0xD1A6, k + 1));
      }
      batches.push_back(std::move(b));
    }
    fill_mapped(model, batches);
    double spacing = 0.0;
    const auto cands = build_candidates(batches, cfg.diag.grid_points, &spacing);
    const mlot::E1Result e1 = mlot::duality_gap_e1(fs, batches, cands, cfg.mlot, spacing);
    report.e1 = e1.value;
    report.e2 = mlot::duality_gap_e2(fs, batches, l_star, cands, cfg.mlot);

    // Pushforward W2 against the closed-form reference maps.
    double w2_sum = 0.0;
    for (int k = 0; k < k_count; ++k) {
      const auto& spec = specs[static_cast<size_t>(k)];
      Tensor base;
      if (d == 1) {
        const Eigen::MatrixXd pts =
            oracle::gaussian_quantile_points(spec.mean(0), spec.covariance(0, 0), cfg.diag.w2_samples);
        base = Tensor({cfg.diag.w2_samples, 1});
        for (int i = 0; i < cfg.diag.w2_samples; ++i) base.data[static_cast<size_t>(i)] = pts(i, 0);
      } else {
        base = synth::sample_gaussian_source(spec, cfg.diag.w2_samples,
                                             Rng::mix(cfg.seed, 0xD1A7, k + 1));
      }
      const Tensor mapped = nets::map_forward(model.map, base);
      const Eigen::MatrixXd a_k = oracle::gaussian_ot_map_matrix(spec, bary);
      Eigen::MatrixXd cloud_hat(base.shape[0], d), cloud_star(base.shape[0], d);
      for (int i = 0; i < base.shape[0]; ++i)
        for (int j = 0; j < d; ++j) {
          cloud_hat(i, j) = mapped.data[static_cast<size_t>(i) * d + j];
          double acc = bary.mean(j);
          for (int t = 0; t < d; ++t)
            acc += a_k(j, t) * (base.data[static_cast<size_t>(i) * d + t] - spec.mean(t));
          cloud_star(i, j) = acc;
        }
      const auto plan = oracle::solve_discrete_ot(oracle::DiscreteDistribution::uniform(cloud_hat),
                                                  oracle::DiscreteDistribution::uniform(cloud_star),
                                                  oracle::CostKind::squared_euclidean);
      w2_sum += w(k) * plan.cost;
    }
    report.measured_w2_sum = w2_sum;
    mlot::theorem2_check(report);
    report.validate(/*exact_mode=*/false);
    return report;
  }

  // discrete_verify: everything is exact.
  const auto lp = oracle::discrete_barycenter_lp(cfg.discrete.sources, w, cfg.discrete.grid,
                                                 cfg.mlot.base_cost);
  report.l_star = lp.objective;
  std::vector<mlot::SourceBatch> batches = exact_discrete_batches(cfg);
  fill_mapped(model, batches);
  std::vector<std::vector<double>> cands;
  for (int i = 0; i < cfg.discrete.grid.rows(); ++i) {
    std::vector<double> pt(static_cast<size_t>(cfg.discrete.grid.cols()));
    for (int j = 0; j < cfg.discrete.grid.cols(); ++j) pt[static_cast<size_t>(j)] = cfg.discrete.grid(i, j);
    cands.push_back(std::move(pt));
  }
  double spacing = 0.0;
  if (cfg.discrete.grid.cols() == 1 && cfg.discrete.grid.rows() > 1)
    spacing = std::fabs(cfg.discrete.grid(1, 0) - cfg.discrete.grid(0, 0));
  for (const auto& b : batches)
    for (int i = 0; i < b.rows(); ++i) cands.push_back(tensor_row_vec(*b.barycenter_latents, i));

  const mlot::E1Result e1 = mlot::duality_gap_e1(fs, batches, cands, cfg.mlot, spacing);
  report.e1 = e1.value;
  report.e2 = mlot::duality_gap_e2(fs, batches, lp.objective, cands, cfg.mlot);

  double w2_sum = 0.0;
  for (int k = 0; k < k_count; ++k) {
    const auto& src = cfg.discrete.sources[static_cast<size_t>(k)];
    const auto plan = oracle::solve_discrete_ot(src, lp.barycenter, cfg.mlot.base_cost);
    // The reference map exists only when no atom splits its mass.
    Eigen::MatrixXd star_pts(src.size(), src.dim());
    for (int i = 0; i < src.size(); ++i) {
      int target = -1;
      for (int j = 0; j < lp.barycenter.size(); ++j) {
        if (plan.matrix(i, j) > 1e-9) {
          if (target >= 0)
            throw ContractError("diagnostics: optimal plan splits mass; no reference map");
          target = j;
        }
      }
      star_pts.row(i) = lp.barycenter.points.row(target);
    }
    const Tensor mapped = nets::map_forward(model.map, batches[static_cast<size_t>(k)].latents);
    Eigen::MatrixXd hat_pts(src.size(), src.dim());
    for (int i = 0; i < src.size(); ++i)
      for (int j = 0; j < src.dim(); ++j)
        hat_pts(i, j) = mapped.data[static_cast<size_t>(i) * src.dim() + j];
    oracle::DiscreteDistribution hat{hat_pts, src.weights};
    oracle::DiscreteDistribution star{star_pts, src.weights};
    w2_sum += w(k) *
              oracle::solve_discrete_ot(hat, star, oracle::CostKind::squared_euclidean).cost;
  }
  report.measured_w2_sum = w2_sum;
  mlot::theorem2_check(report);
  report.validate(/*exact_mode=*/cfg.congruence_mode == "hard");
  return report;
}

TabularAscentResult maximize_dual_tabular(const TrainConfig& cfg, int iters, double lr) {
  if (cfg.discrete.sources.empty()) throw InputError("tabular ascent: discrete sources required");
  const int k_count = static_cast<int>(cfg.discrete.sources.size());
  const int grid_n = static_cast<int>(cfg.discrete.grid.rows());
  Eigen::VectorXd w(k_count);
  for (int k = 0; k < k_count; ++k) w(k) = cfg.mlot.weights[static_cast<size_t>(k)];

  TabularAscentResult res;
  res.l_star = oracle::discrete_barycenter_lp(cfg.discrete.sources, w, cfg.discrete.grid,
                                              cfg.mlot.base_cost)
                   .objective;

  // Precomputed cost rows c(x_i^k, grid).
  std::vector<std::vector<Tensor>> cost_rows(static_cast<size_t>(k_count));
  for (int k = 0; k < k_count; ++k) {
    const auto& src = cfg.discrete.sources[static_cast<size_t>(k)];
    const Eigen::MatrixXd c =
        oracle::cost_matrix(src.points, cfg.discrete.grid, cfg.mlot.base_cost);
    for (int i = 0; i < src.size(); ++i) {
      Tensor row({grid_n});
      for (int j = 0; j < grid_n; ++j) row.data[static_cast<size_t>(j)] = c(i, j);
      cost_rows[static_cast<size_t>(k)].push_back(std::move(row));
    }
  }

  // Trainable tables for the first K-1 potentials; the last is congruent.
  std::vector<Tensor> tables(static_cast<size_t>(k_count - 1), Tensor::zeros({grid_n}));
  std::vector<ad::Tensor*> params;
  for (Tensor& t : tables) params.push_back(&t);
  Adam opt(params, lr);

  res.best_dual = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < iters; ++it) {
    ad::Graph g;
    std::vector<Var> table_vars;
    for (const Tensor& t : tables) table_vars.push_back(g.leaf(t));
    Var last = g.scale(table_vars[0], w(0));
    for (int k = 1; k < k_count - 1; ++k)
      last = g.add(last, g.scale(table_vars[static_cast<size_t>(k)], w(k)));
    last = g.scale(last, -1.0 / w(k_count - 1));

    Var dual = g.scalar(0.0);
    for (int k = 0; k < k_count; ++k) {
      const Var fk = k < k_count - 1 ? table_vars[static_cast<size_t>(k)] : last;
      const auto& src = cfg.discrete.sources[static_cast<size_t>(k)];
      Var acc = g.scalar(0.0);
      for (int i = 0; i < src.size(); ++i) {
        Var cand = g.sub(g.leaf(cost_rows[static_cast<size_t>(k)][static_cast<size_t>(i)]), fk);
        acc = g.add(acc, g.scale(g.vmin(cand), src.weights(i)));
      }
      dual = g.add(dual, g.scale(acc, w(k)));
    }
    const double value = g.value(dual).data[0];
    res.best_dual = std::max(res.best_dual, value);
    g.backward(dual);
    std::vector<Tensor> grads;
    for (Var v : table_vars) grads.push_back(g.grad(v));
    opt.step(grads, -1.0);  // ascend
    ++res.iterations;
  }
  return res;
}

}  // namespace baryir::train
