#include "baryir/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "baryir/errors.hpp"
#include "baryir/rng.hpp"

namespace baryir::train {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (...) {
    throw InputError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d != std::floor(d)) throw InputError("config: key '" + key + "' expects an integer");
  return static_cast<int>(d);
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& tok : split(v, ','))
    if (!tok.empty()) out.push_back(parse_double(key, tok));
  if (out.empty()) throw InputError("config: key '" + key + "' expects a comma list");
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (double d : parse_double_list(key, v)) {
    if (d != std::floor(d)) throw InputError("config: key '" + key + "' expects integers");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

// "m1,m2,... | m1,m2,..." per source
std::vector<Eigen::VectorXd> parse_vector_list(const std::string& key, const std::string& v) {
  std::vector<Eigen::VectorXd> out;
  for (const std::string& part : split(v, '|')) {
    const std::vector<double> comps = parse_double_list(key, part);
    Eigen::VectorXd vec(static_cast<int>(comps.size()));
    for (size_t i = 0; i < comps.size(); ++i) vec(static_cast<int>(i)) = comps[i];
    out.push_back(vec);
  }
  return out;
}

// "noise:0.1,0.2 | blur:3,5"
std::vector<synth::DegradationSpec> parse_degradations(const std::string& key,
                                                       const std::string& v) {
  std::vector<synth::DegradationSpec> out;
  for (const std::string& part : split(v, '|')) {
    if (part.empty()) continue;
    const auto colon = part.find(':');
    if (colon == std::string::npos)
      throw InputError("config: key '" + key + "' expects kind:levels entries");
    synth::DegradationSpec spec;
    spec.kind = synth::degradation_from_string(trim(part.substr(0, colon)));
    spec.levels = parse_double_list(key, part.substr(colon + 1));
    out.push_back(std::move(spec));
  }
  if (out.empty()) throw InputError("config: key '" + key + "' is empty");
  return out;
}

// "0 0:0.5; 1 1:0.5 | 4:1" -> sources split by '|', atoms by ';',
// "components:weight" with space-separated components.
std::vector<oracle::DiscreteDistribution> parse_discrete_sources(const std::string& key,
                                                                 const std::string& v) {
  std::vector<oracle::DiscreteDistribution> out;
  for (const std::string& src : split(v, '|')) {
    std::vector<std::vector<double>> pts;
    std::vector<double> ws;
    for (const std::string& atom : split(src, ';')) {
      if (atom.empty()) continue;
      const auto colon = atom.find(':');
      if (colon == std::string::npos)
        throw InputError("config: key '" + key + "' expects point:weight atoms");
      std::vector<double> comps;
      std::istringstream cs(trim(atom.substr(0, colon)));
      double x;
      while (cs >> x) comps.push_back(x);
      if (comps.empty()) throw InputError("config: key '" + key + "' has an empty point");
      pts.push_back(std::move(comps));
      ws.push_back(parse_double(key, trim(atom.substr(colon + 1))));
    }
    if (pts.empty()) throw InputError("config: key '" + key + "' has an empty source");
    oracle::DiscreteDistribution d;
    d.points = Eigen::MatrixXd(static_cast<int>(pts.size()), static_cast<int>(pts[0].size()));
    d.weights = Eigen::VectorXd(static_cast<int>(pts.size()));
    double total = 0.0;
    for (size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].size() != pts[0].size())
        throw InputError("config: key '" + key + "' has mixed point dimensions");
      for (size_t j = 0; j < pts[i].size(); ++j)
        d.points(static_cast<int>(i), static_cast<int>(j)) = pts[i][j];
      total += ws[i];
    }
    for (size_t i = 0; i < pts.size(); ++i) d.weights(static_cast<int>(i)) = ws[i] / total;
    d.weights(d.size() - 1) = 1.0 - d.weights.head(d.size() - 1).sum();
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<int> parse_hidden(const std::string& key, const std::string& v) {
  if (v == "affine" || v.empty()) return {};
  return parse_int_list(key, v);
}

void check_range(const std::string& key, double v, double lo, double hi) {
  if (v < lo || v > hi)
    throw InputError("config: key '" + key + "' = " + std::to_string(v) + " outside [" +
                     std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

}  // namespace

int TrainConfig::k_count() const {
  if (experiment == "gaussian_barycenter") return static_cast<int>(gauss.sources.size());
  if (experiment == "discrete_verify") return static_cast<int>(discrete.sources.size());
  return static_cast<int>(scene.sources.size());
}

void TrainConfig::finalize() {
  const int k = k_count();
  if (k < 1) throw InputError("config: no sources configured for experiment " + experiment);
  if (!weights_explicit) {
    if (experiment == "restore_toy") {
      mlot.weights = synth::source_weights_from_counts(scene.counts);
    } else if (experiment == "discrete_verify") {
      // Exact distributions carry their own atoms; sources weigh equally
      // unless the config says otherwise.
      mlot.weights.assign(static_cast<size_t>(k), 1.0 / k);
      mlot.weights.back() = 1.0;
      for (size_t i = 0; i + 1 < mlot.weights.size(); ++i) mlot.weights.back() -= mlot.weights[i];
    } else {
      std::vector<int> counts(static_cast<size_t>(k), gauss.samples_per_source);
      mlot.weights = synth::source_weights_from_counts(counts);
    }
  }
  arch.k_count = k;
  arch.kind = experiment == "restore_toy" ? "image" : "vector";
  if (experiment == "gaussian_barycenter" && !gauss.sources.empty())
    arch.latent_dim = static_cast<int>(gauss.sources[0].mean.size());
  if (experiment == "discrete_verify" && !discrete.sources.empty())
    arch.latent_dim = discrete.sources[0].dim();
  // The weak-duality monitor needs exact congruence.
  if (experiment == "discrete_verify") congruence_mode = "hard";
}

void TrainConfig::validate() const {
  if (experiment != "gaussian_barycenter" && experiment != "discrete_verify" &&
      experiment != "restore_toy")
    throw InputError("config: unknown experiment '" + experiment + "'");
  if (congruence_mode != "penalty" && congruence_mode != "hard")
    throw InputError("config: congruence.mode must be penalty or hard");
  mlot.validate();
  if (opt.n_t < 1 || opt.n_f < 1) throw InputError("config: opt.n_t and opt.n_f must be >= 1");
  if (opt.iters < 1) throw InputError("config: opt.iters must be >= 1");
  if (opt.batch_size < 2 && mlot.gamma > 0.0)
    throw InputError("config: batch size >= 2 per source required when gamma > 0");
  if (experiment == "restore_toy") {
    scene.validate();
    if (static_cast<int>(mlot.weights.size()) != static_cast<int>(scene.sources.size()))
      throw InputError("config: weights/sources mismatch");
  }
  if (experiment == "gaussian_barycenter") {
    if (gauss.sources.empty()) throw InputError("config: gauss.means/covs required");
    for (const auto& g : gauss.sources) g.validate();
  }
  if (experiment == "discrete_verify") {
    if (discrete.sources.empty()) throw InputError("config: discrete.sources required");
    if (discrete.grid.rows() < 2) throw InputError("config: discrete.grid needs >= 2 points");
    for (const auto& s : discrete.sources) s.validate();
  }
}

TrainConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw InputError("config: line " + std::to_string(lineno) + " has an empty key or value");
    if (kv.count(key)) throw InputError("config: duplicate key '" + key + "'");
    kv[key] = value;
  }

  TrainConfig cfg;
  cfg.config_hash = fnv1a64(text.data(), text.size());
  std::vector<Eigen::VectorXd> gauss_means;
  std::vector<Eigen::VectorXd> gauss_cov_rows;

  const auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) return "";
    std::string v = it->second;
    kv.erase(it);
    return v;
  };

  if (auto v = take("experiment"); !v.empty()) cfg.experiment = v;
  if (auto v = take("seed"); !v.empty()) cfg.seed = static_cast<uint64_t>(parse_int("seed", v));

  if (auto v = take("mlot.base_cost"); !v.empty()) {
    if (v == "euclidean")
      cfg.mlot.base_cost = mlot::BaseCost::euclidean;
    else if (v == "squared_euclidean")
      cfg.mlot.base_cost = mlot::BaseCost::squared_euclidean;
    else
      throw InputError("config: mlot.base_cost must be euclidean or squared_euclidean");
  }
  if (auto v = take("mlot.gamma"); !v.empty()) {
    cfg.mlot.gamma = parse_double("mlot.gamma", v);
    check_range("mlot.gamma", cfg.mlot.gamma, 0.0, 100.0);
  }
  if (auto v = take("mlot.tau"); !v.empty()) {
    cfg.mlot.tau = parse_double("mlot.tau", v);
    check_range("mlot.tau", cfg.mlot.tau, 1e-6, 100.0);
  }
  if (auto v = take("mlot.beta"); !v.empty()) {
    cfg.mlot.beta = parse_double("mlot.beta", v);
    check_range("mlot.beta", cfg.mlot.beta, 1e-9, 1e9);
  }
  if (auto v = take("mlot.congruence_coeff"); !v.empty()) {
    cfg.mlot.congruence_coeff = parse_double("mlot.congruence_coeff", v);
    check_range("mlot.congruence_coeff", cfg.mlot.congruence_coeff, 0.0, 1e6);
  }
  if (auto v = take("mlot.weights"); !v.empty() && v != "auto") {
    cfg.mlot.weights = parse_double_list("mlot.weights", v);
    cfg.weights_explicit = true;
  }
  if (auto v = take("congruence.mode"); !v.empty()) cfg.congruence_mode = v;

  if (auto v = take("arch.latent_dim"); !v.empty()) {
    cfg.arch.latent_dim = parse_int("arch.latent_dim", v);
    check_range("arch.latent_dim", cfg.arch.latent_dim, 1, 4096);
  }
  if (auto v = take("arch.map_hidden"); !v.empty())
    cfg.arch.map_hidden = parse_hidden("arch.map_hidden", v);
  if (auto v = take("arch.potential_hidden"); !v.empty())
    cfg.arch.potential_hidden = parse_hidden("arch.potential_hidden", v);
  if (auto v = take("arch.image_size"); !v.empty()) {
    cfg.arch.image_size = parse_int("arch.image_size", v);
    cfg.scene.image_size = cfg.arch.image_size;
  }
  if (auto v = take("arch.enc_c1"); !v.empty()) cfg.arch.enc_c1 = parse_int("arch.enc_c1", v);
  if (auto v = take("arch.enc_c2"); !v.empty()) cfg.arch.enc_c2 = parse_int("arch.enc_c2", v);

  if (auto v = take("opt.lr_map"); !v.empty()) {
    cfg.opt.lr_map = parse_double("opt.lr_map", v);
    check_range("opt.lr_map", cfg.opt.lr_map, 0.0, 10.0);
  }
  if (auto v = take("opt.lr_potentials"); !v.empty()) {
    cfg.opt.lr_potentials = parse_double("opt.lr_potentials", v);
    check_range("opt.lr_potentials", cfg.opt.lr_potentials, 0.0, 10.0);
  }
  if (auto v = take("opt.lr_model"); !v.empty()) {
    cfg.opt.lr_model = parse_double("opt.lr_model", v);
    check_range("opt.lr_model", cfg.opt.lr_model, 0.0, 10.0);
  }
  if (auto v = take("opt.n_t"); !v.empty()) cfg.opt.n_t = parse_int("opt.n_t", v);
  if (auto v = take("opt.n_f"); !v.empty()) cfg.opt.n_f = parse_int("opt.n_f", v);
  if (auto v = take("opt.iters"); !v.empty()) cfg.opt.iters = parse_int("opt.iters", v);
  if (auto v = take("opt.batch_size"); !v.empty())
    cfg.opt.batch_size = parse_int("opt.batch_size", v);
  if (auto v = take("opt.mu"); !v.empty()) {
    cfg.opt.mu = parse_double("opt.mu", v);
    check_range("opt.mu", cfg.opt.mu, 0.0, 1e6);
  }
  if (auto v = take("opt.log_interval"); !v.empty())
    cfg.opt.log_interval = parse_int("opt.log_interval", v);
  if (auto v = take("opt.eval_interval"); !v.empty())
    cfg.opt.eval_interval = parse_int("opt.eval_interval", v);
  if (auto v = take("opt.checkpoint_interval"); !v.empty())
    cfg.opt.checkpoint_interval = parse_int("opt.checkpoint_interval", v);
  if (auto v = take("opt.refine_map_steps"); !v.empty()) {
    cfg.opt.refine_map_steps = parse_int("opt.refine_map_steps", v);
    check_range("opt.refine_map_steps", cfg.opt.refine_map_steps, 0, 100000);
  }
  if (auto v = take("opt.lr_decay"); !v.empty()) {
    if (v != "none" && v != "linear") throw InputError("config: opt.lr_decay must be none or linear");
    cfg.opt.lr_decay = v == "linear";
  }
  if (auto v = take("opt.lr_floor_frac"); !v.empty()) {
    cfg.opt.lr_floor_frac = parse_double("opt.lr_floor_frac", v);
    check_range("opt.lr_floor_frac", cfg.opt.lr_floor_frac, 0.0, 1.0);
  }

  if (auto v = take("gauss.means"); !v.empty()) gauss_means = parse_vector_list("gauss.means", v);
  if (auto v = take("gauss.covs"); !v.empty()) gauss_cov_rows = parse_vector_list("gauss.covs", v);
  if (auto v = take("gauss.samples_per_source"); !v.empty()) {
    cfg.gauss.samples_per_source = parse_int("gauss.samples_per_source", v);
    check_range("gauss.samples_per_source", cfg.gauss.samples_per_source, 2, 1000000);
  }

  if (auto v = take("discrete.sources"); !v.empty())
    cfg.discrete.sources = parse_discrete_sources("discrete.sources", v);
  if (auto v = take("discrete.grid"); !v.empty()) {
    const std::vector<double> g = parse_double_list("discrete.grid", v);
    cfg.discrete.grid = Eigen::MatrixXd(static_cast<int>(g.size()), 1);
    for (size_t i = 0; i < g.size(); ++i) cfg.discrete.grid(static_cast<int>(i), 0) = g[i];
  }

  if (auto v = take("scene.image_size"); !v.empty()) {
    cfg.scene.image_size = parse_int("scene.image_size", v);
    cfg.arch.image_size = cfg.scene.image_size;
  }
  if (auto v = take("scene.pattern"); !v.empty())
    cfg.scene.pattern = synth::pattern_from_string(v);
  if (auto v = take("scene.sources"); !v.empty())
    cfg.scene.sources = parse_degradations("scene.sources", v);
  if (auto v = take("scene.counts"); !v.empty())
    cfg.scene.counts = parse_int_list("scene.counts", v);
  if (auto v = take("scene.eval_counts"); !v.empty())
    cfg.eval_counts = parse_int_list("scene.eval_counts", v);
  if (auto v = take("scene.eval_seed_offset"); !v.empty())
    cfg.eval_seed_offset = static_cast<uint64_t>(parse_int("scene.eval_seed_offset", v));
  if (auto v = take("scene.ood_sources"); !v.empty())
    cfg.ood_sources = parse_degradations("scene.ood_sources", v);

  if (auto v = take("restore.aggregation"); !v.empty()) cfg.arch.aggregation = v;
  if (auto v = take("restore.fuse"); !v.empty()) {
    if (v != "concat" && v != "add") throw InputError("config: restore.fuse must be concat or add");
    cfg.arch.fuse = v;
  }

  if (auto v = take("diag.grid_points"); !v.empty()) {
    cfg.diag.grid_points = parse_int("diag.grid_points", v);
    check_range("diag.grid_points", cfg.diag.grid_points, 3, 100000);
  }
  if (auto v = take("diag.eval_samples"); !v.empty()) {
    cfg.diag.eval_samples = parse_int("diag.eval_samples", v);
    check_range("diag.eval_samples", cfg.diag.eval_samples, 8, 1000000);
  }
  if (auto v = take("diag.w2_samples"); !v.empty()) {
    cfg.diag.w2_samples = parse_int("diag.w2_samples", v);
    check_range("diag.w2_samples", cfg.diag.w2_samples, 8, 1024);
  }

  if (!kv.empty()) throw InputError("config: unknown key '" + kv.begin()->first + "'");

  if (!gauss_means.empty()) {
    if (gauss_cov_rows.size() != gauss_means.size())
      throw InputError("config: gauss.means and gauss.covs must list the same sources");
    for (size_t k = 0; k < gauss_means.size(); ++k) {
      oracle::GaussianSpec spec;
      spec.mean = gauss_means[k];
      const int d = static_cast<int>(spec.mean.size());
      if (gauss_cov_rows[k].size() != static_cast<long>(d) * d)
        throw InputError("config: gauss.covs entry " + std::to_string(k + 1) +
                         " must be a row-major " + std::to_string(d) + "x" + std::to_string(d) +
                         " matrix");
      spec.covariance = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                 Eigen::RowMajor>>(gauss_cov_rows[k].data(), d, d);
      cfg.gauss.sources.push_back(std::move(spec));
    }
  }

  cfg.finalize();
  cfg.validate();
  if (cfg.eval_counts.empty() && cfg.experiment == "restore_toy") {
    cfg.eval_counts.assign(cfg.scene.counts.size(), 32);
  }
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace baryir::train
