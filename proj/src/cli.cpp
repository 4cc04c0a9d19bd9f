#include "baryir/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "baryir/config.hpp"
#include "baryir/errors.hpp"
#include "baryir/nets.hpp"
#include "baryir/oracle.hpp"
#include "baryir/restore.hpp"
#include "baryir/rng.hpp"
#include "baryir/synth.hpp"
#include "baryir/trainer.hpp"

namespace baryir::cli {

namespace {

using nlohmann::json;

// "x y; x y; ..." -> point matrix
Eigen::MatrixXd parse_points(const std::string& text) {
  std::vector<std::vector<double>> pts;
  std::istringstream atoms(text);
  std::string atom;
  while (std::getline(atoms, atom, ';')) {
    std::istringstream comps(atom);
    std::vector<double> p;
    double v;
    while (comps >> v) p.push_back(v);
    if (!p.empty()) pts.push_back(std::move(p));
  }
  if (pts.empty()) throw InputError("expected points like \"0; 1\" or \"0 0; 1 2\"");
  Eigen::MatrixXd m(static_cast<int>(pts.size()), static_cast<int>(pts[0].size()));
  for (size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].size() != pts[0].size()) throw InputError("mixed point dimensions");
    for (size_t j = 0; j < pts[i].size(); ++j)
      m(static_cast<int>(i), static_cast<int>(j)) = pts[i][j];
  }
  return m;
}

Eigen::VectorXd parse_weights(const std::string& text, int n) {
  if (text.empty()) {
    Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n);
    w(n - 1) = 1.0 - w.head(n - 1).sum();
    return w;
  }
  std::vector<double> vals;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) vals.push_back(std::stod(tok));
  if (static_cast<int>(vals.size()) != n) throw InputError("weight count mismatch");
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w(i) = vals[static_cast<size_t>(i)];
  return w;
}

oracle::CostKind parse_cost(const std::string& s) {
  if (s == "euclidean") return oracle::CostKind::euclidean;
  if (s == "squared_euclidean" || s == "squared") return oracle::CostKind::squared_euclidean;
  throw InputError("cost must be euclidean or squared_euclidean");
}

// "m,v | m,v" 1-D gaussian list
std::vector<oracle::GaussianSpec> parse_gauss_list(const std::string& text) {
  std::vector<oracle::GaussianSpec> out;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, '|')) {
    const auto comma = part.find(',');
    if (comma == std::string::npos) throw InputError("expected mean,variance pairs");
    out.push_back(oracle::GaussianSpec::iso(std::stod(part.substr(0, comma)),
                                            std::stod(part.substr(comma + 1))));
  }
  if (out.empty()) throw InputError("no gaussian specs given");
  return out;
}

void write_metrics_files(const std::string& out_dir, const std::string& mode,
                         const restore::RestoreMetrics& m) {
  std::filesystem::create_directories(out_dir);
  std::ofstream jsonl(out_dir + "/metrics.jsonl", std::ios::app);
  json j = json::parse(m.to_json());
  j["mode"] = mode;
  jsonl << j.dump() << "\n";
  const bool fresh = !std::filesystem::exists(out_dir + "/metrics.csv") ||
                     std::filesystem::file_size(out_dir + "/metrics.csv") == 0;
  std::ofstream csv(out_dir + "/metrics.csv", std::ios::app);
  if (fresh) csv << "mode,source,psnr,orthogonality,margin,alignment\n";
  for (size_t s = 0; s < m.psnr_per_source.size(); ++s)
    csv << mode << "," << (s + 1) << "," << m.psnr_per_source[s] << "," << m.orthogonality_score
        << "," << m.contrastive_margin << "," << m.pushforward_alignment << "\n";
}

int run_oracle_ot(const std::string& mu_s, const std::string& nu_s, const std::string& mu_w,
                  const std::string& nu_w, const std::string& cost_s) {
  oracle::DiscreteDistribution mu, nu;
  mu.points = parse_points(mu_s);
  nu.points = parse_points(nu_s);
  mu.weights = parse_weights(mu_w, mu.size());
  nu.weights = parse_weights(nu_w, nu.size());
  const auto plan = oracle::solve_discrete_ot(mu, nu, parse_cost(cost_s));
  json j;
  j["cost"] = plan.cost;
  j["marginal_error"] = plan.marginal_error(mu.weights, nu.weights);
  j["iterations"] = plan.iterations;
  std::cout << j.dump() << "\n";
  return 0;
}

int run_oracle_gauss(const std::string& a_s, const std::string& b_s) {
  const auto a = parse_gauss_list(a_s).at(0);
  const auto b = parse_gauss_list(b_s).at(0);
  json j;
  j["w2_squared"] = oracle::gaussian_w2_squared(a, b);
  std::cout << j.dump() << "\n";
  return 0;
}

int run_oracle_bary(const std::string& specs_s, const std::string& weights_s,
                    const std::string& grid_s, const std::string& sources_s,
                    const std::string& cost_s) {
  if (!grid_s.empty()) {
    // fixed-support discrete barycenter
    Eigen::MatrixXd grid = parse_points(grid_s);
    std::vector<oracle::DiscreteDistribution> mus;
    std::istringstream in(sources_s);
    std::string part;
    while (std::getline(in, part, '|')) {
      oracle::DiscreteDistribution d;
      d.points = parse_points(part);
      d.weights = parse_weights("", d.size());
      mus.push_back(std::move(d));
    }
    if (mus.empty()) throw InputError("oracle bary: --sources required with --grid");
    const Eigen::VectorXd w = parse_weights(weights_s, static_cast<int>(mus.size()));
    const auto res = oracle::discrete_barycenter_lp(mus, w, grid, parse_cost(cost_s));
    json j;
    j["objective"] = res.objective;
    j["support"] = json::array();
    for (int i = 0; i < res.barycenter.size(); ++i) {
      json atom;
      atom["point"] = std::vector<double>(
          res.barycenter.points.row(i).data(),
          res.barycenter.points.row(i).data() + res.barycenter.dim());
      atom["weight"] = res.barycenter.weights(i);
      j["support"].push_back(atom);
    }
    std::cout << j.dump() << "\n";
    return 0;
  }
  const auto specs = parse_gauss_list(specs_s);
  const Eigen::VectorXd w = parse_weights(weights_s, static_cast<int>(specs.size()));
  const auto bc = oracle::gaussian_barycenter(specs, w);
  json j;
  j["mean"] = bc.mean(0);
  j["variance"] = bc.covariance(0, 0);
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"multi-source latent OT barycenter trainer and oracles"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, data_dir, mode;

  auto* gen = app.add_subcommand("gen-data", "generate a multi-source dataset");
  gen->add_option("--config", config_path)->required();
  gen->add_option("--out", out_dir)->required();

  auto* tb = app.add_subcommand("train-bary", "train the barycenter map and potentials");
  tb->add_option("--config", config_path)->required();
  tb->add_option("--out", out_dir)->required();

  auto* tr = app.add_subcommand("train-restore", "train the toy restoration pipeline");
  tr->add_option("--config", config_path)->required();
  tr->add_option("--out", out_dir)->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint_path)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--mode", mode)->required();
  ev->add_option("--out", out_dir);

  auto* dg = app.add_subcommand("diagnose", "duality-gap diagnostics for a checkpoint");
  dg->add_option("--checkpoint", checkpoint_path)->required();
  dg->add_option("--config", config_path)->required();
  dg->add_option("--out", out_dir);

  auto* orc = app.add_subcommand("oracle", "closed-form and LP reference solvers");
  orc->require_subcommand(1);
  std::string mu_s, nu_s, mu_w, nu_w, cost_s = "squared_euclidean";
  std::string a_s, b_s, specs_s, weights_s, grid_s, sources_s;
  auto* oot = orc->add_subcommand("ot", "exact discrete optimal transport");
  oot->add_option("--mu", mu_s)->required();
  oot->add_option("--nu", nu_s)->required();
  oot->add_option("--mu-weights", mu_w);
  oot->add_option("--nu-weights", nu_w);
  oot->add_option("--cost", cost_s);
  auto* oga = orc->add_subcommand("gauss", "closed-form squared W2 between 1-D gaussians");
  oga->add_option("--a", a_s)->required();
  oga->add_option("--b", b_s)->required();
  auto* oba = orc->add_subcommand("bary", "gaussian or fixed-support barycenter");
  oba->add_option("--specs", specs_s);
  oba->add_option("--weights", weights_s);
  oba->add_option("--grid", grid_s);
  oba->add_option("--sources", sources_s);
  oba->add_option("--cost", cost_s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints usage to stderr
    return 1;
  }

  try {
    if (gen->parsed()) {
      const train::TrainConfig cfg = train::parse_config_file(config_path);
      if (cfg.experiment != "restore_toy")
        throw InputError("gen-data requires a restore_toy configuration");
      synth::SceneConfig scene = cfg.scene;
      scene.seed = Rng::mix(cfg.seed, 0x5CE4E);
      synth::export_scene(synth::make_multisource_scene(scene), out_dir);
      json j;
      j["out"] = out_dir;
      j["manifest"] = out_dir + "/manifest.json";
      std::cout << j.dump() << "\n";
      return 0;
    }
    if (tb->parsed()) {
      const train::TrainConfig cfg = train::parse_config_file(config_path);
      const train::TrainResult res = train::train_barycenter(cfg, out_dir);
      if (res.aborted) {
        std::cerr << "aborted: " << res.abort_reason << "\n";
        return 2;
      }
      json j;
      j["checkpoint"] = res.checkpoint_path;
      j["final_f"] = res.log.empty() ? 0.0 : res.log.back().f;
      std::cout << j.dump() << "\n";
      return 0;
    }
    if (tr->parsed()) {
      const train::TrainConfig cfg = train::parse_config_file(config_path);
      const train::TrainResult res = train::train_restore(cfg, out_dir);
      if (res.aborted) {
        std::cerr << "aborted: " << res.abort_reason << "\n";
        return 2;
      }
      json j;
      j["checkpoint"] = res.checkpoint_path;
      if (!res.metrics.empty()) j["final_psnr_avg"] = res.metrics.back().second.psnr_avg;
      std::cout << j.dump() << "\n";
      return 0;
    }
    if (ev->parsed()) {
      const nets::ModelBundle model = nets::load_checkpoint(checkpoint_path);
      if (model.arch.aggregation != mode)
        throw InputError("eval: checkpoint was trained with aggregation '" +
                         model.arch.aggregation + "', not '" + mode + "'");
      const synth::MultisourceScene scene = synth::import_scene(data_dir);
      const restore::RestoreMetrics m = restore::evaluate_decomposition(model, scene);
      json j = json::parse(m.to_json());
      j["mode"] = mode;
      std::cout << j.dump() << "\n";
      if (!out_dir.empty()) write_metrics_files(out_dir, mode, m);
      return 0;
    }
    if (dg->parsed()) {
      const train::TrainConfig cfg = train::parse_config_file(config_path);
      const nets::ModelBundle model = nets::load_checkpoint(checkpoint_path);
      const mlot::DualityGapReport report = train::run_diagnostics(model, cfg);
      std::cout << report.to_json() << "\n";
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream out(out_dir + "/diagnostics.json");
        out << report.to_json() << "\n";
      }
      return 0;
    }
    if (oot->parsed()) return run_oracle_ot(mu_s, nu_s, mu_w, nu_w, cost_s);
    if (oga->parsed()) return run_oracle_gauss(a_s, b_s);
    if (oba->parsed()) return run_oracle_bary(specs_s, weights_s, grid_s, sources_s, cost_s);
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace baryir::cli
