#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "baryir/config.hpp"
#include "baryir/errors.hpp"
#include "baryir/trainer.hpp"

using namespace baryir;
using namespace baryir::train;

namespace {

const char* kGaussCfg = R"(
experiment = gaussian_barycenter
seed = 3
mlot.base_cost = squared_euclidean
mlot.gamma = 0
congruence.mode = hard
gauss.means = 0 | 4
gauss.covs = 1 | 1
gauss.samples_per_source = 512
arch.map_hidden = 16
arch.potential_hidden = affine
opt.lr_map = 3e-3
opt.lr_potentials = 5e-3
opt.n_t = 3
opt.n_f = 1
opt.iters = 40
opt.batch_size = 64
opt.log_interval = 10
opt.eval_interval = 1000
opt.checkpoint_interval = 1000
)";

const char* kDiscreteCfg = R"(
experiment = discrete_verify
seed = 5
mlot.base_cost = squared_euclidean
mlot.gamma = 0
discrete.sources = 0:1 | 4:1
discrete.grid = 0,1,2,3,4
arch.map_hidden = 16
arch.potential_hidden = affine
opt.lr_map = 5e-3
opt.lr_potentials = 1e-2
opt.n_t = 3
opt.n_f = 1
opt.iters = 60
opt.batch_size = 8
opt.log_interval = 10
opt.eval_interval = 30
opt.checkpoint_interval = 1000
)";

}  // namespace

TEST_CASE("config parsing defaults, overrides, and errors") {
  TrainConfig cfg = parse_config_text(kGaussCfg);
  CHECK(cfg.experiment == "gaussian_barycenter");
  CHECK(cfg.k_count() == 2);
  CHECK(cfg.mlot.weights == std::vector<double>{0.5, 0.5});  // from equal counts
  CHECK(cfg.arch.latent_dim == 1);                            // from gaussian dimension
  CHECK(cfg.arch.kind == "vector");
  CHECK(cfg.opt.n_t == 3);

  CHECK_THROWS_AS(parse_config_text("experiment = flying\n"), InputError);
  CHECK_THROWS_AS(parse_config_text("unknown.key = 1\n"), InputError);
  CHECK_THROWS_AS(parse_config_text("mlot.tau = -2\n"), InputError);
  CHECK_THROWS_AS(parse_config_text("opt.n_t\n"), InputError);
  CHECK_THROWS_AS(parse_config_text(std::string(kGaussCfg) + "seed = 9\n"), InputError);

  // lambda rule from restore counts
  TrainConfig restore = parse_config_text(R"(
experiment = restore_toy
scene.sources = noise:0.1 | haze:0.4
scene.counts = 300,100
opt.batch_size = 4
)");
  CHECK(restore.mlot.weights[0] == doctest::Approx(0.75));
  CHECK(restore.mlot.weights[1] == doctest::Approx(0.25));
  CHECK(restore.arch.kind == "image");

  // explicit weights override the counts rule
  TrainConfig overridden = parse_config_text(R"(
experiment = restore_toy
mlot.weights = 0.5,0.5
scene.sources = noise:0.1 | haze:0.4
scene.counts = 300,100
opt.batch_size = 4
)");
  CHECK(overridden.mlot.weights == std::vector<double>{0.5, 0.5});
}

TEST_CASE("adam descends a quadratic") {
  ad::Tensor x = ad::Tensor::vector({5.0, -3.0});
  Adam opt({&x}, 0.05);
  for (int i = 0; i < 400; ++i) {
    ad::Tensor g = x;  // gradient of 0.5 ||x||^2
    opt.step({g});
  }
  CHECK(std::fabs(x.data[0]) < 0.05);
  CHECK(std::fabs(x.data[1]) < 0.05);
}

TEST_CASE("gaussian training runs and is bit-reproducible") {
  TrainConfig cfg = parse_config_text(kGaussCfg);
  TrainResult a = train_barycenter(cfg, "");
  TrainResult b = train_barycenter(cfg, "");
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(std::memcmp(&a.log[i].f, &b.log[i].f, sizeof(double)) == 0);
    CHECK(a.log[i].iter == b.log[i].iter);
  }
  auto ta = a.model.all_tensors();
  auto tb = b.model.all_tensors();
  for (size_t i = 0; i < ta.size(); ++i) CHECK(ta[i]->data == tb[i]->data);

  // different seed -> different trajectory
  TrainConfig cfg2 = cfg;
  cfg2.seed = 4;
  TrainResult c = train_barycenter(cfg2, "");
  CHECK(c.log.back().f != a.log.back().f);
}

TEST_CASE("K=1 training is a fixed point at the source") {
  TrainConfig cfg = parse_config_text(R"(
experiment = gaussian_barycenter
seed = 7
mlot.base_cost = squared_euclidean
mlot.gamma = 0
congruence.mode = hard
gauss.means = 1.5
gauss.covs = 0.49
gauss.samples_per_source = 256
arch.map_hidden = 16
arch.potential_hidden = affine
opt.n_t = 2
opt.iters = 30
opt.batch_size = 32
opt.log_interval = 10
opt.eval_interval = 1000
opt.checkpoint_interval = 1000
)");
  TrainResult res = train_barycenter(cfg, "");
  CHECK_FALSE(res.aborted);
  // with K = 1 the congruent potential is identically zero and the cost term
  // keeps T at the identity: E[|T(z) - z|] stays small
  const ad::Tensor pool = make_latent_pools(cfg, 512, 0x7001)[0];
  const ad::Tensor mapped = nets::map_forward(res.model.map, pool);
  double dev = 0.0;
  for (size_t i = 0; i < pool.data.size(); ++i) dev += std::fabs(mapped.data[i] - pool.data[i]);
  CHECK(dev / static_cast<double>(pool.data.size()) < 0.05);
}

TEST_CASE("discrete training logs the weak-duality monitor") {
  TrainConfig cfg = parse_config_text(kDiscreteCfg);
  CHECK(cfg.congruence_mode == "hard");  // forced for discrete_verify
  TrainResult res = train_barycenter(cfg, "");
  CHECK_FALSE(res.aborted);
  bool saw_monitor = false;
  for (const IterRecord& r : res.log) {
    REQUIRE(r.dual_value.has_value());
    REQUIRE(r.l_star.has_value());
    CHECK(*r.dual_value <= *r.l_star + 1e-6);
    saw_monitor = true;
  }
  CHECK(saw_monitor);
  CHECK(!res.gaps.empty());
  for (const auto& [it, gap] : res.gaps) {
    CHECK(gap.e1 >= -1e-6);
    CHECK(gap.e2 >= -1e-6);
    CHECK(gap.l_star == doctest::Approx(4.0));
  }
}

TEST_CASE("divergent run aborts with exit state and last-good checkpoint") {
  // A badly scaled instance: the first potential step makes |F| blow past the
  // 1e6 divergence detector.
  TrainConfig cfg = parse_config_text(R"(
experiment = gaussian_barycenter
seed = 3
mlot.base_cost = squared_euclidean
mlot.gamma = 0
congruence.mode = hard
gauss.means = 0 | 4000000
gauss.covs = 1 | 1
gauss.samples_per_source = 128
arch.map_hidden = 16
arch.potential_hidden = affine
opt.lr_map = 1e-3
opt.lr_potentials = 1.0
opt.n_t = 1
opt.n_f = 1
opt.iters = 50
opt.batch_size = 16
opt.log_interval = 5
opt.eval_interval = 1000
opt.checkpoint_interval = 1000
)");
  const std::string dir = "/tmp/baryir_abort_test";
  std::filesystem::remove_all(dir);
  TrainResult res = train_barycenter(cfg, dir);
  CHECK(res.aborted);
  CHECK(std::filesystem::exists(dir + "/checkpoint.bin"));
  CHECK(std::filesystem::exists(dir + "/abort.json"));
  CHECK_NOTHROW(nets::load_checkpoint(dir + "/checkpoint.bin"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("tabular dual ascent approaches the LP optimum") {
  TrainConfig cfg = parse_config_text(kDiscreteCfg);
  TabularAscentResult res = maximize_dual_tabular(cfg, 1500, 0.05);
  CHECK(res.l_star == doctest::Approx(4.0));
  CHECK(res.best_dual <= res.l_star + 1e-9);  // weak duality along the path
  CHECK(res.best_dual >= 0.99 * res.l_star);  // within 1%
}

TEST_CASE("diagnostics on an untrained model against the oracle") {
  TrainConfig cfg = parse_config_text(kGaussCfg);
  nets::ModelBundle model = nets::init_model(cfg.arch, cfg.seed, cfg.config_hash);
  mlot::DualityGapReport rep = run_diagnostics(model, cfg);
  // identity map, zero potentials: E1 ~ 0, E2 ~ L* = 4, w2 ~ 4, bound ~ 4
  CHECK(rep.l_star == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(rep.e1 >= -1e-9);
  CHECK(rep.e1 < 0.01);
  CHECK(rep.e2 == doctest::Approx(4.0).epsilon(0.01));
  CHECK(*rep.measured_w2_sum == doctest::Approx(4.0).epsilon(0.01));
  CHECK(rep.pass);  // equality case within the 5% slack

  TrainConfig bad = cfg;
  bad.mlot.gamma = 0.5;
  CHECK_THROWS_AS(run_diagnostics(model, bad), InputError);
}

TEST_CASE("diagnostics rejected for restore_toy") {
  TrainConfig cfg = parse_config_text(R"(
experiment = restore_toy
scene.sources = noise:0.1 | haze:0.4
scene.counts = 8,8
scene.eval_counts = 4,4
opt.batch_size = 4
arch.image_size = 16
arch.enc_c1 = 4
arch.enc_c2 = 8
arch.latent_dim = 8
)");
  nets::ModelBundle model = nets::init_model(cfg.arch, 1, 0);
  CHECK_THROWS_AS(run_diagnostics(model, cfg), InputError);
}

TEST_CASE("restore training short run: all components move, metrics logged") {
  TrainConfig cfg = parse_config_text(R"(
experiment = restore_toy
seed = 21
mlot.gamma = 0.1
mlot.tau = 0.5
scene.image_size = 16
scene.pattern = blobs
scene.sources = noise:0.2 | haze:0.4
scene.counts = 24,24
scene.eval_counts = 6,6
arch.latent_dim = 8
arch.map_hidden = 16
arch.potential_hidden = 8
arch.enc_c1 = 4
arch.enc_c2 = 8
opt.lr_model = 2e-3
opt.lr_map = 2e-3
opt.lr_potentials = 2e-3
opt.n_t = 1
opt.n_f = 1
opt.iters = 6
opt.batch_size = 6
opt.log_interval = 2
opt.eval_interval = 6
opt.checkpoint_interval = 1000
)");
  nets::ModelBundle before = nets::init_model(cfg.arch, cfg.seed, cfg.config_hash);
  TrainResult res = train_restore(cfg, "");
  CHECK_FALSE(res.aborted);
  CHECK(!res.metrics.empty());
  res.metrics.back().second.validate();

  // every component changed after training steps
  auto pre = before.all_tensors();
  auto post = res.model.all_tensors();
  REQUIRE(pre.size() == post.size());
  int changed = 0;
  for (size_t i = 0; i < pre.size(); ++i)
    if (pre[i]->data != post[i]->data) ++changed;
  // all weight tensors move; some bias tensors may stay at rare zero-gradient
  CHECK(changed >= static_cast<int>(pre.size()) - 2);

  // deterministic repeat
  TrainResult res2 = train_restore(cfg, "");
  REQUIRE(res.log.size() == res2.log.size());
  for (size_t i = 0; i < res.log.size(); ++i) CHECK(res.log[i].f == res2.log[i].f);
}

TEST_CASE("train logger enforces record ordering and writes summaries") {
  const std::string dir = "/tmp/baryir_logger_test";
  std::filesystem::remove_all(dir);
  {
    TrainLogger log(dir);
    IterRecord r;
    r.iter = 10;
    r.f = 1.0;
    log.iter(r);
    IterRecord r2 = r;
    CHECK_THROWS_AS(log.iter(r2), ContractError);  // non-increasing iteration
    r2.iter = 20;
    r2.f = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(log.iter(r2), NumericalError);  // NaN not admitted
    r2.f = 2.0;
    log.iter(r2);
    log.write_summaries();
  }
  std::ifstream jsonl(dir + "/train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(jsonl, line)) {
    ++lines;
    CHECK(line.find("\"schema\":1") != std::string::npos);
  }
  CHECK(lines == 2);
  CHECK(std::filesystem::exists(dir + "/plotdata.csv"));
  std::filesystem::remove_all(dir);
}
