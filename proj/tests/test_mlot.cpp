#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "baryir/errors.hpp"
#include "baryir/mlot.hpp"
#include "baryir/oracle.hpp"
#include "baryir/rng.hpp"

using namespace baryir;
using namespace baryir::mlot;
using baryir::ad::Tensor;

namespace {

SourceBatch make_batch(int source_id, Tensor latents) {
  SourceBatch b;
  b.source_id = source_id;
  b.latents = std::move(latents);
  return b;
}

// Tabular potential over an explicit candidate list (exact point match).
PotentialFn table_potential(std::vector<std::vector<double>> pts, std::vector<double> vals) {
  return [pts = std::move(pts), vals = std::move(vals)](const std::vector<double>& z) {
    for (size_t i = 0; i < pts.size(); ++i) {
      bool same = pts[i].size() == z.size();
      for (size_t j = 0; same && j < z.size(); ++j) same = std::fabs(pts[i][j] - z[j]) < 1e-12;
      if (same) return vals[i];
    }
    throw ContractError("table potential: point not on candidate grid");
  };
}

std::vector<std::vector<double>> grid_1d(double lo, double hi, int n) {
  std::vector<std::vector<double>> g;
  for (int i = 0; i < n; ++i) g.push_back({lo + (hi - lo) * i / (n - 1)});
  return g;
}

MlotConfig two_source_cfg(BaseCost cost, double gamma = 0.0) {
  MlotConfig cfg;
  cfg.base_cost = cost;
  cfg.gamma = gamma;
  cfg.tau = 1.0;
  cfg.weights = {0.5, 0.5};
  return cfg;
}

}  // namespace

TEST_CASE("source_specific basics and round trip") {
  Tensor z = Tensor::matrix(1, 2, {1, 2});
  Tensor zb = Tensor::matrix(1, 2, {0, 2});
  Tensor s = source_specific(z, zb);
  CHECK(s.data[0] == 1.0);
  CHECK(s.data[1] == 0.0);

  CHECK(source_specific(z, z).data == std::vector<double>{0, 0});

  Rng rng(4);
  Tensor a({5, 3}), b({5, 3});
  for (auto& v : a.data) v = rng.uniform(-2, 2);
  for (auto& v : b.data) v = rng.uniform(-2, 2);
  Tensor diff = source_specific(a, b);
  for (size_t i = 0; i < a.data.size(); ++i)
    CHECK(std::fabs(b.data[i] + diff.data[i] - a.data[i]) <= 1e-12);

  CHECK_THROWS_AS(source_specific(a, Tensor::matrix(1, 2, {0, 0})), DimensionError);
}

TEST_CASE("contrastive loss closed forms") {
  // symmetric numerator/denominator -> log 2 for any sim value and tau
  for (double c : {-0.9, 0.0, 0.4}) {
    for (double tau : {0.07, 0.5, 1.0}) {
      CHECK(contrastive_from_sims({c}, {c}, tau) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
  }
  CHECK(contrastive_from_sims({1.0}, {-1.0}, 1.0) ==
        doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));
  CHECK(contrastive_from_sims({1.0}, {0.0}, 0.01) < 1e-8);

  // vector form agrees with the similarity form
  std::vector<double> anchor{1, 0};
  const double direct = contrastive_loss(anchor, {{1, 0}}, {{-1, 0}}, 1.0);
  CHECK(direct == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-9));
}

TEST_CASE("contrastive loss monotonicity in similarities") {
  const double h = 1e-6;
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> pos{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
    std::vector<double> neg{rng.uniform(-0.9, 0.9)};
    const double tau = rng.uniform(0.05, 1.0);
    for (size_t i = 0; i < pos.size(); ++i) {
      auto up = pos, dn = pos;
      up[i] += h;
      dn[i] -= h;
      CHECK(contrastive_from_sims(up, neg, tau) < contrastive_from_sims(dn, neg, tau));
    }
    auto nup = neg;
    nup[0] += h;
    auto ndn = neg;
    ndn[0] -= h;
    CHECK(contrastive_from_sims(pos, nup, tau) > contrastive_from_sims(pos, ndn, tau));
  }
}

TEST_CASE("orthogonality loss closed forms and scale invariance") {
  CHECK(orthogonality_loss({1, 0}, {{0, 3}, {0, -0.2}}) == doctest::Approx(0.0));
  CHECK(orthogonality_loss({1, 0}, {{2, 0}}) == doctest::Approx(1.0));
  CHECK(orthogonality_loss({1, 1}, {{1, 0}, {0, 1}}) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));

  Rng rng(10);
  std::vector<double> zb{rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2)};
  std::vector<std::vector<double>> ss{{1, -1, 0.3}, {0.2, 0.4, -2}};
  const double base = orthogonality_loss(zb, ss);
  std::vector<double> zb2 = zb;
  for (auto& v : zb2) v *= 7.5;
  auto ss2 = ss;
  for (auto& s : ss2)
    for (auto& v : s) v *= 0.03;
  CHECK(orthogonality_loss(zb2, ss2) == doctest::Approx(base).epsilon(1e-9));

  CHECK_THROWS_AS(orthogonality_loss({0, 0, 0}, ss), DegenerateInputError);
}

TEST_CASE("transport cost examples") {
  MlotConfig cfg = two_source_cfg(BaseCost::euclidean, 0.0);
  BatchContext empty;
  CHECK(transport_cost({1, 2}, {1, 2}, empty, 1, cfg) == doctest::Approx(0.0));
  CHECK(transport_cost({0, 0}, {3, 4}, empty, 1, cfg) == doctest::Approx(5.0));

  // gamma = 1, tau = 1, batch built so L_ctr = log 2 and L_ort = 0,
  // |z - z_b| = 1 -> 1 + log 2
  MlotConfig cfg2 = two_source_cfg(BaseCost::euclidean, 1.0);
  cfg2.tau = 1.0;
  SourceBatch b1 = make_batch(1, Tensor::matrix(2, 2, {1, 1, /*other*/ 1, 5}));
  b1.barycenter_latents = Tensor::matrix(2, 2, {0, 1, /*other*/ 0, 5});
  b1.source_specific = source_specific(b1.latents, *b1.barycenter_latents);
  SourceBatch b2 = make_batch(2, Tensor::matrix(1, 2, {1, 9}));
  b2.barycenter_latents = Tensor::matrix(1, 2, {0, 9});
  b2.source_specific = source_specific(b2.latents, *b2.barycenter_latents);
  BatchContext ctx = BatchContext::from_batches({b1, b2});
  // anchor 0 of source 1: z = (1,1), z_b = (0,1): s' = (1,0); positive s = (1,0)
  // sim 1; negative s = (1,0) sim 1 -> log 2; z_b orthogonal to every s.
  const double c = transport_cost({1, 1}, {0, 1}, ctx, 1, cfg2, 0);
  CHECK(c == doctest::Approx(1.0 + std::log(2.0)).epsilon(1e-6));

  CHECK_THROWS_AS(transport_cost({1, 1}, {0, 1}, empty, 1, cfg2, 0), ContractError);
}

TEST_CASE("transport cost gamma=0 metric properties") {
  MlotConfig cfg = two_source_cfg(BaseCost::euclidean);
  BatchContext empty;
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    std::vector<double> b{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    std::vector<double> c{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const double ab = transport_cost(a, b, empty, 1, cfg);
    const double ba = transport_cost(b, a, empty, 1, cfg);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab <= transport_cost(a, c, empty, 1, cfg) + transport_cost(c, b, empty, 1, cfg) + 1e-12);
  }
}

TEST_CASE("dual functional trivial cases") {
  MlotConfig cfg = two_source_cfg(BaseCost::euclidean);
  std::vector<PotentialFn> zero{[](const std::vector<double>&) { return 0.0; },
                                [](const std::vector<double>&) { return 0.0; }};

  SourceBatch b1 = make_batch(1, Tensor::matrix(2, 1, {0, 1}));
  SourceBatch b2 = make_batch(2, Tensor::matrix(2, 1, {2, 3}));

  // candidates = the batches' own latents -> nearest-candidate distance 0
  std::vector<std::vector<double>> own{{0}, {1}, {2}, {3}};
  CHECK(dual_functional(zero, {b1, b2}, own, cfg) == doctest::Approx(0.0));

  // f = 0 reduces to expected min distance to the candidate set
  std::vector<std::vector<double>> grid{{0.5}, {2.5}};
  // source 1: dists 0.5, 0.5 -> mean 0.5 ; source 2: 0.5, 0.5 -> mean 0.5
  CHECK(dual_functional(zero, {b1, b2}, grid, cfg) == doctest::Approx(0.5));

  CHECK_THROWS_AS(dual_functional(zero, {b1, b2}, {}, cfg), ContractError);
}

TEST_CASE("dual functional weak duality against single-source OT") {
  // K = 1: with potentials normalized to zero mean under the target weights,
  // L(f) = E_mu[f^c] <= OT(mu, nu) by Kantorovich duality.
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + rng.uniform_int(4), m = 2 + rng.uniform_int(4);
    Eigen::MatrixXd mup(n, 1), nup(m, 1);
    for (int i = 0; i < n; ++i) mup(i, 0) = rng.uniform(-2, 2);
    for (int j = 0; j < m; ++j) nup(j, 0) = rng.uniform(-2, 2);
    auto mu = oracle::DiscreteDistribution::uniform(mup);
    auto nu = oracle::DiscreteDistribution::uniform(nup);
    auto plan = oracle::solve_discrete_ot(mu, nu, oracle::CostKind::euclidean);

    std::vector<std::vector<double>> cands;
    std::vector<double> fvals;
    for (int j = 0; j < m; ++j) {
      cands.push_back({nup(j, 0)});
      fvals.push_back(rng.uniform(-3, 3));
    }
    double mean = 0.0;
    for (int j = 0; j < m; ++j) mean += nu.weights(j) * fvals[static_cast<size_t>(j)];
    for (auto& v : fvals) v -= mean;

    MlotConfig cfg;
    cfg.base_cost = BaseCost::euclidean;
    cfg.gamma = 0.0;
    cfg.weights = {1.0};
    SourceBatch b = make_batch(1, [&] {
      Tensor t({n, 1});
      for (int i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = mup(i, 0);
      return t;
    }());
    std::vector<PotentialFn> fs{table_potential(cands, fvals)};
    CHECK(dual_functional(fs, {b}, cands, cfg) <= plan.cost + 1e-9);
  }
}

TEST_CASE("weak duality against the barycenter LP over random congruent potentials") {
  Rng rng(31);
  int trials = 0;
  while (trials < 100) {
    const int n1 = 1 + rng.uniform_int(3), n2 = 1 + rng.uniform_int(3);
    const int gn = 5 + rng.uniform_int(4);
    Eigen::MatrixXd p1(n1, 1), p2(n2, 1), grid(gn, 1);
    for (int i = 0; i < n1; ++i) p1(i, 0) = rng.uniform(-2, 2);
    for (int i = 0; i < n2; ++i) p2(i, 0) = rng.uniform(-2, 2);
    for (int j = 0; j < gn; ++j) grid(j, 0) = -2.5 + 5.0 * j / (gn - 1);
    auto mu1 = oracle::DiscreteDistribution::uniform(p1);
    auto mu2 = oracle::DiscreteDistribution::uniform(p2);
    const double lam = 0.25 + 0.5 * rng.uniform();
    Eigen::VectorXd w(2);
    w << lam, 1.0 - lam;
    const auto kind = trials % 2 ? oracle::CostKind::euclidean : oracle::CostKind::squared_euclidean;
    auto lp = oracle::discrete_barycenter_lp({mu1, mu2}, w, grid, kind);

    std::vector<std::vector<double>> cands;
    std::vector<double> f1(static_cast<size_t>(gn));
    for (int j = 0; j < gn; ++j) {
      cands.push_back({grid(j, 0)});
      f1[static_cast<size_t>(j)] = rng.uniform(-4, 4);
    }
    std::vector<double> f2(static_cast<size_t>(gn));
    for (int j = 0; j < gn; ++j) f2[static_cast<size_t>(j)] = -lam / (1.0 - lam) * f1[static_cast<size_t>(j)];

    MlotConfig cfg;
    cfg.base_cost = kind;
    cfg.gamma = 0.0;
    cfg.weights = {lam, 1.0 - lam};
    SourceBatch b1 = make_batch(1, [&] {
      Tensor t({n1, 1});
      for (int i = 0; i < n1; ++i) t.data[static_cast<size_t>(i)] = p1(i, 0);
      return t;
    }());
    b1.row_weights = std::vector<double>(mu1.weights.data(), mu1.weights.data() + n1);
    SourceBatch b2 = make_batch(2, [&] {
      Tensor t({n2, 1});
      for (int i = 0; i < n2; ++i) t.data[static_cast<size_t>(i)] = p2(i, 0);
      return t;
    }());
    b2.row_weights = std::vector<double>(mu2.weights.data(), mu2.weights.data() + n2);

    std::vector<PotentialFn> fs{table_potential(cands, f1), table_potential(cands, f2)};
    const double dual = dual_functional(fs, {b1, b2}, cands, cfg);
    CHECK(dual <= lp.objective + 1e-9);
    ++trials;
  }
}

TEST_CASE("dual functional invariant to congruent constant shifts") {
  Rng rng(41);
  MlotConfig cfg = two_source_cfg(BaseCost::squared_euclidean);
  cfg.weights = {0.3, 0.7};
  SourceBatch b1 = make_batch(1, Tensor::matrix(3, 1, {0, 0.5, 1}));
  SourceBatch b2 = make_batch(2, Tensor::matrix(2, 1, {3, 4}));
  auto cands = grid_1d(-1, 5, 13);
  std::vector<double> f1(cands.size()), f2(cands.size());
  for (auto& v : f1) v = rng.uniform(-2, 2);
  for (size_t i = 0; i < cands.size(); ++i) f2[i] = rng.uniform(-2, 2);

  std::vector<PotentialFn> fs{table_potential(cands, f1), table_potential(cands, f2)};
  const double base = dual_functional(fs, {b1, b2}, cands, cfg);

  const double c1 = 1.7, c2 = -cfg.weights[0] * c1 / cfg.weights[1];  // sum lambda c = 0
  auto f1s = f1, f2s = f2;
  for (auto& v : f1s) v += c1;
  for (auto& v : f2s) v += c2;
  std::vector<PotentialFn> fss{table_potential(cands, f1s), table_potential(cands, f2s)};
  CHECK(dual_functional(fss, {b1, b2}, cands, cfg) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("maximin objective trivial cases") {
  MlotConfig cfg = two_source_cfg(BaseCost::squared_euclidean);
  SourceBatch b1 = make_batch(1, Tensor::matrix(2, 1, {0, 1}));
  b1.barycenter_latents = b1.latents;  // identity map
  SourceBatch b2 = make_batch(2, Tensor::matrix(2, 1, {3, 4}));
  b2.barycenter_latents = b2.latents;

  std::vector<PotentialFn> zero{[](const std::vector<double>&) { return 0.0; },
                                [](const std::vector<double>&) { return 0.0; }};
  CHECK(maximin_objective(zero, {b1, b2}, cfg) == doctest::Approx(0.0));

  std::vector<PotentialFn> consts{[](const std::vector<double>&) { return 2.0; },
                                  [](const std::vector<double>&) { return -3.0; }};
  // F = -sum lambda_k c_k = -(0.5*2 + 0.5*(-3)) = 0.5
  CHECK(maximin_objective(consts, {b1, b2}, cfg) == doctest::Approx(0.5));
}

TEST_CASE("maximin dominates the brute-force dual functional") {
  Rng rng(51);
  for (int t = 0; t < 10; ++t) {
    MlotConfig cfg = two_source_cfg(BaseCost::squared_euclidean);
    SourceBatch b1 = make_batch(1, [&] {
      Tensor z({3, 1});
      for (auto& v : z.data) v = rng.uniform(-1, 1);
      return z;
    }());
    SourceBatch b2 = make_batch(2, [&] {
      Tensor z({3, 1});
      for (auto& v : z.data) v = rng.uniform(1, 3);
      return z;
    }());
    // arbitrary map: z -> 0.5 z + 0.3
    for (auto* b : {&b1, &b2}) {
      Tensor zb = b->latents;
      for (auto& v : zb.data) v = 0.5 * v + 0.3;
      b->barycenter_latents = zb;
      b->source_specific = source_specific(b->latents, zb);
    }
    auto cands = grid_1d(-2, 4, 61);
    for (const auto* b : {&b1, &b2})
      for (int i = 0; i < b->rows(); ++i)
        cands.push_back({(*b->barycenter_latents).data[static_cast<size_t>(i)]});

    std::vector<double> f1v(cands.size()), f2v(cands.size());
    for (size_t i = 0; i < cands.size(); ++i) {
      f1v[i] = 0.8 * cands[i][0] - 0.2;  // affine potentials
      f2v[i] = -f1v[i];
    }
    std::vector<PotentialFn> fs{table_potential(cands, f1v), table_potential(cands, f2v)};
    const double f_val = maximin_objective(fs, {b1, b2}, cfg);
    const double l_val = dual_functional(fs, {b1, b2}, cands, cfg);
    CHECK(f_val >= l_val - 1e-9);
  }
}

TEST_CASE("congruence penalty closed forms") {
  Tensor zb = Tensor::matrix(3, 1, {0, 1, 2});
  std::vector<double> half{0.5, 0.5};

  std::vector<PotentialFn> opp{[](const std::vector<double>& z) { return z[0] * 3 + 1; },
                               [](const std::vector<double>& z) { return -(z[0] * 3 + 1); }};
  CHECK(congruence_penalty(opp, zb, half) == doctest::Approx(0.0));

  std::vector<PotentialFn> consts{[](const std::vector<double>&) { return 1.0; },
                                  [](const std::vector<double>&) { return 2.0; }};
  CHECK(congruence_penalty(consts, zb, half) == doctest::Approx(2.25));

  // scaling all lambda_k f_k by c scales rho by c^2
  const double c = 3.7;
  std::vector<PotentialFn> scaled{[c](const std::vector<double>&) { return 1.0 * c; },
                                  [c](const std::vector<double>&) { return 2.0 * c; }};
  CHECK(congruence_penalty(scaled, zb, half) == doctest::Approx(2.25 * c * c).epsilon(1e-12));
}

TEST_CASE("duality gap E1") {
  MlotConfig cfg = two_source_cfg(BaseCost::squared_euclidean);
  SourceBatch b1 = make_batch(1, Tensor::matrix(2, 1, {0, 0.5}));
  SourceBatch b2 = make_batch(2, Tensor::matrix(2, 1, {3.5, 4}));
  auto cands = grid_1d(0, 4, 201);

  std::vector<double> f1v(cands.size()), f2v(cands.size());
  for (size_t i = 0; i < cands.size(); ++i) {
    f1v[i] = 4.0 * cands[i][0];
    f2v[i] = -f1v[i];
  }
  std::vector<PotentialFn> fs{table_potential(cands, f1v), table_potential(cands, f2v)};

  // exact grid-argmin map -> E1 = 0
  auto argmin_map = [&](const SourceBatch& b, const PotentialFn& f) {
    Tensor zb = b.latents;
    for (int i = 0; i < b.rows(); ++i) {
      double best = 1e18, arg = 0;
      for (const auto& cpt : cands) {
        const double z = b.latents.data[static_cast<size_t>(i)];
        const double v = (z - cpt[0]) * (z - cpt[0]) - f(cpt);
        if (v < best) {
          best = v;
          arg = cpt[0];
        }
      }
      zb.data[static_cast<size_t>(i)] = arg;
    }
    return zb;
  };
  SourceBatch a1 = b1, a2 = b2;
  a1.barycenter_latents = argmin_map(b1, fs[0]);
  a2.barycenter_latents = argmin_map(b2, fs[1]);
  E1Result exact = duality_gap_e1(fs, {a1, a2}, cands, cfg, 4.0 / 200);
  CHECK(exact.value == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(exact.inf_gap_bound > 0.0);

  // identity map where the argmin differs -> E1 > 0
  SourceBatch i1 = b1, i2 = b2;
  i1.barycenter_latents = b1.latents;
  i2.barycenter_latents = b2.latents;
  E1Result ident = duality_gap_e1(fs, {i1, i2}, cands, cfg, 4.0 / 200);
  CHECK(ident.value > 0.1);

  // halving the grid spacing moves the estimate by O(h)
  auto cands_fine = grid_1d(0, 4, 401);
  std::vector<double> f1f(cands_fine.size()), f2f(cands_fine.size());
  for (size_t i = 0; i < cands_fine.size(); ++i) {
    f1f[i] = 4.0 * cands_fine[i][0];
    f2f[i] = -f1f[i];
  }
  std::vector<PotentialFn> fsf{table_potential(cands_fine, f1f), table_potential(cands_fine, f2f)};
  E1Result ident_fine = duality_gap_e1(fsf, {i1, i2}, cands_fine, cfg, 4.0 / 400);
  CHECK(std::fabs(ident_fine.value - ident.value) <= 5.0 * (4.0 / 200));
}

TEST_CASE("duality gap E2 on the dirac pair instance") {
  MlotConfig cfg = two_source_cfg(BaseCost::squared_euclidean);
  SourceBatch b1 = make_batch(1, Tensor::matrix(1, 1, {0}));
  SourceBatch b2 = make_batch(2, Tensor::matrix(1, 1, {4}));
  auto cands = grid_1d(0, 4, 5);

  Eigen::MatrixXd grid(5, 1);
  grid << 0, 1, 2, 3, 4;
  Eigen::VectorXd w(2);
  w << 0.5, 0.5;
  auto d0 = oracle::DiscreteDistribution::dirac(Eigen::VectorXd::Zero(1));
  auto d4 = oracle::DiscreteDistribution::dirac(Eigen::VectorXd::Constant(1, 4.0));
  auto lp = oracle::discrete_barycenter_lp({d0, d4}, w, grid, oracle::CostKind::squared_euclidean);
  CHECK(lp.objective == doctest::Approx(4.0));

  // optimal congruent tabular potentials achieve L*: f1(g) = 4g, f2 = -f1
  std::vector<double> f1v{0, 4, 8, 12, 16}, f2v{0, -4, -8, -12, -16};
  std::vector<PotentialFn> opt{table_potential(cands, f1v), table_potential(cands, f2v)};
  const double e2_opt = duality_gap_e2(opt, {b1, b2}, lp.objective, cands, cfg);
  CHECK(std::fabs(e2_opt) <= 1e-6);

  // zero potentials: L(0) = 0 -> E2 = 4
  std::vector<PotentialFn> zero{[](const std::vector<double>&) { return 0.0; },
                                [](const std::vector<double>&) { return 0.0; }};
  CHECK(duality_gap_e2(zero, {b1, b2}, lp.objective, cands, cfg) == doctest::Approx(4.0));

  // any congruent potentials: E2 >= -1e-6
  Rng rng(61);
  for (int t = 0; t < 25; ++t) {
    std::vector<double> r1(5), r2(5);
    for (int j = 0; j < 5; ++j) {
      r1[static_cast<size_t>(j)] = rng.uniform(-6, 6);
      r2[static_cast<size_t>(j)] = -r1[static_cast<size_t>(j)];
    }
    std::vector<PotentialFn> fs{table_potential(cands, r1), table_potential(cands, r2)};
    CHECK(duality_gap_e2(fs, {b1, b2}, lp.objective, cands, cfg) >= -1e-6);
  }
}

TEST_CASE("theorem2_check verdicts") {
  DualityGapReport zero_gap;
  zero_gap.e1 = 0.0;
  zero_gap.e2 = 0.0;
  zero_gap.beta = 2.0;
  zero_gap.measured_w2_sum = 0.0;
  theorem2_check(zero_gap);
  CHECK(zero_gap.pass);
  zero_gap.measured_w2_sum = 0.01;
  theorem2_check(zero_gap);
  CHECK_FALSE(zero_gap.pass);

  DualityGapReport ok;
  ok.e1 = 0.3;
  ok.e2 = 0.2;
  ok.beta = 2.0;
  ok.measured_w2_sum = 0.4;
  theorem2_check(ok);
  CHECK(ok.pass);  // bound = 0.5
  CHECK(ok.margin > 0.0);

  DualityGapReport missing;
  CHECK_THROWS_AS(theorem2_check(missing), ContractError);

  DualityGapReport bad;
  bad.e1 = -1.0;
  CHECK_THROWS_AS(bad.validate(false), NumericalError);
}

TEST_CASE("report serializes the full field set") {
  DualityGapReport r;
  r.e1 = 0.125;
  r.e2 = 0.25;
  r.l_star = 4.0;
  r.beta = 2.0;
  r.bound = 0.375;
  r.pass = true;
  const std::string j = r.to_json();
  for (const char* key : {"e1", "e2", "l_star", "beta", "bound", "measured_w2_sum", "pass"})
    CHECK(j.find(key) != std::string::npos);
}

TEST_CASE("graph objective matches the plain evaluation") {
  Rng rng(71);
  for (double gamma : {0.0, 0.25}) {
    MlotConfig cfg = two_source_cfg(BaseCost::squared_euclidean, gamma);
    cfg.tau = 0.5;

    const int n = 4, d = 3;
    std::vector<SourceBatch> plain;
    ad::Graph g;
    std::vector<BatchVars> vars;
    std::vector<std::vector<double>> wvec(2), bvec(2);
    for (int k = 0; k < 2; ++k) {
      Tensor z({n, d}), zb({n, d});
      for (auto& v : z.data) v = rng.uniform(-2, 2);
      for (size_t i = 0; i < zb.data.size(); ++i) zb.data[i] = 0.7 * z.data[i] + 0.1 * k;
      SourceBatch b = make_batch(k + 1, z);
      b.barycenter_latents = zb;
      b.source_specific = source_specific(z, zb);
      plain.push_back(b);
      vars.push_back({k + 1, g.leaf(z), g.leaf(zb)});
      wvec[static_cast<size_t>(k)] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      bvec[static_cast<size_t>(k)] = {rng.uniform(-1, 1)};
    }
    // affine potentials f_k(z) = w_k . z + b_k in both worlds
    std::vector<PotentialFn> fs;
    for (int k = 0; k < 2; ++k) {
      auto w = wvec[static_cast<size_t>(k)];
      auto b0 = bvec[static_cast<size_t>(k)][0];
      fs.push_back([w, b0](const std::vector<double>& z) {
        double acc = b0;
        for (size_t i = 0; i < z.size(); ++i) acc += w[i] * z[i];
        return acc;
      });
    }
    PotentialGraphFn pg = [&](ad::Graph& gg, int k, ad::Var zb) {
      const auto& w = wvec[static_cast<size_t>(k - 1)];
      Tensor wt({d, 1});
      for (int i = 0; i < d; ++i) wt.data[static_cast<size_t>(i)] = w[static_cast<size_t>(i)];
      ad::Var prod = gg.matmul(zb, gg.leaf(wt));
      return gg.add_scalar(prod, bvec[static_cast<size_t>(k - 1)][0]);
    };

    MaximinGraph mg = maximin_objective_graph(g, vars, pg, cfg);
    const double graph_val = g.value(mg.value).data[0];
    const double plain_val = maximin_objective(fs, plain, cfg);
    CHECK(graph_val == doctest::Approx(plain_val).epsilon(1e-9));
  }
}

TEST_CASE("graph congruence penalty matches plain and gradients flow") {
  Rng rng(81);
  MlotConfig cfg = two_source_cfg(BaseCost::squared_euclidean);
  const int n = 5, d = 2;
  Tensor zb({n, d});
  for (auto& v : zb.data) v = rng.uniform(-2, 2);

  Tensor w1t({d, 1}), w2t({d, 1});
  for (auto& v : w1t.data) v = rng.uniform(-1, 1);
  for (auto& v : w2t.data) v = rng.uniform(-1, 1);

  ad::Graph g;
  ad::Var zbv = g.leaf(zb);
  ad::Var w1 = g.leaf(w1t), w2 = g.leaf(w2t);
  PotentialGraphFn pg = [&](ad::Graph& gg, int k, ad::Var z) {
    return gg.matmul(z, k == 1 ? w1 : w2);
  };
  ad::Var rho = congruence_penalty_graph(g, zbv, pg, cfg);

  std::vector<PotentialFn> fs{
      [&](const std::vector<double>& z) { return z[0] * w1t.data[0] + z[1] * w1t.data[1]; },
      [&](const std::vector<double>& z) { return z[0] * w2t.data[0] + z[1] * w2t.data[1]; }};
  CHECK(g.value(rho).data[0] ==
        doctest::Approx(congruence_penalty(fs, zb, cfg.weights)).epsilon(1e-12));

  g.backward(rho);
  double gnorm = 0.0;
  for (double v : g.grad(w1).data) gnorm += v * v;
  CHECK(gnorm > 0.0);
}

TEST_CASE("auxiliary losses differentiate cleanly through the graph") {
  Rng rng(91);
  const int d = 3;
  Tensor s1({3, d}), s2({2, d}), zb({3, d});
  for (auto& v : s1.data) v = rng.uniform(-2, 2);
  for (auto& v : s2.data) v = rng.uniform(-2, 2);
  for (auto& v : zb.data) v = rng.uniform(-2, 2);

  const double e_ctr = ad::grad_check(
      [&](ad::Graph& g, ad::Var x) {
        std::vector<ad::Var> ss{x, g.leaf(s2)};
        return contrastive_batch_graph(g, ss, 0, 0.3);
      },
      s1, 1e-5);
  CHECK(e_ctr < 1e-4);

  const double e_ort = ad::grad_check(
      [&](ad::Graph& g, ad::Var x) {
        std::vector<ad::Var> ss{g.leaf(s1), g.leaf(s2)};
        return orthogonality_batch_graph(g, x, ss);
      },
      zb, 1e-5);
  CHECK(e_ort < 1e-4);
}

TEST_CASE("batch and config validation") {
  MlotConfig bad;
  bad.weights = {0.5, 0.6};
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad.weights = {0.5, -0.5};
  CHECK_THROWS_AS(bad.validate(), InputError);

  SourceBatch b = make_batch(3, Tensor::matrix(1, 1, {0}));
  CHECK_THROWS_AS(b.validate(2), ContractError);

  SourceBatch s = make_batch(1, Tensor::matrix(1, 2, {1, 2}));
  s.barycenter_latents = Tensor::matrix(1, 2, {0, 0});
  s.source_specific = Tensor::matrix(1, 2, {5, 5});  // wrong residual
  CHECK_THROWS_AS(s.validate(2), ContractError);
}
