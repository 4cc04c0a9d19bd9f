#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "baryir/autodiff.hpp"
#include "baryir/errors.hpp"
#include "baryir/rng.hpp"

using namespace baryir;
using namespace baryir::ad;

TEST_CASE("matmul identity and hand product") {
  Graph g;
  Var eye = g.leaf(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var m = g.leaf(Tensor::matrix(2, 2, {3.5, -1, 2, 7}));
  Var p = g.matmul(eye, m);
  CHECK(g.value(p).data == g.value(m).data);

  Var a = g.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b = g.leaf(Tensor::matrix(2, 1, {1, 1}));
  Var c = g.matmul(a, b);
  CHECK(g.value(c).data[0] == doctest::Approx(3.0));
  CHECK(g.value(c).data[1] == doctest::Approx(7.0));
}

TEST_CASE("matmul shape mismatch reports both shapes") {
  Graph g;
  Var a = g.leaf(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
  Var b = g.leaf(Tensor::matrix(4, 5, std::vector<double>(20, 1.0)));
  try {
    g.matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  Tensor a({3, 4});
  for (auto& v : a.data) v = rng.uniform(-2, 2);
  Tensor b({4, 2});
  for (auto& v : b.data) v = rng.uniform(-2, 2);
  // grad of sum(A*B) w.r.t. A
  double err = grad_check(
      [&](Graph& g, Var x) { return g.sum(g.matmul(x, g.leaf(b))); }, a, 1e-5);
  CHECK(err < 1e-4);
  double err_b = grad_check(
      [&](Graph& g, Var x) { return g.sum(g.matmul(g.leaf(a), x)); }, b, 1e-5);
  CHECK(err_b < 1e-4);
}

TEST_CASE("cosine_sim values") {
  Graph g;
  Var u = g.leaf(Tensor::vector({2, -1, 0.5}));
  CHECK(g.value(g.cosine_sim(u, u)).data[0] == doctest::Approx(1.0));

  Var e1 = g.leaf(Tensor::vector({1, 0}));
  Var e2 = g.leaf(Tensor::vector({0, 1}));
  CHECK(g.value(g.cosine_sim(e1, e2)).data[0] == doctest::Approx(0.0));

  Var v1 = g.leaf(Tensor::vector({1, 1}));
  CHECK(g.value(g.cosine_sim(v1, e1)).data[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("cosine_sim strict mode rejects zero norm, smoothed mode does not") {
  Graph g;
  Var z = g.leaf(Tensor::vector({0, 0}));
  Var u = g.leaf(Tensor::vector({1, 0}));
  CHECK_THROWS_AS(g.cosine_sim(z, u), DegenerateInputError);
  CHECK(g.value(g.cosine_sim(z, u, Graph::kNormEps)).data[0] == doctest::Approx(0.0));
}

TEST_CASE("logsumexp values and stability") {
  Graph g;
  Var single = g.leaf(Tensor::vector({-3.25}));
  CHECK(g.value(g.logsumexp(single)).data[0] == -3.25);  // exact for n = 1

  Var two = g.leaf(Tensor::vector({0, 0}));
  CHECK(g.value(g.logsumexp(two)).data[0] == doctest::Approx(std::log(2.0)));

  Var big = g.leaf(Tensor::vector({1000, 1000}));
  CHECK(g.value(g.logsumexp(big)).data[0] == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("logsumexp empty input is a dimension error") {
  Graph g;
  CHECK_THROWS_AS(g.leaf(Tensor::vector({})), DimensionError);
}

TEST_CASE("backward basics") {
  // out = x^2 at x = 3 -> grad 6
  Graph g;
  Var x = g.leaf(Tensor::scalar(3.0));
  Var y = g.mul(x, x);
  g.backward(y);
  CHECK(g.grad(x).data[0] == doctest::Approx(6.0));

  // disconnected leaf gets zero gradient
  Graph g2;
  Var a = g2.leaf(Tensor::scalar(1.0));
  Var t = g2.leaf(Tensor::vector({5, 5}));
  Var out = g2.mul(a, a);
  g2.backward(out);
  CHECK(g2.grad(t).data[0] == 0.0);
  CHECK(g2.grad(t).data[1] == 0.0);

  // non-scalar output rejected
  Graph g3;
  Var v = g3.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(g3.backward(v), ContractError);
}

TEST_CASE("cosine_sim gradient matches finite differences") {
  Rng rng(11);
  Tensor uv({6});
  for (auto& v : uv.data) v = rng.uniform(-2, 2);
  double err = grad_check(
      [](Graph& g, Var x) {
        auto u = g.gather(x, {0, 1, 2});
        auto v = g.gather(x, {3, 4, 5});
        return g.cosine_sim(u, v);
      },
      uv, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check reference cases") {
  Rng rng(3);
  Tensor x({8});
  for (auto& v : x.data) v = rng.uniform(-2, 2);

  double e_sum = grad_check([](Graph& g, Var v) { return g.sum(v); }, x, 1e-5);
  CHECK(e_sum < 1e-10);

  Tensor xn = x;
  // keep ||x|| > 0.1
  xn.data[0] += 3.0;
  double e_norm = grad_check([](Graph& g, Var v) { return g.norm2(v); }, xn, 1e-5);
  CHECK(e_norm < 1e-4);

  double e_lse = grad_check([](Graph& g, Var v) { return g.logsumexp(v); }, x, 1e-5);
  CHECK(e_lse < 1e-4);

  CHECK_THROWS_AS(grad_check([](Graph& g, Var v) { return g.sum(v); }, x, 1e-2), ContractError);
}

// Random expression suite: composes matmul, add, multiply, relu, norm,
// cosine_sim and logsumexp on random inputs and checks reverse-mode against
// central differences.
TEST_CASE("random expression gradient suite") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(1000 + static_cast<uint64_t>(trial));
    const int n = 2 + rng.uniform_int(3);
    const int d = 2 + rng.uniform_int(3);
    Tensor x({n, d});
    for (auto& v : x.data) v = rng.uniform(-2, 2);
    Tensor w({d, d});
    for (auto& v : w.data) v = rng.uniform(-2, 2);

    auto f = [&, n, d](Graph& g, Var v) -> Var {
      Var m = g.matmul(v, g.leaf(w));
      Var r = g.relu(m);
      Var s = g.add(g.mul(r, r), m);
      Var flat = g.reshape(s, {n * d});
      Var lse = g.logsumexp(flat);
      std::vector<int64_t> idx_u, idx_v;
      for (int j = 0; j < d; ++j) {
        idx_u.push_back(j);
        idx_v.push_back(static_cast<int64_t>((n - 1)) * d + j);
      }
      Var cu = g.gather(flat, idx_u);
      Var cv = g.gather(flat, idx_v);
      Var cs = g.cosine_sim(cu, cv, Graph::kNormEps);
      Var nrm = g.norm2(flat, Graph::kNormEps);
      return g.add(g.add(lse, cs), nrm);
    };
    double err = grad_check(f, x, 1e-5);
    CHECK_MESSAGE(err <= 1e-4, "trial ", trial, " err=", err);
  }
}

TEST_CASE("forward evaluation deterministic") {
  auto run = [] {
    Rng rng(42);
    Tensor x({4, 4});
    for (auto& v : x.data) v = rng.uniform(-2, 2);
    Graph g;
    Var v = g.leaf(x);
    Var y = g.logsumexp(g.reshape(g.matmul(v, v), {16}));
    return g.value(y).data[0];
  };
  double a = run(), b = run();
  CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("cosine_sim bounded for random nonzero inputs") {
  Rng rng(99);
  for (int t = 0; t < 200; ++t) {
    const int d = 1 + rng.uniform_int(8);
    Tensor u({d}), v({d});
    for (auto& x : u.data) x = rng.uniform(-5, 5);
    for (auto& x : v.data) x = rng.uniform(-5, 5);
    double nu = 0, nv = 0;
    for (double x : u.data) nu += x * x;
    for (double x : v.data) nv += x * x;
    if (nu == 0 || nv == 0) continue;
    Graph g;
    double c = g.value(g.cosine_sim(g.leaf(u), g.leaf(v))).data[0];
    CHECK(c >= -1.0 - 1e-12);
    CHECK(c <= 1.0 + 1e-12);
  }
}

TEST_CASE("relu abs vmin gradients") {
  Rng rng(5);
  Tensor x({7});
  for (auto& v : x.data) v = rng.uniform(-2, 2);
  CHECK(grad_check([](Graph& g, Var v) { return g.sum(g.relu(v)); }, x, 1e-5) < 1e-4);
  CHECK(grad_check([](Graph& g, Var v) { return g.sum(g.abs(v)); }, x, 1e-5) < 1e-4);
  CHECK(grad_check([](Graph& g, Var v) { return g.vmin(v); }, x, 1e-5) < 1e-4);
}

TEST_CASE("normalize_rows and rows_norm gradients") {
  Rng rng(17);
  Tensor x({3, 4});
  for (auto& v : x.data) v = rng.uniform(-2, 2);
  CHECK(grad_check([](Graph& g, Var v) { return g.sum(g.normalize_rows(v, Graph::kNormEps)); }, x,
                   1e-5) < 1e-4);
  CHECK(grad_check([](Graph& g, Var v) { return g.sum(g.rows_norm(v, Graph::kNormEps)); }, x,
                   1e-5) < 1e-4);
  CHECK(grad_check([](Graph& g, Var v) { return g.sum(g.rows_sumsq(v)); }, x, 1e-5) < 1e-4);
}

TEST_CASE("concat and row-vector broadcast gradients") {
  Rng rng(23);
  Tensor x({4, 3});
  for (auto& v : x.data) v = rng.uniform(-2, 2);
  Tensor other({2, 3});
  for (auto& v : other.data) v = rng.uniform(-2, 2);
  Tensor bias({3});
  for (auto& v : bias.data) v = rng.uniform(-1, 1);

  CHECK(grad_check(
            [&](Graph& g, Var v) {
              std::vector<Var> parts{v, g.leaf(other)};
              return g.sum(g.concat_rows(parts));
            },
            x, 1e-5) < 1e-4);
  CHECK(grad_check(
            [&](Graph& g, Var v) { return g.sum(g.mul(g.concat_cols(v, v), g.concat_cols(v, v))); },
            x, 1e-5) < 1e-4);
  CHECK(grad_check([&](Graph& g, Var v) { return g.sum(g.add_row_vector(v, g.leaf(bias))); }, x,
                   1e-5) < 1e-4);
  CHECK(grad_check(
            [&](Graph& g, Var v) {
              return g.sum(g.add_row_vector(g.leaf(x), v));
            },
            bias, 1e-5) < 1e-4);
}

TEST_CASE("im2col col2im round trip gradients") {
  Rng rng(31);
  Tensor img({2, 6, 6, 3});
  for (auto& v : img.data) v = rng.uniform(-1, 1);
  // conv-like: im2col then sum of squares
  CHECK(grad_check(
            [](Graph& g, Var v) {
              Var cols = g.im2col(v, 3, 3, 2, 1);
              return g.sum(g.mul(cols, cols));
            },
            img, 1e-5) < 1e-4);
  // transposed-conv-like: col2im of a linear map of the flattened input
  Tensor cols({2 * 3 * 3, 2 * 2 * 1});
  for (auto& v : cols.data) v = rng.uniform(-1, 1);
  CHECK(grad_check(
            [](Graph& g, Var v) {
              Var img2 = g.col2im(v, 2, 3, 3, 2, 2, 2, 0, 6, 6, 1);
              return g.sum(g.mul(img2, img2));
            },
            cols, 1e-5) < 1e-4);
}

TEST_CASE("non-finite forward is reported") {
  Graph g;
  Var x = g.leaf(Tensor::scalar(1e308));
  CHECK_THROWS_AS(g.mul(x, x), NumericalError);
}
