#include "baryir/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "baryir/errors.hpp"

namespace baryir::ad {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ContractError(what);
}

}  // namespace

Var Graph::push(Tensor value, std::function<void(Graph&, int)> back, const char* op) {
  if (!value.all_finite())
    throw NumericalError(std::string("non-finite value produced by op '") + op + "'");
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  n.op = op;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(Tensor t) {
  if (t.numel() == 0) throw DimensionError("leaf: empty tensor");
  return push(std::move(t), nullptr, "leaf");
}

void Graph::check_same_shape(const char* op, Var a, Var b) const {
  if (!node(a).value.same_shape(node(b).value))
    throw DimensionError(std::string(op) + ": shape mismatch: " + node(a).value.shape_str() +
                         " vs " + node(b).value.shape_str());
}

const Tensor& Graph::value(Var v) const { return node(v).value; }
const Tensor& Graph::grad(Var v) const { return node(v).grad; }

Var Graph::add(Var a, Var b) {
  check_same_shape("add", a, b);
  Tensor out = node(a).value;
  const Tensor& vb = node(b).value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
  return push(std::move(out),
              [a, b](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& ga = g.node(a).grad;
                Tensor& gb = g.node(b).grad;
                for (size_t i = 0; i < go.data.size(); ++i) {
                  ga.data[i] += go.data[i];
                  gb.data[i] += go.data[i];
                }
              },
              "add");
}

Var Graph::sub(Var a, Var b) {
  check_same_shape("sub", a, b);
  Tensor out = node(a).value;
  const Tensor& vb = node(b).value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
  return push(std::move(out),
              [a, b](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& ga = g.node(a).grad;
                Tensor& gb = g.node(b).grad;
                for (size_t i = 0; i < go.data.size(); ++i) {
                  ga.data[i] += go.data[i];
                  gb.data[i] -= go.data[i];
                }
              },
              "sub");
}

Var Graph::mul(Var a, Var b) {
  check_same_shape("mul", a, b);
  Tensor out = node(a).value;
  const Tensor& vb = node(b).value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
  return push(std::move(out),
              [a, b](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& va = g.node(a).value;
                const Tensor& vb2 = g.node(b).value;
                Tensor& ga = g.node(a).grad;
                Tensor& gb = g.node(b).grad;
                for (size_t i = 0; i < go.data.size(); ++i) {
                  ga.data[i] += go.data[i] * vb2.data[i];
                  gb.data[i] += go.data[i] * va.data[i];
                }
              },
              "mul");
}

Var Graph::scale(Var a, double c) {
  Tensor out = node(a).value;
  for (double& x : out.data) x *= c;
  return push(std::move(out),
              [a, c](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& ga = g.node(a).grad;
                for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += c * go.data[i];
              },
              "scale");
}

Var Graph::add_scalar(Var a, double c) {
  Tensor out = node(a).value;
  for (double& x : out.data) x += c;
  return push(std::move(out),
              [a](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& ga = g.node(a).grad;
                for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i];
              },
              "add_scalar");
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  if (va.ndim() != 2 || vb.ndim() != 2 || va.cols() != vb.rows())
    throw DimensionError("matmul: incompatible shapes: " + va.shape_str() + " vs " +
                         vb.shape_str());
  const int n = va.rows(), k = va.cols(), m = vb.cols();
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    const double* arow = &va.data[static_cast<size_t>(i) * k];
    double* orow = &out.data[static_cast<size_t>(i) * m];
    for (int kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      if (aik == 0.0) continue;
      const double* brow = &vb.data[static_cast<size_t>(kk) * m];
      for (int j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  return push(std::move(out),
              [a, b, n, k, m](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& va2 = g.node(a).value;
                const Tensor& vb2 = g.node(b).value;
                Tensor& ga = g.node(a).grad;
                Tensor& gb = g.node(b).grad;
                // dA = dC * B^T
                for (int i = 0; i < n; ++i) {
                  const double* grow = &go.data[static_cast<size_t>(i) * m];
                  double* garow = &ga.data[static_cast<size_t>(i) * k];
                  for (int kk = 0; kk < k; ++kk) {
                    const double* brow = &vb2.data[static_cast<size_t>(kk) * m];
                    double acc = 0.0;
                    for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                    garow[kk] += acc;
                  }
                }
                // dB = A^T * dC
                for (int kk = 0; kk < k; ++kk) {
                  double* gbrow = &gb.data[static_cast<size_t>(kk) * m];
                  for (int i = 0; i < n; ++i) {
                    const double aik = va2.data[static_cast<size_t>(i) * k + kk];
                    if (aik == 0.0) continue;
                    const double* grow = &go.data[static_cast<size_t>(i) * m];
                    for (int j = 0; j < m; ++j) gbrow[j] += aik * grow[j];
                  }
                }
              },
              "matmul");
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  if (va.ndim() != 2 || vb.ndim() != 2 || va.cols() != vb.cols())
    throw DimensionError("matmul_nt: incompatible shapes: " + va.shape_str() + " vs " +
                         vb.shape_str());
  const int n = va.rows(), k = va.cols(), m = vb.rows();
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    const double* arow = &va.data[static_cast<size_t>(i) * k];
    double* orow = &out.data[static_cast<size_t>(i) * m];
    for (int j = 0; j < m; ++j) {
      const double* brow = &vb.data[static_cast<size_t>(j) * k];
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      orow[j] = acc;
    }
  }
  return push(std::move(out),
              [a, b, n, k, m](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& va2 = g.node(a).value;
                const Tensor& vb2 = g.node(b).value;
                Tensor& ga = g.node(a).grad;
                Tensor& gb = g.node(b).grad;
                // dA = dC * B ; dB = dC^T * A
                for (int i = 0; i < n; ++i) {
                  const double* grow = &go.data[static_cast<size_t>(i) * m];
                  double* garow = &ga.data[static_cast<size_t>(i) * k];
                  const double* arow = &va2.data[static_cast<size_t>(i) * k];
                  for (int j = 0; j < m; ++j) {
                    const double gij = grow[j];
                    if (gij == 0.0) continue;
                    const double* brow = &vb2.data[static_cast<size_t>(j) * k];
                    double* gbrow = &gb.data[static_cast<size_t>(j) * k];
                    for (int kk = 0; kk < k; ++kk) {
                      garow[kk] += gij * brow[kk];
                      gbrow[kk] += gij * arow[kk];
                    }
                  }
                }
              },
              "matmul_nt");
}

Var Graph::relu(Var a) {
  Tensor out = node(a).value;
  for (double& x : out.data) x = x > 0.0 ? x : 0.0;
  return push(std::move(out),
              [a](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& va = g.node(a).value;
                Tensor& ga = g.node(a).grad;
                for (size_t i = 0; i < go.data.size(); ++i)
                  if (va.data[i] > 0.0) ga.data[i] += go.data[i];
              },
              "relu");
}

Var Graph::abs(Var a) {
  Tensor out = node(a).value;
  for (double& x : out.data) x = std::fabs(x);
  return push(std::move(out),
              [a](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& va = g.node(a).value;
                Tensor& ga = g.node(a).grad;
                // Subgradient 0 at exact zero.
                for (size_t i = 0; i < go.data.size(); ++i) {
                  if (va.data[i] > 0.0)
                    ga.data[i] += go.data[i];
                  else if (va.data[i] < 0.0)
                    ga.data[i] -= go.data[i];
                }
              },
              "abs");
}

Var Graph::sum(Var a) {
  double acc = 0.0;
  for (double x : node(a).value.data) acc += x;
  return push(Tensor::scalar(acc),
              [a](Graph& g, int self) {
                const double go = g.nodes_[self].grad.data[0];
                Tensor& ga = g.node(a).grad;
                for (double& x : ga.data) x += go;
              },
              "sum");
}

Var Graph::mean(Var a) {
  const double inv = 1.0 / static_cast<double>(node(a).value.numel());
  double acc = 0.0;
  for (double x : node(a).value.data) acc += x;
  return push(Tensor::scalar(acc * inv),
              [a, inv](Graph& g, int self) {
                const double go = g.nodes_[self].grad.data[0] * inv;
                Tensor& ga = g.node(a).grad;
                for (double& x : ga.data) x += go;
              },
              "mean");
}

Var Graph::dot(Var a, Var b) {
  check_same_shape("dot", a, b);
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  double acc = 0.0;
  for (size_t i = 0; i < va.data.size(); ++i) acc += va.data[i] * vb.data[i];
  return push(Tensor::scalar(acc),
              [a, b](Graph& g, int self) {
                const double go = g.nodes_[self].grad.data[0];
                const Tensor& va2 = g.node(a).value;
                const Tensor& vb2 = g.node(b).value;
                Tensor& ga = g.node(a).grad;
                Tensor& gb = g.node(b).grad;
                for (size_t i = 0; i < va2.data.size(); ++i) {
                  ga.data[i] += go * vb2.data[i];
                  gb.data[i] += go * va2.data[i];
                }
              },
              "dot");
}

Var Graph::norm2(Var a, double eps) {
  const Tensor& va = node(a).value;
  double ss = eps;
  for (double x : va.data) ss += x * x;
  if (eps == 0.0 && ss == 0.0) throw DegenerateInputError("norm2: zero-norm input in strict mode");
  const double nrm = std::sqrt(ss);
  return push(Tensor::scalar(nrm),
              [a, nrm](Graph& g, int self) {
                const double go = g.nodes_[self].grad.data[0];
                const Tensor& va2 = g.node(a).value;
                Tensor& ga = g.node(a).grad;
                if (nrm == 0.0) return;  // smoothed norm at exact zero: gradient 0
                const double s = go / nrm;
                for (size_t i = 0; i < va2.data.size(); ++i) ga.data[i] += s * va2.data[i];
              },
              "norm2");
}

Var Graph::cosine_sim(Var u, Var v, double eps) {
  check_same_shape("cosine_sim", u, v);
  const Tensor& vu = node(u).value;
  const Tensor& vv = node(v).value;
  double uu = eps, vv2 = eps, uv = 0.0;
  for (size_t i = 0; i < vu.data.size(); ++i) {
    uu += vu.data[i] * vu.data[i];
    vv2 += vv.data[i] * vv.data[i];
    uv += vu.data[i] * vv.data[i];
  }
  if (uu == 0.0 || vv2 == 0.0)
    throw DegenerateInputError("cosine_sim: zero-norm input in strict mode");
  const double nu = std::sqrt(uu), nv = std::sqrt(vv2);
  const double cosv = uv / (nu * nv);
  return push(Tensor::scalar(cosv),
              [u, v, nu, nv, cosv](Graph& g, int self) {
                const double go = g.nodes_[self].grad.data[0];
                const Tensor& vu2 = g.node(u).value;
                const Tensor& vv3 = g.node(v).value;
                Tensor& gu = g.node(u).grad;
                Tensor& gv = g.node(v).grad;
                // d cos / du = v/(|u||v|) - cos * u/|u|^2  (norms include eps)
                for (size_t i = 0; i < vu2.data.size(); ++i) {
                  gu.data[i] += go * (vv3.data[i] / (nu * nv) - cosv * vu2.data[i] / (nu * nu));
                  gv.data[i] += go * (vu2.data[i] / (nu * nv) - cosv * vv3.data[i] / (nv * nv));
                }
              },
              "cosine_sim");
}

Var Graph::logsumexp(Var x) {
  const Tensor& vx = node(x).value;
  if (vx.numel() < 1) throw DimensionError("logsumexp: empty input");
  double mx = vx.data[0];
  for (double v : vx.data) mx = std::max(mx, v);
  if (vx.numel() == 1) {
    // Exact pass-through for the single-element case.
    return push(Tensor::scalar(vx.data[0]),
                [x](Graph& g, int self) {
                  g.node(x).grad.data[0] += g.nodes_[self].grad.data[0];
                },
                "logsumexp");
  }
  double acc = 0.0;
  for (double v : vx.data) acc += std::exp(v - mx);
  const double lse = mx + std::log(acc);
  return push(Tensor::scalar(lse),
              [x, lse](Graph& g, int self) {
                const double go = g.nodes_[self].grad.data[0];
                const Tensor& vx2 = g.node(x).value;
                Tensor& gx = g.node(x).grad;
                for (size_t i = 0; i < vx2.data.size(); ++i)
                  gx.data[i] += go * std::exp(vx2.data[i] - lse);
              },
              "logsumexp");
}

Var Graph::normalize_rows(Var x, double eps) {
  const Tensor& vx = node(x).value;
  if (vx.ndim() != 2) throw DimensionError("normalize_rows: expected matrix, got " + vx.shape_str());
  const int n = vx.rows(), d = vx.cols();
  Tensor out({n, d});
  std::vector<double> norms(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double ss = eps;
    const double* row = &vx.data[static_cast<size_t>(i) * d];
    for (int j = 0; j < d; ++j) ss += row[j] * row[j];
    if (ss == 0.0) throw DegenerateInputError("normalize_rows: zero-norm row in strict mode");
    const double nrm = std::sqrt(ss);
    norms[static_cast<size_t>(i)] = nrm;
    double* orow = &out.data[static_cast<size_t>(i) * d];
    for (int j = 0; j < d; ++j) orow[j] = row[j] / nrm;
  }
  return push(std::move(out),
              [x, n, d, norms = std::move(norms)](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& vx2 = g.node(x).value;
                Tensor& gx = g.node(x).grad;
                // y = x/s with s = sqrt(|x|^2 + eps):
                // dx = dy/s - x * (dy . x) / s^3
                for (int i = 0; i < n; ++i) {
                  const double s = norms[static_cast<size_t>(i)];
                  const double* row = &vx2.data[static_cast<size_t>(i) * d];
                  const double* grow = &go.data[static_cast<size_t>(i) * d];
                  double* gxrow = &gx.data[static_cast<size_t>(i) * d];
                  double dotgx = 0.0;
                  for (int j = 0; j < d; ++j) dotgx += grow[j] * row[j];
                  const double c = dotgx / (s * s * s);
                  for (int j = 0; j < d; ++j) gxrow[j] += grow[j] / s - row[j] * c;
                }
              },
              "normalize_rows");
}

Var Graph::rows_norm(Var x, double eps) {
  const Tensor& vx = node(x).value;
  if (vx.ndim() != 2) throw DimensionError("rows_norm: expected matrix, got " + vx.shape_str());
  const int n = vx.rows(), d = vx.cols();
  Tensor out({n, 1});
  for (int i = 0; i < n; ++i) {
    double ss = eps;
    const double* row = &vx.data[static_cast<size_t>(i) * d];
    for (int j = 0; j < d; ++j) ss += row[j] * row[j];
    if (eps == 0.0 && ss == 0.0)
      throw DegenerateInputError("rows_norm: zero-norm row in strict mode");
    out.data[static_cast<size_t>(i)] = std::sqrt(ss);
  }
  return push(std::move(out),
              [x, n, d](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& vo = g.nodes_[self].value;
                const Tensor& vx2 = g.node(x).value;
                Tensor& gx = g.node(x).grad;
                for (int i = 0; i < n; ++i) {
                  const double nrm = vo.data[static_cast<size_t>(i)];
                  if (nrm == 0.0) continue;
                  const double s = go.data[static_cast<size_t>(i)] / nrm;
                  const double* row = &vx2.data[static_cast<size_t>(i) * d];
                  double* gxrow = &gx.data[static_cast<size_t>(i) * d];
                  for (int j = 0; j < d; ++j) gxrow[j] += s * row[j];
                }
              },
              "rows_norm");
}

Var Graph::rows_sumsq(Var x) {
  const Tensor& vx = node(x).value;
  if (vx.ndim() != 2) throw DimensionError("rows_sumsq: expected matrix, got " + vx.shape_str());
  const int n = vx.rows(), d = vx.cols();
  Tensor out({n, 1});
  for (int i = 0; i < n; ++i) {
    double ss = 0.0;
    const double* row = &vx.data[static_cast<size_t>(i) * d];
    for (int j = 0; j < d; ++j) ss += row[j] * row[j];
    out.data[static_cast<size_t>(i)] = ss;
  }
  return push(std::move(out),
              [x, n, d](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& vx2 = g.node(x).value;
                Tensor& gx = g.node(x).grad;
                for (int i = 0; i < n; ++i) {
                  const double s = 2.0 * go.data[static_cast<size_t>(i)];
                  const double* row = &vx2.data[static_cast<size_t>(i) * d];
                  double* gxrow = &gx.data[static_cast<size_t>(i) * d];
                  for (int j = 0; j < d; ++j) gxrow[j] += s * row[j];
                }
              },
              "rows_sumsq");
}

Var Graph::gather(Var x, std::vector<int64_t> indices) {
  const Tensor& vx = node(x).value;
  if (indices.empty()) throw DimensionError("gather: empty index list");
  Tensor out({static_cast<int>(indices.size())});
  for (size_t i = 0; i < indices.size(); ++i) {
    const int64_t idx = indices[i];
    if (idx < 0 || idx >= vx.numel())
      throw DimensionError("gather: index " + std::to_string(idx) + " out of range for " +
                           vx.shape_str());
    out.data[i] = vx.data[static_cast<size_t>(idx)];
  }
  return push(std::move(out),
              [x, indices = std::move(indices)](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& gx = g.node(x).grad;
                for (size_t i = 0; i < indices.size(); ++i)
                  gx.data[static_cast<size_t>(indices[i])] += go.data[i];
              },
              "gather");
}

Var Graph::concat_rows(std::span<const Var> xs) {
  if (xs.empty()) throw DimensionError("concat_rows: no inputs");
  const int d = node(xs[0]).value.cols();
  int total = 0;
  for (Var v : xs) {
    const Tensor& t = node(v).value;
    if (t.ndim() != 2 || t.cols() != d)
      throw DimensionError("concat_rows: column mismatch: " + t.shape_str());
    total += t.rows();
  }
  Tensor out({total, d});
  std::vector<Var> parts(xs.begin(), xs.end());
  std::vector<int> offsets;
  int off = 0;
  for (Var v : xs) {
    const Tensor& t = node(v).value;
    offsets.push_back(off);
    std::memcpy(&out.data[static_cast<size_t>(off) * d], t.data.data(),
                t.data.size() * sizeof(double));
    off += t.rows();
  }
  return push(std::move(out),
              [parts = std::move(parts), offsets = std::move(offsets), d](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                for (size_t p = 0; p < parts.size(); ++p) {
                  Tensor& gp = g.node(parts[p]).grad;
                  const size_t base = static_cast<size_t>(offsets[p]) * d;
                  for (size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += go.data[base + i];
                }
              },
              "concat_rows");
}

Var Graph::concat_cols(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  if (va.ndim() != 2 || vb.ndim() != 2 || va.rows() != vb.rows())
    throw DimensionError("concat_cols: row mismatch: " + va.shape_str() + " vs " + vb.shape_str());
  const int n = va.rows(), da = va.cols(), db = vb.cols();
  Tensor out({n, da + db});
  for (int i = 0; i < n; ++i) {
    std::memcpy(&out.data[static_cast<size_t>(i) * (da + db)],
                &va.data[static_cast<size_t>(i) * da], static_cast<size_t>(da) * sizeof(double));
    std::memcpy(&out.data[static_cast<size_t>(i) * (da + db) + da],
                &vb.data[static_cast<size_t>(i) * db], static_cast<size_t>(db) * sizeof(double));
  }
  return push(std::move(out),
              [a, b, n, da, db](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& ga = g.node(a).grad;
                Tensor& gb = g.node(b).grad;
                for (int i = 0; i < n; ++i) {
                  for (int j = 0; j < da; ++j)
                    ga.data[static_cast<size_t>(i) * da + j] +=
                        go.data[static_cast<size_t>(i) * (da + db) + j];
                  for (int j = 0; j < db; ++j)
                    gb.data[static_cast<size_t>(i) * db + j] +=
                        go.data[static_cast<size_t>(i) * (da + db) + da + j];
                }
              },
              "concat_cols");
}

Var Graph::add_row_vector(Var x, Var b) {
  const Tensor& vx = node(x).value;
  const Tensor& vb = node(b).value;
  if (vx.ndim() != 2 || vb.ndim() != 1 || vb.shape[0] != vx.cols())
    throw DimensionError("add_row_vector: incompatible shapes: " + vx.shape_str() + " vs " +
                         vb.shape_str());
  const int n = vx.rows(), d = vx.cols();
  Tensor out = vx;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data[static_cast<size_t>(i) * d + j] += vb.data[static_cast<size_t>(j)];
  return push(std::move(out),
              [x, b, n, d](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& gx = g.node(x).grad;
                Tensor& gb = g.node(b).grad;
                for (int i = 0; i < n; ++i)
                  for (int j = 0; j < d; ++j) {
                    const double v = go.data[static_cast<size_t>(i) * d + j];
                    gx.data[static_cast<size_t>(i) * d + j] += v;
                    gb.data[static_cast<size_t>(j)] += v;
                  }
              },
              "add_row_vector");
}

Var Graph::reshape(Var x, std::vector<int> new_shape) {
  const Tensor& vx = node(x).value;
  if (numel_of(new_shape) != vx.numel())
    throw DimensionError("reshape: element count mismatch: " + vx.shape_str() + " -> " +
                         shape_str(new_shape));
  Tensor out;
  out.shape = std::move(new_shape);
  out.data = vx.data;
  return push(std::move(out),
              [x](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& gx = g.node(x).grad;
                for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += go.data[i];
              },
              "reshape");
}

Var Graph::vmin(Var x) {
  const Tensor& vx = node(x).value;
  if (vx.numel() < 1) throw DimensionError("vmin: empty input");
  size_t arg = 0;
  for (size_t i = 1; i < vx.data.size(); ++i)
    if (vx.data[i] < vx.data[arg]) arg = i;
  return push(Tensor::scalar(vx.data[arg]),
              [x, arg](Graph& g, int self) {
                g.node(x).grad.data[arg] += g.nodes_[self].grad.data[0];
              },
              "vmin");
}

Var Graph::im2col(Var x, int kh, int kw, int stride, int pad) {
  const Tensor& vx = node(x).value;
  if (vx.ndim() != 4) throw DimensionError("im2col: expected NHWC image, got " + vx.shape_str());
  const int n = vx.shape[0], h = vx.shape[1], w = vx.shape[2], c = vx.shape[3];
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw DimensionError("im2col: kernel larger than padded input");
  Tensor out({n * oh * ow, kh * kw * c});
  const auto img_at = [&](int ni, int y, int xx, int ch) -> double {
    if (y < 0 || y >= h || xx < 0 || xx >= w) return 0.0;
    return vx.data[((static_cast<size_t>(ni) * h + y) * w + xx) * c + ch];
  };
  size_t r = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++r) {
        double* row = &out.data[r * (static_cast<size_t>(kh) * kw * c)];
        int col = 0;
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx)
            for (int ch = 0; ch < c; ++ch)
              row[col++] = img_at(ni, oy * stride + ky - pad, ox * stride + kx - pad, ch);
      }
  return push(std::move(out),
              [x, n, h, w, c, kh, kw, stride, pad, oh, ow](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& gx = g.node(x).grad;
                size_t r = 0;
                for (int ni = 0; ni < n; ++ni)
                  for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox, ++r) {
                      const double* row = &go.data[r * (static_cast<size_t>(kh) * kw * c)];
                      int col = 0;
                      for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                          for (int ch = 0; ch < c; ++ch, ++col) {
                            const int y = oy * stride + ky - pad;
                            const int xx = ox * stride + kx - pad;
                            if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
                            gx.data[((static_cast<size_t>(ni) * h + y) * w + xx) * c + ch] +=
                                row[col];
                          }
                    }
              },
              "im2col");
}

Var Graph::col2im(Var cols, int n, int h_in, int w_in, int kh, int kw, int stride, int pad,
                  int oh, int ow, int channels) {
  const Tensor& vc = node(cols).value;
  if (vc.ndim() != 2 || vc.rows() != n * h_in * w_in || vc.cols() != kh * kw * channels)
    throw DimensionError("col2im: columns shape " + vc.shape_str() + " does not match geometry");
  Tensor out({n, oh, ow, channels});
  size_t r = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int y = 0; y < h_in; ++y)
      for (int x = 0; x < w_in; ++x, ++r) {
        const double* row = &vc.data[r * (static_cast<size_t>(kh) * kw * channels)];
        int col = 0;
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx)
            for (int ch = 0; ch < channels; ++ch, ++col) {
              const int oy = y * stride + ky - pad;
              const int ox = x * stride + kx - pad;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              out.data[((static_cast<size_t>(ni) * oh + oy) * ow + ox) * channels + ch] += row[col];
            }
      }
  return push(std::move(out),
              [cols, n, h_in, w_in, kh, kw, stride, pad, oh, ow, channels](Graph& g, int self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& gc = g.node(cols).grad;
                size_t r = 0;
                for (int ni = 0; ni < n; ++ni)
                  for (int y = 0; y < h_in; ++y)
                    for (int x = 0; x < w_in; ++x, ++r) {
                      double* row = &gc.data[r * (static_cast<size_t>(kh) * kw * channels)];
                      int col = 0;
                      for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                          for (int ch = 0; ch < channels; ++ch, ++col) {
                            const int oy = y * stride + ky - pad;
                            const int ox = x * stride + kx - pad;
                            if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                            row[col] +=
                                go.data[((static_cast<size_t>(ni) * oh + oy) * ow + ox) * channels +
                                        ch];
                          }
                    }
              },
              "col2im");
}

void Graph::backward(Var out) {
  require(out.id >= 0 && out.id < size(), "backward: invalid node");
  if (node(out).value.numel() != 1)
    throw ContractError("backward: output must be scalar, got " + node(out).value.shape_str());
  for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
  node(out).grad.data[0] = 1.0;
  // Reverse insertion order visits every node exactly once; nodes recorded
  // after `out` carry zero gradient and contribute nothing.
  for (int i = size() - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.back) n.back(*this, i);
  }
}

double grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double eps) {
  if (eps < 1e-7 || eps > 1e-3) throw ContractError("grad_check: eps must be in [1e-7, 1e-3]");
  Graph g;
  Var xv = g.leaf(x);
  Var y = f(g, xv);
  if (g.value(y).numel() != 1) throw ContractError("grad_check: f must return a scalar");
  g.backward(y);
  const Tensor ga = g.grad(xv);

  const auto eval = [&](const Tensor& xp) -> double {
    Graph gp;
    Var v = gp.leaf(xp);
    Var yp = f(gp, v);
    return gp.value(yp).data[0];
  };

  double max_rel = 0.0;
  Tensor xp = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double orig = xp.data[i];
    xp.data[i] = orig + eps;
    const double fp = eval(xp);
    xp.data[i] = orig - eps;
    const double fm = eval(xp);
    xp.data[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericalError("grad_check: non-finite f at perturbed point");
    const double gfd = (fp - fm) / (2.0 * eps);
    const double denom = std::max(std::max(std::fabs(ga.data[i]), std::fabs(gfd)), 1e-8);
    max_rel = std::max(max_rel, std::fabs(ga.data[i] - gfd) / denom);
  }
  return max_rel;
}

}  // namespace baryir::ad
