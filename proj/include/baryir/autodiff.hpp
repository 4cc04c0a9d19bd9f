#pragma once

#include <functional>
#include <span>
#include <vector>

#include "baryir/tensor.hpp"

namespace baryir::ad {

// Handle to a node in a Graph. Cheap to copy; only valid for the graph that
// created it.
struct Var {
  int id = -1;
};

// Define-by-run reverse-mode differentiation tape. The graph is rebuilt on
// every forward pass; nodes are stored in insertion (topological) order and
// the backward pass visits them exactly once in reverse order.
//
// A Graph is confined to one thread. Tensors are value-semantic and may be
// shared across threads freely.
class Graph {
 public:
  // Norm smoothing used by training-mode cosine/norm ops. Strict mode (eps 0)
  // raises DegenerateInputError on zero-norm inputs instead.
  static constexpr double kNormEps = 1e-12;

  Var leaf(Tensor t);
  Var constant(Tensor t) { return leaf(std::move(t)); }
  Var scalar(double v) { return leaf(Tensor::scalar(v)); }

  // Elementwise arithmetic (shapes must match exactly).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);

  // 2-D matrix product; gradients dA = dC*B^T, dB = A^T*dC.
  Var matmul(Var a, Var b);
  // a * b^T for a[n x k], b[m x k].
  Var matmul_nt(Var a, Var b);

  Var relu(Var a);
  Var abs(Var a);

  Var sum(Var a);
  Var mean(Var a);
  Var dot(Var a, Var b);

  // sqrt(sum x^2 + eps); eps = 0 is exact.
  Var norm2(Var a, double eps = 0.0);

  // u.v / (|u| |v|), for 1-D u, v of equal length. eps > 0 smooths each norm
  // as sqrt(sum + eps); eps = 0 is strict mode and zero-norm input throws.
  Var cosine_sim(Var u, Var v, double eps = 0.0);

  // log sum exp with max-subtraction; exact for single-element input.
  Var logsumexp(Var x);

  // Row-wise L2 normalization of an [n x d] matrix.
  Var normalize_rows(Var x, double eps = 0.0);
  // Row-wise L2 norms -> [n x 1].
  Var rows_norm(Var x, double eps = 0.0);
  // Row-wise sum of squares -> [n x 1].
  Var rows_sumsq(Var x);

  // Flat-index gather -> 1-D tensor; backward scatter-adds.
  Var gather(Var x, std::vector<int64_t> indices);

  Var concat_rows(std::span<const Var> xs);
  Var concat_cols(Var a, Var b);
  // X[n x d] + broadcast of b[d] over rows.
  Var add_row_vector(Var x, Var b);

  Var reshape(Var x, std::vector<int> new_shape);

  // Minimum of a 1-D tensor; subgradient routed to the first argmin.
  Var vmin(Var x);

  // Patch extraction for NHWC images [N x H x W x C] ->
  // [(N*OH*OW) x (kh*kw*C)]; backward scatter-adds into the image.
  Var im2col(Var x, int kh, int kw, int stride, int pad);
  // Adjoint of im2col: scatter-adds columns [(N*H*W) x (kh*kw*C)] into an
  // NHWC image of shape [N x OH x OW x C], where each input row (n, y, x)
  // writes its patch at (y*stride + ky - pad, x*stride + kx - pad). This is
  // the forward pass of a transposed convolution.
  Var col2im(Var cols, int n, int h_in, int w_in, int kh, int kw, int stride, int pad, int oh,
             int ow, int channels);

  void backward(Var out);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&, int)> back;  // null for leaves
    const char* op = "leaf";
  };

  Node& node(Var v) { return nodes_[static_cast<size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
  Var push(Tensor value, std::function<void(Graph&, int)> back, const char* op);
  void check_same_shape(const char* op, Var a, Var b) const;

  std::vector<Node> nodes_;
};

// Maximum relative error between the reverse-mode gradient of f at x and a
// central finite-difference estimate, with denominator max(|g|, 1e-8).
// f must build a scalar from the single leaf it is given.
double grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double eps);

}  // namespace baryir::ad
