#include "baryir/tensor.hpp"

#include <cmath>
#include <sstream>

#include "baryir/errors.hpp"

namespace baryir::ad {

int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  for (int e : shape) {
    if (e <= 0) throw DimensionError("tensor: non-positive extent in shape " + baryir::ad::shape_str(shape));
  }
  data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
}

Tensor Tensor::full(std::vector<int> s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::vector(std::vector<double> v) {
  Tensor t;
  t.shape = {static_cast<int>(v.size())};
  t.data = std::move(v);
  if (t.data.empty()) throw DimensionError("tensor: empty vector");
  return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
  if (static_cast<int64_t>(v.size()) != static_cast<int64_t>(rows) * cols)
    throw DimensionError("tensor: matrix data size does not match [" + std::to_string(rows) + "x" +
                         std::to_string(cols) + "]");
  Tensor t;
  t.shape = {rows, cols};
  t.data = std::move(v);
  return t;
}

int64_t Tensor::numel() const { return numel_of(shape); }

int Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("tensor: rows() on non-matrix " + shape_str());
  return shape[0];
}

int Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("tensor: cols() on non-matrix " + shape_str());
  return shape[1];
}

double& Tensor::at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
double Tensor::at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const { return baryir::ad::shape_str(shape); }

}  // namespace baryir::ad
