#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace baryir::ad {

// Dense row-major tensor of 64-bit reals. Value-semantic; safe to copy and
// move across threads. All training state and batch data lives in these.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(int rows, int cols, std::vector<double> v);

  int64_t numel() const;
  int ndim() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return numel() == 1; }
  int rows() const;
  int cols() const;

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& at(int r, int c);
  double at(int r, int c) const;

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  std::string shape_str() const;  // e.g. "[2x3]"
};

int64_t numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace baryir::ad
