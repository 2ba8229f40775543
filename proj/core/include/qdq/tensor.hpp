#pragma once

#include <cstddef>
#include <vector>

namespace qdq {

// Row-major 2-D buffer of 64-bit reals; rank-1 data uses cols == 1 or
// rows == 1. All numerics in the toolkit run in double precision.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

  static Tensor row(std::vector<double> vals) {
    Tensor t;
    t.rows = 1;
    t.cols = static_cast<int>(vals.size());
    t.v = std::move(vals);
    return t;
  }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }
  std::size_t size() const { return v.size(); }

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  void zero() { std::fill(v.begin(), v.end(), 0.0); }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace qdq
