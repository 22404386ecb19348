#pragma once

// Minimal dense row-major matrix. The model is tiny and several contracts
// pin exact summation order, so we keep the arithmetic explicit instead of
// delegating to a BLAS.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace maskdiff {

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
  }

  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

  std::span<double> row(int i) { return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int i) const {
    return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)};
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

} // namespace maskdiff
