#pragma once

#include <cstddef>
#include <vector>

namespace nbode {

/// Row-major dense matrix of doubles for plain (non-autodiff) numerics.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> v)
      : rows(r), cols(c), values(std::move(v)) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double* row(std::size_t i) { return values.data() + i * cols; }
  const double* row(std::size_t i) const { return values.data() + i * cols; }
  std::size_t size() const { return values.size(); }

  bool operator==(const Mat& other) const = default;
};

}  // namespace nbode
