#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedbif/errors.hpp"

namespace fedbif {

/// Dense row-major matrix. Doubles are the library-wide storage type;
/// the float instantiation backs reduced-precision local training.
template <typename T>
struct MatT {
  using value_type = T;

  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;  // rows * cols, row-major

  MatT() = default;
  MatT(std::size_t r, std::size_t c, T fill = T{})
      : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }

  bool same_shape(const MatT& other) const {
    return rows == other.rows && cols == other.cols;
  }

  bool operator==(const MatT& other) const = default;
};

using Mat = MatT<double>;
using MatF = MatT<float>;

/// Signed integer tensor holding m-bit quantized values.
struct IntMat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> data;

  IntMat() = default;
  IntMat(std::size_t r, std::size_t c, std::int32_t fill = 0)
      : rows(r), cols(c), data(r * c, fill) {}

  std::int32_t& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  std::int32_t operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }

  bool operator==(const IntMat& other) const = default;
};

template <typename T>
bool all_finite(const MatT<T>& m) {
  for (T v : m.data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <typename T>
void require_same_shape(const MatT<T>& a, const MatT<T>& b, const char* where) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(where) + ": shape mismatch");
  }
}

MatF to_float(const Mat& m);
Mat to_double(const MatF& m);

/// Largest absolute entry; 0 for an empty matrix.
double inf_norm(const Mat& m);

}  // namespace fedbif
