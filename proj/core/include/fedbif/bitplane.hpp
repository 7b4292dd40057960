#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedbif/matrix.hpp"

namespace fedbif {

/// The m binary planes of an m-bit integer tensor. Plane i holds bit i of
/// the offset-binary representation (value + 2^(m-1)), so the integer is
/// sum_i 2^i * plane_i - 2^(m-1) elementwise.
struct BitPlaneSet {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int m = 0;
  std::vector<std::vector<std::uint8_t>> planes;  // planes[i], each rows*cols, values in {0,1}

  std::size_t entries() const { return rows * cols; }
};

/// Splits an m-bit integer tensor into its m binary planes.
BitPlaneSet decompose(const IntMat& xbar, int m);

/// Exact inverse of decompose.
IntMat recompose(const BitPlaneSet& bits);

/// Integer contribution of all bits outside `activated`:
/// s = sum_{j not in activated} 2^j * b_j - 2^(m-1).
IntMat frozen_sum(const BitPlaneSet& bits, std::span<const int> activated);
IntMat frozen_sum(const BitPlaneSet& bits, int activated);

/// Step function: 1 where v > 0, else 0 (strict, so h(0) = 0).
template <typename T>
std::vector<std::uint8_t> step_bits(const MatT<T>& v) {
  std::vector<std::uint8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v.data[i] > T(0) ? 1 : 0;
  return out;
}

}  // namespace fedbif
