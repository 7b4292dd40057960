#include "fedbif/bitplane.hpp"

#include <algorithm>
#include <string>

#include "fedbif/quantizer.hpp"

namespace fedbif {

BitPlaneSet decompose(const IntMat& xbar, int m) {
  if (m < kMinBitWidth || m > kMaxBitWidth) {
    throw SpecError("decompose: bit width out of [2,8]");
  }
  const std::int32_t lo = quant_min(m);
  const std::int32_t hi = quant_max(m);
  BitPlaneSet out;
  out.rows = xbar.rows;
  out.cols = xbar.cols;
  out.m = m;
  out.planes.assign(static_cast<std::size_t>(m),
                    std::vector<std::uint8_t>(xbar.size(), 0));
  const std::uint32_t offset = std::uint32_t(1) << (m - 1);
  for (std::size_t idx = 0; idx < xbar.size(); ++idx) {
    std::int32_t v = xbar.data[idx];
    if (v < lo || v > hi) {
      throw RangeError("decompose: value " + std::to_string(v) +
                       " outside " + std::to_string(m) + "-bit range");
    }
    std::uint32_t u = static_cast<std::uint32_t>(v + static_cast<std::int32_t>(offset));
    for (int i = 0; i < m; ++i) {
      out.planes[static_cast<std::size_t>(i)][idx] =
          static_cast<std::uint8_t>((u >> i) & 1u);
    }
  }
  return out;
}

IntMat recompose(const BitPlaneSet& bits) {
  const std::int32_t offset = std::int32_t(1) << (bits.m - 1);
  IntMat out(bits.rows, bits.cols);
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    std::int32_t acc = -offset;
    for (int i = 0; i < bits.m; ++i) {
      std::uint8_t b = bits.planes[static_cast<std::size_t>(i)][idx];
      if (b > 1) throw DataError("recompose: non-binary plane entry");
      acc += (std::int32_t(1) << i) * static_cast<std::int32_t>(b);
    }
    out.data[idx] = acc;
  }
  return out;
}

IntMat frozen_sum(const BitPlaneSet& bits, std::span<const int> activated) {
  for (int i : activated) {
    if (i < 0 || i >= bits.m) throw SpecError("frozen_sum: activated index out of range");
  }
  const std::int32_t offset = std::int32_t(1) << (bits.m - 1);
  IntMat out(bits.rows, bits.cols);
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    std::int32_t acc = -offset;
    for (int i = 0; i < bits.m; ++i) {
      if (std::find(activated.begin(), activated.end(), i) != activated.end()) continue;
      std::uint8_t b = bits.planes[static_cast<std::size_t>(i)][idx];
      if (b > 1) throw DataError("frozen_sum: non-binary plane entry");
      acc += (std::int32_t(1) << i) * static_cast<std::int32_t>(b);
    }
    out.data[idx] = acc;
  }
  return out;
}

IntMat frozen_sum(const BitPlaneSet& bits, int activated) {
  const int one[1] = {activated};
  return frozen_sum(bits, std::span<const int>(one, 1));
}

}  // namespace fedbif
