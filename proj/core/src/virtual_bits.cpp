#include "fedbif/virtual_bits.hpp"

#include <algorithm>
#include <cmath>

#include "fedbif/quantizer.hpp"

namespace fedbif {

void ActivationSchedule::validate() const {
  if (m < kMinBitWidth || m > kMaxBitWidth) {
    throw SpecError("ActivationSchedule: bit width out of [2,8]");
  }
  if (strategy == BitSelection::fixed && (fixed_index < 0 || fixed_index >= m)) {
    throw SpecError("ActivationSchedule: fixed index out of [0,m)");
  }
  if (strategy == BitSelection::multi && (group_size < 1 || group_size > m)) {
    throw SpecError("ActivationSchedule: group size out of [1,m]");
  }
}

std::vector<int> ActivationSchedule::activated(long round) const {
  validate();
  switch (strategy) {
    case BitSelection::cyclic: {
      long pos = round % m;
      int i = msb_first ? m - 1 - static_cast<int>(pos) : static_cast<int>(pos);
      return {i};
    }
    case BitSelection::random: {
      Rng rng(derive_stream(seed, {0x5e1ec7ULL, static_cast<std::uint64_t>(round)}));
      return {static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(m)))};
    }
    case BitSelection::fixed:
      return {fixed_index};
    case BitSelection::multi: {
      // Consecutive groups of group_size indices, MSB side first, cycled
      // across rounds; the last group may be smaller.
      int groups = (m + group_size - 1) / group_size;
      int g = static_cast<int>(round % groups);
      int hi = m - 1 - g * group_size;
      int lo = std::max(hi - group_size + 1, 0);
      std::vector<int> out;
      for (int i = hi; i >= lo; --i) out.push_back(i);
      return out;
    }
  }
  throw SpecError("ActivationSchedule: unknown strategy");
}

template <typename T>
MatT<T> init_virtual(std::span<const std::uint8_t> bits, std::size_t rows,
                     std::size_t cols, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw SpecError("init_virtual: fan_in must be positive");
  if (bits.size() != rows * cols) throw DimensionError("init_virtual: bits/shape mismatch");
  const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
  MatT<T> out(rows, cols);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    std::uint8_t b = bits[i];
    if (b > 1) throw DataError("init_virtual: non-binary bit");
    double n;
    do {
      n = sigma * rng.normal();
    } while (n == 0.0);
    double v = (2.0 * b - 1.0) * std::abs(n);
    out.data[i] = static_cast<T>(v);
  }
  return out;
}

template <typename T>
VirtualBitLayerT<T> make_virtual_layer(const IntMat& xbar, int m, double alpha,
                                       std::span<const int> activated,
                                       std::size_t fan_in, Rng& rng) {
  BitPlaneSet bits = decompose(xbar, m);
  VirtualBitLayerT<T> layer;
  layer.activated.assign(activated.begin(), activated.end());
  std::sort(layer.activated.begin(), layer.activated.end(), std::greater<int>());
  layer.frozen = frozen_sum(bits, layer.activated);
  layer.alpha = alpha;
  layer.m = m;
  layer.virtual_bits.reserve(layer.activated.size());
  for (int i : layer.activated) {
    layer.virtual_bits.push_back(init_virtual<T>(
        bits.planes[static_cast<std::size_t>(i)], xbar.rows, xbar.cols, fan_in, rng));
  }
  return layer;
}

template <typename T>
MatT<T> reconstruct(const VirtualBitLayerT<T>& layer) {
  MatT<T> out(layer.frozen.rows, layer.frozen.cols);
  const T alpha = static_cast<T>(layer.alpha);
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    std::int32_t acc = layer.frozen.data[idx];
    for (std::size_t p = 0; p < layer.activated.size(); ++p) {
      if (layer.virtual_bits[p].data[idx] > T(0)) {
        acc += std::int32_t(1) << layer.activated[p];
      }
    }
    out.data[idx] = alpha * static_cast<T>(acc);
  }
  return out;
}

template <typename T>
MatT<T> ste_backward(const MatT<T>& grad_theta_hat, std::size_t rows, std::size_t cols) {
  if (grad_theta_hat.rows != rows || grad_theta_hat.cols != cols) {
    throw DimensionError("ste_backward: gradient shape mismatch");
  }
  return grad_theta_hat;
}

template MatT<float> init_virtual<float>(std::span<const std::uint8_t>, std::size_t, std::size_t, std::size_t, Rng&);
template MatT<double> init_virtual<double>(std::span<const std::uint8_t>, std::size_t, std::size_t, std::size_t, Rng&);
template VirtualBitLayerT<float> make_virtual_layer<float>(const IntMat&, int, double, std::span<const int>, std::size_t, Rng&);
template VirtualBitLayerT<double> make_virtual_layer<double>(const IntMat&, int, double, std::span<const int>, std::size_t, Rng&);
template MatT<float> reconstruct<float>(const VirtualBitLayerT<float>&);
template MatT<double> reconstruct<double>(const VirtualBitLayerT<double>&);
template MatT<float> ste_backward<float>(const MatT<float>&, std::size_t, std::size_t);
template MatT<double> ste_backward<double>(const MatT<double>&, std::size_t, std::size_t);

}  // namespace fedbif
