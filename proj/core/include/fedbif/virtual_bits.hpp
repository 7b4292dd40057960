#pragma once

#include <span>
#include <vector>

#include "fedbif/bitplane.hpp"
#include "fedbif/matrix.hpp"
#include "fedbif/rng.hpp"

namespace fedbif {

enum class BitSelection { cyclic, random, fixed, multi };

/// Decides which bit indices a round trains. The server evaluates this once
/// per round and ships the result with the quantized model, so every client
/// and every layer agree on the same activated set.
struct ActivationSchedule {
  BitSelection strategy = BitSelection::cyclic;
  int m = 4;
  std::uint64_t seed = 0;
  int fixed_index = 0;  // for fixed
  int group_size = 1;   // for multi: bits activated per round
  bool msb_first = true;

  void validate() const;

  /// Activated indices for round t, sorted descending.
  std::vector<int> activated(long round) const;
};

/// Client-side training state for one layer: a floating-point virtual bit
/// per weight for each activated index, plus the precomputed integer
/// contribution of every frozen bit.
template <typename T>
struct VirtualBitLayerT {
  std::vector<int> activated;               // descending
  std::vector<MatT<T>> virtual_bits;        // parallel to activated
  IntMat frozen;                            // s
  double alpha = 0.0;
  int m = 0;
};

using VirtualBitLayer = VirtualBitLayerT<double>;

/// Sign-preserving virtual-bit initialization: v = (2b - 1) * |n| with
/// n ~ Normal(0, 2/fan_in). Draws of exactly zero are resampled so the
/// step function reproduces b for every entry.
template <typename T>
MatT<T> init_virtual(std::span<const std::uint8_t> bits, std::size_t rows,
                     std::size_t cols, std::size_t fan_in, Rng& rng);

/// Builds the full per-layer training state from received integers.
template <typename T>
VirtualBitLayerT<T> make_virtual_layer(const IntMat& xbar, int m, double alpha,
                                       std::span<const int> activated,
                                       std::size_t fan_in, Rng& rng);

/// Weight reconstruction: theta_hat = alpha * (sum_i 2^i * h(v_i) + s).
template <typename T>
MatT<T> reconstruct(const VirtualBitLayerT<T>& layer);

/// Straight-through estimator: the gradient reaching a virtual bit is the
/// gradient at its reconstructed weight, unchanged.
template <typename T>
MatT<T> ste_backward(const MatT<T>& grad_theta_hat, std::size_t rows, std::size_t cols);

extern template MatT<float> init_virtual<float>(std::span<const std::uint8_t>, std::size_t, std::size_t, std::size_t, Rng&);
extern template MatT<double> init_virtual<double>(std::span<const std::uint8_t>, std::size_t, std::size_t, std::size_t, Rng&);
extern template VirtualBitLayerT<float> make_virtual_layer<float>(const IntMat&, int, double, std::span<const int>, std::size_t, Rng&);
extern template VirtualBitLayerT<double> make_virtual_layer<double>(const IntMat&, int, double, std::span<const int>, std::size_t, Rng&);
extern template MatT<float> reconstruct<float>(const VirtualBitLayerT<float>&);
extern template MatT<double> reconstruct<double>(const VirtualBitLayerT<double>&);
extern template MatT<float> ste_backward<float>(const MatT<float>&, std::size_t, std::size_t);
extern template MatT<double> ste_backward<double>(const MatT<double>&, std::size_t, std::size_t);

}  // namespace fedbif
