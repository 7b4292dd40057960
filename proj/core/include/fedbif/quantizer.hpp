#pragma once

#include "fedbif/matrix.hpp"
#include "fedbif/rng.hpp"

namespace fedbif {

inline constexpr int kMinBitWidth = 2;
inline constexpr int kMaxBitWidth = 8;

/// Floor applied to the infinity norm before dividing, so an all-zero
/// tensor still gets a positive step size.
inline constexpr double kStepSizeFloor = 1e-12;

struct QuantParams {
  double alpha = 0.0;  // step size
  int m = 0;           // bit width

  void validate() const;
};

std::int32_t quant_min(int m);  // -2^(m-1)
std::int32_t quant_max(int m);  //  2^(m-1) - 1

/// Per-layer step size: max(inf_norm(theta), 1e-12) / 2^(m-1).
double step_size(const Mat& theta, int m);

/// clamp(round-half-even(x / alpha), -2^(m-1), 2^(m-1)-1) elementwise.
IntMat quantize(const Mat& x, const QuantParams& qp);

/// alpha * xbar elementwise.
Mat dequantize(const IntMat& xbar, double alpha);

/// x / alpha rounded up with probability equal to its fractional part,
/// down otherwise, then clamped. Unbiased before clamping.
IntMat stochastic_quantize(const Mat& x, const QuantParams& qp, Rng& rng);

}  // namespace fedbif
