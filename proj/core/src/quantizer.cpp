#include "fedbif/quantizer.hpp"

#include <algorithm>
#include <cmath>

namespace fedbif {

namespace {

// Round half to even. nearbyint honors the default FE_TONEAREST mode, which
// is ties-to-even; the explicit tie handling below keeps the result correct
// even if the caller changed the floating-point environment.
double round_half_even(double q) {
  double r = std::nearbyint(q);
  double diff = q - std::floor(q);
  if (diff == 0.5) {
    double lo = std::floor(q);
    r = (std::fmod(lo, 2.0) == 0.0) ? lo : lo + 1.0;
  }
  return r;
}

std::int32_t clamp_to_range(double r, int m) {
  double lo = static_cast<double>(quant_min(m));
  double hi = static_cast<double>(quant_max(m));
  return static_cast<std::int32_t>(std::clamp(r, lo, hi));
}

}  // namespace

void QuantParams::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw SpecError("QuantParams: alpha must be positive and finite");
  }
  if (m < kMinBitWidth || m > kMaxBitWidth) {
    throw SpecError("QuantParams: bit width out of [2,8]");
  }
}

std::int32_t quant_min(int m) { return -(std::int32_t(1) << (m - 1)); }
std::int32_t quant_max(int m) { return (std::int32_t(1) << (m - 1)) - 1; }

double step_size(const Mat& theta, int m) {
  if (m < kMinBitWidth || m > kMaxBitWidth) {
    throw SpecError("step_size: bit width out of [2,8]");
  }
  double norm = std::max(inf_norm(theta), kStepSizeFloor);
  return norm / static_cast<double>(std::int64_t(1) << (m - 1));
}

IntMat quantize(const Mat& x, const QuantParams& qp) {
  qp.validate();
  if (!all_finite(x)) throw DataError("quantize: non-finite input");
  IntMat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    double q = x.data[i] / qp.alpha;
    double r = round_half_even(q);
    // Guard against the rare 1-ulp case where the divide pushed q across a
    // tie; keeps |x - alpha*r| <= alpha/2 exact in the unclamped region.
    double err = x.data[i] - qp.alpha * r;
    if (err > 0.5 * qp.alpha) r += 1.0;
    else if (err < -0.5 * qp.alpha) r -= 1.0;
    out.data[i] = clamp_to_range(r, qp.m);
  }
  return out;
}

Mat dequantize(const IntMat& xbar, double alpha) {
  if (!(alpha > 0.0)) throw SpecError("dequantize: alpha must be positive");
  Mat out(xbar.rows, xbar.cols);
  for (std::size_t i = 0; i < xbar.data.size(); ++i) {
    out.data[i] = alpha * static_cast<double>(xbar.data[i]);
  }
  return out;
}

IntMat stochastic_quantize(const Mat& x, const QuantParams& qp, Rng& rng) {
  qp.validate();
  if (!all_finite(x)) throw DataError("stochastic_quantize: non-finite input");
  IntMat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    double q = x.data[i] / qp.alpha;
    double lo = std::floor(q);
    double frac = q - lo;
    double r = lo;
    if (frac > 0.0 && rng.uniform() < frac) r += 1.0;
    out.data[i] = clamp_to_range(r, qp.m);
  }
  return out;
}

}  // namespace fedbif
