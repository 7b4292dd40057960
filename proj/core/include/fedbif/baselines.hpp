#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedbif/matrix.hpp"
#include "fedbif/mlp.hpp"
#include "fedbif/protocol.hpp"
#include "fedbif/quantizer.hpp"
#include "fedbif/rng.hpp"

namespace fedbif {

/// Reference compressors run under the same protocol plumbing as bit
/// freezing: uncompressed averaging, sign-only updates, post-training
/// quantized updates, and stochastic quantization of both directions.
struct CompressorKind {
  enum class Tag { none, signsgd, fedpaq, lfl };
  Tag tag = Tag::none;
  double signsgd_alpha = 0.001;
  int fedpaq_m = 4;
  int lfl_m_up = 1;
  int lfl_m_down = 4;

  void validate() const;
};

/// Sign-compressed tensor: one bit per entry plus the shared magnitude.
/// Exact zeros keep their own symbol (sign(0) = 0) as a sparse index list;
/// accounting treats them as one bit like everything else.
struct SignCompressed {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> positive;       // 1 bit per entry
  std::vector<std::uint32_t> zero_indices;  // row-major positions with value 0
  double alpha = 0.0;                       // f32-exact

  Mat value() const;  // alpha * sign(entry)
};

SignCompressed signsgd_compress(const Mat& delta, double alpha);

/// Quantized tensor with its per-layer step size, the FedPAQ/LFL payload.
struct QuantCompressed {
  IntMat ints;
  double alpha = 0.0;  // f32-exact
  int m = 0;

  Mat value() const;  // dequantized
};

/// Deterministic post-training quantization of an update:
/// alpha = inf_norm(delta) / 2^(m-1), round half to even.
QuantCompressed fedpaq_compress(const Mat& delta, int m);

/// Stochastic quantization (unbiased before clamping); used on uplink
/// deltas with m_up and on downlink global updates with m_down.
QuantCompressed lfl_compress(const Mat& tensor, int m, Rng& rng);

/// w_next = base + sum_k p_k * delta_k, elementwise over every parameter.
/// Deltas reuse the parameter container, shapes must match the base.
GlobalModel fedavg_apply(const GlobalModel& base, std::span<const MlpParams> deltas,
                         std::span<const double> weights);

/// Plain local SGD used by every baseline: seeded epoch shuffles,
/// mini-batches, mean cross-entropy.
struct LocalSgdResult {
  MlpParams params;
  double mean_loss = 0.0;
};
LocalSgdResult train_local_sgd(const MlpParams& start, const Dataset& shard,
                               std::size_t epochs, std::size_t batch_size, double lr,
                               Precision precision, Rng& rng);

}  // namespace fedbif
