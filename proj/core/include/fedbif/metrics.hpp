#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedbif/mlp.hpp"
#include "fedbif/protocol.hpp"

namespace fedbif {

/// One log record per round per seed. Serialized as one JSON object per
/// line; the field set is pinned by a golden test.
struct RoundMetrics {
  std::uint64_t seed = 0;
  long round = 0;
  double test_accuracy = 0.0;
  double train_loss = 0.0;
  double uplink_bpp = 0.0;    // cumulative mean so far
  double downlink_bpp = 0.0;  // cumulative mean so far
  double sparsity = 0.0;      // fraction of zero weights, see measure rules

  bool operator==(const RoundMetrics&) const = default;
};

std::string to_json_line(const RoundMetrics& m);
RoundMetrics parse_json_line(const std::string& line);

/// Fraction of weights whose quantized integer is exactly zero under the
/// given per-layer step sizes and bit width (the round context). Biases
/// are not counted.
double measure_sparsity(const GlobalModel& global, const QuantizedModel& context);

/// Same measure with fresh per-layer step sizes computed from the model.
double measure_sparsity(const MlpParams& params, int m);

/// Zero fraction of already-quantized integer layers.
double sparsity_of_ints(std::span<const IntMat> layers);

/// Fraction of weights with |w| <= threshold; the zero-integer definition
/// applied to raw full-precision weights. Used for uncompressed baselines,
/// where exact zeros essentially never occur.
double raw_sparsity(const MlpParams& params, double threshold = 1e-12);

/// Per-seed final accuracies with their mean and standard deviation,
/// recomputable from the raw per-round records.
struct RunSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_accuracy;
  double mean = 0.0;
  double stddev = 0.0;  // population, matching reported "mean (+-std)"
};

RunSummary summarize(std::span<const std::uint64_t> seeds,
                     std::span<const double> final_accuracy);
std::string summary_csv(const RunSummary& summary);

}  // namespace fedbif
