#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedbif/dataset.hpp"
#include "fedbif/matrix.hpp"
#include "fedbif/mlp.hpp"
#include "fedbif/quantizer.hpp"
#include "fedbif/virtual_bits.hpp"

namespace fedbif {

enum class Precision { fp64, fp32 };

/// Full-precision model held by the server.
struct GlobalModel {
  MlpParams params;
  long round = 0;
};

/// The downlink payload: per-layer integer weights with their step sizes,
/// biases passed through uncompressed. Step sizes and biases are rounded
/// through IEEE-754 binary32 at construction so the in-memory value and the
/// wire value are identical.
struct QuantizedModel {
  int m = 0;
  long round = 0;
  std::vector<int> activated;       // bit indices this round trains, descending
  std::vector<IntMat> weights;
  std::vector<double> alphas;       // per layer, f32-exact
  std::vector<Mat> biases;          // per layer (1 x out), f32-exact

  std::size_t num_layers() const { return weights.size(); }
  std::size_t weight_count() const;
  std::size_t parameter_count() const;
};

/// The uplink payload: the trained activated bit plane(s) per layer plus
/// full-precision bias deltas and the shard size used for weighting.
struct ClientUpdate {
  std::uint32_t client_id = 0;
  long round = 0;
  std::vector<int> activated;  // descending, must match the broadcast
  // planes[layer][k] is the trained plane for activated[k], rows*cols bits.
  std::vector<std::vector<std::vector<std::uint8_t>>> planes;
  std::vector<Mat> bias_deltas;  // per layer (1 x out), f32-exact
  std::uint64_t sample_count = 0;
};

struct RoundConfig {
  std::size_t clients_total = 8;
  std::size_t clients_per_round = 8;
  std::size_t local_epochs = 2;
  std::size_t batch_size = 32;
  double lr = 0.1;
  int m = 4;
  ActivationSchedule schedule;
  std::uint64_t seed = 0;
  Precision precision = Precision::fp64;

  void validate() const;
};

/// Quantizes every weight layer with a fresh per-layer step size and stamps
/// the round's activated bit set.
QuantizedModel server_quantize(const GlobalModel& global, int m,
                               std::span<const int> activated);

struct ClientTrainResult {
  ClientUpdate update;
  double mean_loss = 0.0;  // mean over all local steps
};

/// Local bit-frozen training: decompose the received integers, precompute
/// the frozen sums, initialize sign-preserving virtual bits, then run
/// SGD where the forward pass uses reconstructed weights and the backward
/// pass routes the weight gradient straight to the virtual bits. Biases
/// train normally.
ClientTrainResult client_train(const QuantizedModel& qm, const Dataset& shard,
                               const RoundConfig& cfg, std::uint32_t client_id,
                               Rng& rng);

/// Server-side recovery and weighted aggregation of uploaded bit planes:
/// per weight, theta = alpha * (sum_i 2^i * sum_k p_k * b_{i,k} + s).
/// Weights p_k must sum to 1; all updates must agree on round and
/// activated set.
GlobalModel aggregate(std::span<const ClientUpdate> updates, const QuantizedModel& qm,
                      std::span<const double> weights);

/// p_k = sample_count_k / total.
std::vector<double> proportional_weights(std::span<const std::uint64_t> sample_counts);

/// Uniform selection of k distinct clients, seeded per round. Returned
/// ascending so sequential and parallel execution reduce in the same order.
std::vector<std::size_t> select_clients(std::size_t total, std::size_t k,
                                        std::uint64_t seed, long round);

}  // namespace fedbif
