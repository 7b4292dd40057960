#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedbif/baselines.hpp"
#include "fedbif/protocol.hpp"

namespace fedbif {

using Bytes = std::vector<std::uint8_t>;

/// A binary tensor packed one bit per entry, LSB-first within each byte;
/// padding bits in the last byte are zero.
struct PackedPlane {
  std::uint64_t bit_count = 0;
  Bytes bytes;  // ceil(bit_count / 8)
};

PackedPlane pack_plane(std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> unpack_plane(const PackedPlane& packed);

/// Every message starts with a fixed 16-byte little-endian header:
/// magic "FBIF", version u8, payload kind u8, m u8, activated u8,
/// round u32, layer count u32. The kind byte refines the direction;
/// the byte layouts are pinned in docs/wire-format.md and by golden tests.
enum class PayloadKind : std::uint8_t {
  downlink_quantized = 0,  // m-bit integer model + step sizes (downlink)
  uplink_planes = 1,       // trained activated bit planes (uplink)
  model_fp32 = 2,          // full model, 32-bit floats (downlink)
  delta_fp32 = 3,          // full model delta, 32-bit floats (uplink)
  delta_sign = 4,          // sign-compressed delta (uplink)
  delta_quantized = 5,     // quantized delta (either direction)
};

inline constexpr std::uint8_t kWireVersion = 1;

Bytes encode_downlink(const QuantizedModel& qm);
QuantizedModel decode_downlink(std::span<const std::uint8_t> payload);

Bytes encode_uplink(const ClientUpdate& update, int m);
struct DecodedUplink {
  ClientUpdate update;
  int m = 0;
};
DecodedUplink decode_uplink(std::span<const std::uint8_t> payload);

Bytes encode_model_fp32(const MlpParams& params, long round, bool is_delta);
struct DecodedModel {
  MlpParams params;
  long round = 0;
  bool is_delta = false;
};
DecodedModel decode_model_fp32(std::span<const std::uint8_t> payload);

Bytes encode_delta_sign(std::span<const SignCompressed> layers,
                        std::span<const Mat> bias_deltas, long round);
struct DecodedSign {
  std::vector<SignCompressed> layers;
  std::vector<Mat> bias_deltas;
  long round = 0;
};
DecodedSign decode_delta_sign(std::span<const std::uint8_t> payload);

Bytes encode_delta_quantized(std::span<const QuantCompressed> layers,
                             std::span<const Mat> bias_deltas, int m, long round);
struct DecodedQuant {
  std::vector<QuantCompressed> layers;
  std::vector<Mat> bias_deltas;
  long round = 0;
  int m = 0;
};
DecodedQuant decode_delta_quantized(std::span<const std::uint8_t> payload);

/// Header plus per-layer shape summary, without materializing tensors.
struct LayerSummary {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t bias_len = 0;
  double alpha = 0.0;
  bool has_alpha = false;
};
struct PayloadInfo {
  int version = 0;
  PayloadKind kind = PayloadKind::downlink_quantized;
  int m = 0;
  std::vector<int> activated;
  long round = 0;
  std::vector<LayerSummary> layers;
  std::size_t byte_size = 0;
  bool has_client = false;
  std::uint32_t client_id = 0;
  std::uint64_t sample_count = 0;
};
PayloadInfo inspect_payload(std::span<const std::uint8_t> payload);
std::string describe(const PayloadInfo& info);

/// Communication accounting, in bits actually placed on the wire.
/// parameter_count is the transmitted model's weight+bias count; a
/// "transfer" is one payload sent to or from one client.
struct WireStats {
  std::uint64_t uplink_bits = 0;
  std::uint64_t downlink_bits = 0;
  std::uint64_t uplink_transfers = 0;
  std::uint64_t downlink_transfers = 0;
  std::uint64_t parameter_count = 0;

  void record_uplink(std::size_t payload_bytes) {
    uplink_bits += 8 * payload_bytes;
    uplink_transfers += 1;
  }
  void record_downlink(std::size_t payload_bytes) {
    downlink_bits += 8 * payload_bytes;
    downlink_transfers += 1;
  }
};

enum class Direction { uplink, downlink };

/// Mean bits-per-parameter per transfer in the given direction.
double bpp(const WireStats& stats, Direction direction);

Bytes read_payload_file(const std::filesystem::path& path);
void write_payload_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace fedbif
