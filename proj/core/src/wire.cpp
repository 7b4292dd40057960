#include "fedbif/wire.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedbif/bitplane.hpp"

namespace fedbif {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'B', 'I', 'F'};
constexpr std::uint8_t kActivatedNone = 0xFF;

class ByteWriter {
 public:
  Bytes take() { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) {
    float f = static_cast<float>(v);
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    u32(bits);
  }
  void raw(std::span<const std::uint8_t> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }

 private:
  Bytes buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(data_[pos_++]) << (8 * i);
    return v;
  }
  double f32() {
    std::uint32_t bits = u32();
    return static_cast<double>(std::bit_cast<float>(bits));
  }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == data_.size(); }
  void expect_done() const {
    if (!done()) throw DecodeError("payload has trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DecodeError("payload truncated");
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// Multi-bit values appended LSB-first into a bit stream that fills each
// byte from bit 0 upward, the same convention as pack_plane.
class BitWriter {
 public:
  void put(std::uint32_t value, int bits) {
    for (int i = 0; i < bits; ++i) {
      if (nbits_ == 0) buf_.push_back(0);
      if ((value >> i) & 1u) buf_.back() |= static_cast<std::uint8_t>(1u << nbits_);
      nbits_ = (nbits_ + 1) % 8;
    }
  }
  const Bytes& bytes() const { return buf_; }

 private:
  Bytes buf_;
  int nbits_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_count)
      : bytes_(bytes), bit_count_(bit_count) {}

  std::uint32_t get(int bits) {
    std::uint32_t v = 0;
    for (int i = 0; i < bits; ++i) {
      if (pos_ >= bit_count_) throw DecodeError("bit stream truncated");
      std::uint8_t byte = bytes_[pos_ / 8];
      if ((byte >> (pos_ % 8)) & 1u) v |= 1u << i;
      ++pos_;
    }
    return v;
  }

  void check_padding() const {
    for (std::uint64_t p = bit_count_; p < 8 * bytes_.size(); ++p) {
      if ((bytes_[p / 8] >> (p % 8)) & 1u) {
        throw DecodeError("nonzero padding bits");
      }
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t bit_count_ = 0;
  std::uint64_t pos_ = 0;
};

std::size_t packed_size(std::uint64_t bit_count) {
  return static_cast<std::size_t>((bit_count + 7) / 8);
}

void write_header(ByteWriter& w, PayloadKind kind, int m, std::span<const int> activated,
                  long round, std::uint32_t layer_count) {
  if (round < 0 || round > static_cast<long>(UINT32_MAX)) {
    throw SpecError("wire: round out of u32 range");
  }
  w.raw(kMagic);
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u8(static_cast<std::uint8_t>(m));
  bool planes_kind = kind == PayloadKind::downlink_quantized || kind == PayloadKind::uplink_planes;
  if (planes_kind && activated.size() == 1) {
    w.u8(static_cast<std::uint8_t>(activated[0]));
  } else {
    w.u8(kActivatedNone);
  }
  w.u32(static_cast<std::uint32_t>(round));
  w.u32(layer_count);
  if (planes_kind && activated.size() != 1) {
    // Activated-set bitmask follows the header when more than one bit
    // trains per round.
    std::uint8_t mask = 0;
    for (int i : activated) mask |= static_cast<std::uint8_t>(1u << i);
    w.u8(mask);
  }
}

struct Header {
  PayloadKind kind;
  int m;
  std::vector<int> activated;
  long round;
  std::uint32_t layer_count;
};

Header read_header(ByteReader& r) {
  auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) {
    throw DecodeError("bad magic");
  }
  std::uint8_t version = r.u8();
  if (version != kWireVersion) {
    throw DecodeError("unsupported version " + std::to_string(version));
  }
  std::uint8_t kind_raw = r.u8();
  if (kind_raw > static_cast<std::uint8_t>(PayloadKind::delta_quantized)) {
    throw DecodeError("unknown payload kind " + std::to_string(kind_raw));
  }
  Header h;
  h.kind = static_cast<PayloadKind>(kind_raw);
  h.m = r.u8();
  std::uint8_t act = r.u8();
  h.round = static_cast<long>(r.u32());
  h.layer_count = r.u32();
  bool planes_kind =
      h.kind == PayloadKind::downlink_quantized || h.kind == PayloadKind::uplink_planes;
  if (planes_kind) {
    if (h.m < kMinBitWidth || h.m > kMaxBitWidth) {
      throw DecodeError("bit width out of [2,8]");
    }
    if (act == kActivatedNone) {
      std::uint8_t mask = r.u8();
      if (mask == 0) throw DecodeError("empty activated mask");
      for (int i = h.m - 1; i >= 0; --i) {
        if ((mask >> i) & 1u) h.activated.push_back(i);
      }
      if (std::popcount(mask) != static_cast<int>(h.activated.size())) {
        throw DecodeError("activated mask has bits beyond m");
      }
    } else {
      if (act >= h.m) throw DecodeError("activated index out of range");
      h.activated.push_back(act);
    }
  } else if (act != kActivatedNone) {
    throw DecodeError("unexpected activated index");
  }
  return h;
}

}  // namespace

PackedPlane pack_plane(std::span<const std::uint8_t> bits) {
  PackedPlane out;
  out.bit_count = bits.size();
  out.bytes.assign(packed_size(bits.size()), 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] > 1) throw DataError("pack_plane: non-binary input");
    if (bits[i]) out.bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return out;
}

std::vector<std::uint8_t> unpack_plane(const PackedPlane& packed) {
  if (packed.bytes.size() != packed_size(packed.bit_count)) {
    throw DecodeError("unpack_plane: length header mismatch");
  }
  BitReader reader(packed.bytes, packed.bit_count);
  std::vector<std::uint8_t> bits(packed.bit_count);
  for (std::uint64_t i = 0; i < packed.bit_count; ++i) {
    bits[i] = static_cast<std::uint8_t>(reader.get(1));
  }
  reader.check_padding();
  return bits;
}

Bytes encode_downlink(const QuantizedModel& qm) {
  ByteWriter w;
  write_header(w, PayloadKind::downlink_quantized, qm.m, qm.activated, qm.round,
               static_cast<std::uint32_t>(qm.num_layers()));
  const std::int32_t offset = std::int32_t(1) << (qm.m - 1);
  for (std::size_t l = 0; l < qm.num_layers(); ++l) {
    const IntMat& ints = qm.weights[l];
    w.u32(static_cast<std::uint32_t>(ints.rows));
    w.u32(static_cast<std::uint32_t>(ints.cols));
    w.f32(qm.alphas[l]);
    BitWriter bw;
    for (std::int32_t v : ints.data) {
      if (v < quant_min(qm.m) || v > quant_max(qm.m)) {
        throw RangeError("encode_downlink: integer outside bit-width range");
      }
      bw.put(static_cast<std::uint32_t>(v + offset), qm.m);
    }
    w.raw(bw.bytes());
    const Mat& bias = qm.biases[l];
    w.u32(static_cast<std::uint32_t>(bias.size()));
    for (double b : bias.data) w.f32(b);
  }
  return w.take();
}

QuantizedModel decode_downlink(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Header h = read_header(r);
  if (h.kind != PayloadKind::downlink_quantized) {
    throw DecodeError("not a quantized downlink payload");
  }
  QuantizedModel qm;
  qm.m = h.m;
  qm.round = h.round;
  qm.activated = h.activated;
  const std::int32_t offset = std::int32_t(1) << (h.m - 1);
  for (std::uint32_t l = 0; l < h.layer_count; ++l) {
    std::size_t rows = r.u32();
    std::size_t cols = r.u32();
    double alpha = r.f32();
    if (!(alpha > 0.0)) throw DecodeError("nonpositive step size");
    std::uint64_t n = std::uint64_t(rows) * cols;
    auto raw = r.raw(packed_size(n * h.m));
    BitReader bits(raw, n * static_cast<std::uint64_t>(h.m));
    IntMat ints(rows, cols);
    for (std::uint64_t i = 0; i < n; ++i) {
      ints.data[i] = static_cast<std::int32_t>(bits.get(h.m)) - offset;
    }
    bits.check_padding();
    std::size_t bias_len = r.u32();
    Mat bias(1, bias_len);
    for (std::size_t i = 0; i < bias_len; ++i) bias.data[i] = r.f32();
    qm.weights.push_back(std::move(ints));
    qm.alphas.push_back(alpha);
    qm.biases.push_back(std::move(bias));
  }
  r.expect_done();
  return qm;
}

Bytes encode_uplink(const ClientUpdate& update, int m) {
  ByteWriter w;
  write_header(w, PayloadKind::uplink_planes, m, update.activated, update.round,
               static_cast<std::uint32_t>(update.planes.size()));
  w.u32(update.client_id);
  w.u64(update.sample_count);
  for (std::size_t l = 0; l < update.planes.size(); ++l) {
    if (update.planes[l].size() != update.activated.size()) {
      throw SpecError("encode_uplink: plane count != activated count");
    }
    const Mat& bias = update.bias_deltas[l];
    std::size_t n = update.planes[l].front().size();
    // Every plane of a layer covers the same weight tensor; rows carries
    // the full entry count and cols is 1 on the wire since the shape is
    // recovered from the downlink context.
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(1);
    for (const auto& plane : update.planes[l]) {
      if (plane.size() != n) throw SpecError("encode_uplink: ragged planes");
      PackedPlane packed = pack_plane(plane);
      w.raw(packed.bytes);
    }
    w.u32(static_cast<std::uint32_t>(bias.size()));
    for (double b : bias.data) w.f32(b);
  }
  return w.take();
}

DecodedUplink decode_uplink(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Header h = read_header(r);
  if (h.kind != PayloadKind::uplink_planes) throw DecodeError("not an uplink payload");
  DecodedUplink out;
  out.m = h.m;
  out.update.round = h.round;
  out.update.activated = h.activated;
  out.update.client_id = r.u32();
  out.update.sample_count = r.u64();
  for (std::uint32_t l = 0; l < h.layer_count; ++l) {
    std::uint64_t n = std::uint64_t(r.u32()) * r.u32();
    std::vector<std::vector<std::uint8_t>> planes;
    for (std::size_t p = 0; p < h.activated.size(); ++p) {
      PackedPlane packed;
      packed.bit_count = n;
      auto raw = r.raw(packed_size(n));
      packed.bytes.assign(raw.begin(), raw.end());
      planes.push_back(unpack_plane(packed));
    }
    std::size_t bias_len = r.u32();
    Mat bias(1, bias_len);
    for (std::size_t i = 0; i < bias_len; ++i) bias.data[i] = r.f32();
    out.update.planes.push_back(std::move(planes));
    out.update.bias_deltas.push_back(std::move(bias));
  }
  r.expect_done();
  return out;
}

Bytes encode_model_fp32(const MlpParams& params, long round, bool is_delta) {
  ByteWriter w;
  write_header(w, is_delta ? PayloadKind::delta_fp32 : PayloadKind::model_fp32, 32, {},
               round, static_cast<std::uint32_t>(params.weights.size()));
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const Mat& weight = params.weights[l];
    w.u32(static_cast<std::uint32_t>(weight.rows));
    w.u32(static_cast<std::uint32_t>(weight.cols));
    for (double v : weight.data) w.f32(v);
    const Mat& bias = params.biases[l];
    w.u32(static_cast<std::uint32_t>(bias.size()));
    for (double v : bias.data) w.f32(v);
  }
  return w.take();
}

DecodedModel decode_model_fp32(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Header h = read_header(r);
  if (h.kind != PayloadKind::model_fp32 && h.kind != PayloadKind::delta_fp32) {
    throw DecodeError("not a full-precision payload");
  }
  DecodedModel out;
  out.round = h.round;
  out.is_delta = h.kind == PayloadKind::delta_fp32;
  for (std::uint32_t l = 0; l < h.layer_count; ++l) {
    std::size_t rows = r.u32();
    std::size_t cols = r.u32();
    Mat weight(rows, cols);
    for (double& v : weight.data) v = r.f32();
    std::size_t bias_len = r.u32();
    Mat bias(1, bias_len);
    for (double& v : bias.data) v = r.f32();
    out.params.weights.push_back(std::move(weight));
    out.params.biases.push_back(std::move(bias));
  }
  r.expect_done();
  return out;
}

Bytes encode_delta_sign(std::span<const SignCompressed> layers,
                        std::span<const Mat> bias_deltas, long round) {
  if (layers.size() != bias_deltas.size()) {
    throw SpecError("encode_delta_sign: layer/bias count mismatch");
  }
  ByteWriter w;
  write_header(w, PayloadKind::delta_sign, 1, {}, round,
               static_cast<std::uint32_t>(layers.size()));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const SignCompressed& s = layers[l];
    w.u32(static_cast<std::uint32_t>(s.rows));
    w.u32(static_cast<std::uint32_t>(s.cols));
    w.f32(s.alpha);
    PackedPlane packed = pack_plane(s.positive);
    w.raw(packed.bytes);
    w.u32(static_cast<std::uint32_t>(s.zero_indices.size()));
    for (std::uint32_t z : s.zero_indices) w.u32(z);
    const Mat& bias = bias_deltas[l];
    w.u32(static_cast<std::uint32_t>(bias.size()));
    for (double v : bias.data) w.f32(v);
  }
  return w.take();
}

DecodedSign decode_delta_sign(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Header h = read_header(r);
  if (h.kind != PayloadKind::delta_sign) throw DecodeError("not a sign payload");
  DecodedSign out;
  out.round = h.round;
  for (std::uint32_t l = 0; l < h.layer_count; ++l) {
    SignCompressed s;
    s.rows = r.u32();
    s.cols = r.u32();
    s.alpha = r.f32();
    std::uint64_t n = std::uint64_t(s.rows) * s.cols;
    PackedPlane packed;
    packed.bit_count = n;
    auto raw = r.raw(packed_size(n));
    packed.bytes.assign(raw.begin(), raw.end());
    s.positive = unpack_plane(packed);
    std::size_t zeros = r.u32();
    for (std::size_t z = 0; z < zeros; ++z) {
      std::uint32_t idx = r.u32();
      if (idx >= n) throw DecodeError("zero index out of range");
      s.zero_indices.push_back(idx);
    }
    std::size_t bias_len = r.u32();
    Mat bias(1, bias_len);
    for (double& v : bias.data) v = r.f32();
    out.layers.push_back(std::move(s));
    out.bias_deltas.push_back(std::move(bias));
  }
  r.expect_done();
  return out;
}

Bytes encode_delta_quantized(std::span<const QuantCompressed> layers,
                             std::span<const Mat> bias_deltas, int m, long round) {
  if (layers.size() != bias_deltas.size()) {
    throw SpecError("encode_delta_quantized: layer/bias count mismatch");
  }
  if (m < kMinBitWidth || m > kMaxBitWidth) {
    throw SpecError("encode_delta_quantized: bit width out of [2,8]");
  }
  ByteWriter w;
  write_header(w, PayloadKind::delta_quantized, m, {}, round,
               static_cast<std::uint32_t>(layers.size()));
  const std::int32_t offset = std::int32_t(1) << (m - 1);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const QuantCompressed& q = layers[l];
    if (q.m != m) throw SpecError("encode_delta_quantized: mixed bit widths");
    w.u32(static_cast<std::uint32_t>(q.ints.rows));
    w.u32(static_cast<std::uint32_t>(q.ints.cols));
    w.f32(q.alpha);
    BitWriter bw;
    for (std::int32_t v : q.ints.data) {
      bw.put(static_cast<std::uint32_t>(v + offset), m);
    }
    w.raw(bw.bytes());
    const Mat& bias = bias_deltas[l];
    w.u32(static_cast<std::uint32_t>(bias.size()));
    for (double v : bias.data) w.f32(v);
  }
  return w.take();
}

DecodedQuant decode_delta_quantized(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Header h = read_header(r);
  if (h.kind != PayloadKind::delta_quantized) throw DecodeError("not a quantized delta");
  if (h.m < kMinBitWidth || h.m > kMaxBitWidth) throw DecodeError("bad bit width");
  DecodedQuant out;
  out.round = h.round;
  out.m = h.m;
  const std::int32_t offset = std::int32_t(1) << (h.m - 1);
  for (std::uint32_t l = 0; l < h.layer_count; ++l) {
    QuantCompressed q;
    q.m = h.m;
    std::size_t rows = r.u32();
    std::size_t cols = r.u32();
    q.alpha = r.f32();
    if (!(q.alpha > 0.0)) throw DecodeError("nonpositive step size");
    std::uint64_t n = std::uint64_t(rows) * cols;
    auto raw = r.raw(packed_size(n * h.m));
    BitReader bits(raw, n * static_cast<std::uint64_t>(h.m));
    q.ints = IntMat(rows, cols);
    for (std::uint64_t i = 0; i < n; ++i) {
      q.ints.data[i] = static_cast<std::int32_t>(bits.get(h.m)) - offset;
    }
    bits.check_padding();
    std::size_t bias_len = r.u32();
    Mat bias(1, bias_len);
    for (double& v : bias.data) v = r.f32();
    out.layers.push_back(std::move(q));
    out.bias_deltas.push_back(std::move(bias));
  }
  r.expect_done();
  return out;
}

PayloadInfo inspect_payload(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Header h = read_header(r);
  PayloadInfo info;
  info.version = kWireVersion;
  info.kind = h.kind;
  info.m = h.m;
  info.activated = h.activated;
  info.round = h.round;
  info.byte_size = payload.size();

  if (h.kind == PayloadKind::uplink_planes) {
    info.has_client = true;
    info.client_id = r.u32();
    info.sample_count = r.u64();
  }
  for (std::uint32_t l = 0; l < h.layer_count; ++l) {
    LayerSummary s;
    s.rows = r.u32();
    s.cols = r.u32();
    std::uint64_t n = std::uint64_t(s.rows) * s.cols;
    switch (h.kind) {
      case PayloadKind::downlink_quantized:
        s.alpha = r.f32();
        s.has_alpha = true;
        r.raw(packed_size(n * static_cast<std::uint64_t>(h.m)));
        break;
      case PayloadKind::uplink_planes:
        for (std::size_t p = 0; p < h.activated.size(); ++p) r.raw(packed_size(n));
        break;
      case PayloadKind::model_fp32:
      case PayloadKind::delta_fp32:
        r.raw(4 * n);
        break;
      case PayloadKind::delta_sign: {
        s.alpha = r.f32();
        s.has_alpha = true;
        r.raw(packed_size(n));
        std::size_t zeros = r.u32();
        r.raw(4 * zeros);
        break;
      }
      case PayloadKind::delta_quantized:
        s.alpha = r.f32();
        s.has_alpha = true;
        r.raw(packed_size(n * static_cast<std::uint64_t>(h.m)));
        break;
    }
    s.bias_len = r.u32();
    r.raw(4 * s.bias_len);
    info.layers.push_back(s);
  }
  r.expect_done();
  return info;
}

std::string describe(const PayloadInfo& info) {
  static const char* kNames[] = {"downlink-quantized", "uplink-planes", "model-fp32",
                                 "delta-fp32",         "delta-sign",    "delta-quantized"};
  std::ostringstream os;
  os << "kind: " << kNames[static_cast<int>(info.kind)] << "\n";
  os << "version: " << info.version << "\n";
  os << "round: " << info.round << "\n";
  os << "m: " << info.m << "\n";
  if (!info.activated.empty()) {
    os << "activated:";
    for (int i : info.activated) os << " " << i;
    os << "\n";
  }
  if (info.has_client) {
    os << "client: " << info.client_id << " samples: " << info.sample_count << "\n";
  }
  os << "layers: " << info.layers.size() << "\n";
  for (std::size_t l = 0; l < info.layers.size(); ++l) {
    const LayerSummary& s = info.layers[l];
    os << "  layer " << l << ": " << s.rows << "x" << s.cols << " bias " << s.bias_len;
    if (s.has_alpha) os << " alpha " << s.alpha;
    os << "\n";
  }
  os << "bytes: " << info.byte_size << "\n";
  return os.str();
}

double bpp(const WireStats& stats, Direction direction) {
  if (stats.parameter_count == 0) {
    throw AccountingError("bpp: parameter count not set");
  }
  std::uint64_t bits =
      direction == Direction::uplink ? stats.uplink_bits : stats.downlink_bits;
  std::uint64_t transfers =
      direction == Direction::uplink ? stats.uplink_transfers : stats.downlink_transfers;
  if (transfers == 0) throw AccountingError("bpp: no transfers recorded");
  return static_cast<double>(bits) /
         (static_cast<double>(transfers) * static_cast<double>(stats.parameter_count));
}

Bytes read_payload_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_payload_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace fedbif
