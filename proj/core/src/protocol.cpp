#include "fedbif/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedbif {

namespace {

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Mat round_f32(const Mat& m) {
  Mat out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = round_f32(m.data[i]);
  return out;
}

}  // namespace

std::size_t QuantizedModel::weight_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  return n;
}

std::size_t QuantizedModel::parameter_count() const {
  std::size_t n = weight_count();
  for (const auto& b : biases) n += b.size();
  return n;
}

void RoundConfig::validate() const {
  if (clients_total == 0 || clients_per_round == 0) {
    throw ConfigError("RoundConfig: client counts must be >= 1");
  }
  if (clients_per_round > clients_total) {
    throw ConfigError("RoundConfig: clients_per_round exceeds clients_total");
  }
  if (local_epochs == 0) throw ConfigError("RoundConfig: local_epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("RoundConfig: batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("RoundConfig: learning rate must be >= 0");
  if (m < kMinBitWidth || m > kMaxBitWidth) {
    throw ConfigError("RoundConfig: bit width out of [2,8]");
  }
  if (schedule.m != m) throw ConfigError("RoundConfig: schedule bit width differs from m");
  schedule.validate();
}

QuantizedModel server_quantize(const GlobalModel& global, int m,
                               std::span<const int> activated) {
  QuantizedModel qm;
  qm.m = m;
  qm.round = global.round;
  qm.activated.assign(activated.begin(), activated.end());
  std::sort(qm.activated.begin(), qm.activated.end(), std::greater<int>());
  for (std::size_t l = 0; l < global.params.weights.size(); ++l) {
    const Mat& w = global.params.weights[l];
    if (!all_finite(w)) throw DataError("server_quantize: non-finite weights");
    double alpha = round_f32(step_size(w, m));
    qm.alphas.push_back(alpha);
    qm.weights.push_back(quantize(w, QuantParams{alpha, m}));
    qm.biases.push_back(round_f32(global.params.biases[l]));
  }
  return qm;
}

namespace {

template <typename T>
ClientTrainResult client_train_impl(const QuantizedModel& qm, const Dataset& shard,
                                    const RoundConfig& cfg, std::uint32_t client_id,
                                    Rng& rng) {
  const std::size_t layers = qm.num_layers();

  std::vector<VirtualBitLayerT<T>> vbl;
  vbl.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    std::size_t fan_in = qm.weights[l].rows;
    vbl.push_back(make_virtual_layer<T>(qm.weights[l], qm.m, qm.alphas[l],
                                        qm.activated, fan_in, rng));
  }

  MlpParamsT<T> params;
  params.weights.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const Mat& b = qm.biases[l];
    MatT<T> bt(b.rows, b.cols);
    for (std::size_t i = 0; i < b.size(); ++i) bt.data[i] = static_cast<T>(b.data[i]);
    params.biases.push_back(std::move(bt));
  }

  MatT<T> features(shard.features.rows, shard.features.cols);
  for (std::size_t i = 0; i < features.size(); ++i) {
    features.data[i] = static_cast<T>(shard.features.data[i]);
  }

  double loss_sum = 0.0;
  std::size_t steps = 0;
  std::vector<std::size_t> order(shard.n());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t count = std::min(cfg.batch_size, order.size() - start);
      MatT<T> batch(count, features.cols);
      std::vector<int> labels(count);
      for (std::size_t r = 0; r < count; ++r) {
        std::size_t src = order[start + r];
        std::copy_n(&features.data[src * features.cols], features.cols,
                    &batch.data[r * features.cols]);
        labels[r] = shard.labels[src];
      }

      for (std::size_t l = 0; l < layers; ++l) params.weights[l] = reconstruct(vbl[l]);
      ForwardCacheT<T> cache;
      MatT<T> logits = forward(params, batch, &cache);
      auto [loss, grads] = loss_and_backward(params, cache, logits, std::span<const int>(labels));
      loss_sum += loss;
      ++steps;

      const T step = static_cast<T>(cfg.lr);
      for (std::size_t l = 0; l < layers; ++l) {
        MatT<T> g = ste_backward(grads.weights[l], vbl[l].frozen.rows, vbl[l].frozen.cols);
        for (auto& v : vbl[l].virtual_bits) {
          for (std::size_t i = 0; i < v.size(); ++i) v.data[i] -= step * g.data[i];
        }
        for (std::size_t i = 0; i < params.biases[l].size(); ++i) {
          params.biases[l].data[i] -= step * grads.biases[l].data[i];
        }
      }
    }
  }

  ClientTrainResult result;
  result.mean_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
  ClientUpdate& up = result.update;
  up.client_id = client_id;
  up.round = qm.round;
  up.activated = qm.activated;
  up.sample_count = shard.n();
  up.planes.resize(layers);
  up.bias_deltas.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    for (const auto& v : vbl[l].virtual_bits) up.planes[l].push_back(step_bits(v));
    Mat delta(1, params.biases[l].cols);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta.data[i] = round_f32(static_cast<double>(params.biases[l].data[i]) -
                                qm.biases[l].data[i]);
    }
    up.bias_deltas[l] = std::move(delta);
  }
  return result;
}

}  // namespace

ClientTrainResult client_train(const QuantizedModel& qm, const Dataset& shard,
                               const RoundConfig& cfg, std::uint32_t client_id,
                               Rng& rng) {
  if (shard.n() == 0) throw DataError("client_train: empty shard");
  if (qm.activated.empty()) throw ProtocolError("client_train: no activated bit");
  if (cfg.precision == Precision::fp32) {
    return client_train_impl<float>(qm, shard, cfg, client_id, rng);
  }
  return client_train_impl<double>(qm, shard, cfg, client_id, rng);
}

GlobalModel aggregate(std::span<const ClientUpdate> updates, const QuantizedModel& qm,
                      std::span<const double> weights) {
  if (updates.empty()) throw ProtocolError("aggregate: no updates");
  if (weights.size() != updates.size()) {
    throw ProtocolError("aggregate: weight/update count mismatch");
  }
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) {
    throw ProtocolError("aggregate: weights sum to " + std::to_string(total));
  }
  for (const ClientUpdate& u : updates) {
    if (u.round != qm.round) throw ProtocolError("aggregate: update from another round");
    if (u.activated != qm.activated) {
      throw ProtocolError("aggregate: update trained a different bit");
    }
    if (u.planes.size() != qm.num_layers()) {
      throw ProtocolError("aggregate: layer count mismatch");
    }
  }

  GlobalModel out;
  out.round = qm.round + 1;
  for (std::size_t l = 0; l < qm.num_layers(); ++l) {
    const IntMat& ints = qm.weights[l];
    BitPlaneSet bits = decompose(ints, qm.m);
    IntMat frozen = frozen_sum(bits, qm.activated);

    Mat w(ints.rows, ints.cols);
    for (std::size_t idx = 0; idx < ints.size(); ++idx) {
      double acc = 0.0;
      for (std::size_t pos = 0; pos < qm.activated.size(); ++pos) {
        double mean_bit = 0.0;
        for (std::size_t k = 0; k < updates.size(); ++k) {
          const auto& plane = updates[k].planes[l][pos];
          if (plane.size() != ints.size()) {
            throw ProtocolError("aggregate: plane size mismatch");
          }
          mean_bit += weights[k] * static_cast<double>(plane[idx]);
        }
        acc += std::ldexp(mean_bit, qm.activated[pos]);
      }
      w.data[idx] = qm.alphas[l] * (acc + static_cast<double>(frozen.data[idx]));
    }
    out.params.weights.push_back(std::move(w));

    Mat b = qm.biases[l];
    for (std::size_t k = 0; k < updates.size(); ++k) {
      const Mat& delta = updates[k].bias_deltas[l];
      require_same_shape(b, delta, "aggregate biases");
      for (std::size_t i = 0; i < b.size(); ++i) b.data[i] += weights[k] * delta.data[i];
    }
    out.params.biases.push_back(std::move(b));
  }
  return out;
}

std::vector<double> proportional_weights(std::span<const std::uint64_t> sample_counts) {
  if (sample_counts.empty()) throw ProtocolError("proportional_weights: empty");
  double total = 0.0;
  for (std::uint64_t c : sample_counts) {
    if (c == 0) throw ProtocolError("proportional_weights: zero sample count");
    total += static_cast<double>(c);
  }
  std::vector<double> p;
  p.reserve(sample_counts.size());
  for (std::uint64_t c : sample_counts) p.push_back(static_cast<double>(c) / total);
  return p;
}

std::vector<std::size_t> select_clients(std::size_t total, std::size_t k,
                                        std::uint64_t seed, long round) {
  if (k > total) throw ProtocolError("select_clients: k exceeds population");
  std::vector<std::size_t> ids(total);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_stream(seed, {0x5e7ecULL, static_cast<std::uint64_t>(round)}));
  // Partial Fisher-Yates: the first k entries end up uniform without
  // replacement.
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(total - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace fedbif
