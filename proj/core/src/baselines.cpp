#include "fedbif/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedbif {

void CompressorKind::validate() const {
  switch (tag) {
    case Tag::none:
      return;
    case Tag::signsgd:
      if (!(signsgd_alpha > 0.0)) throw ConfigError("signsgd: alpha must be positive");
      return;
    case Tag::fedpaq:
      if (fedpaq_m < kMinBitWidth || fedpaq_m > kMaxBitWidth) {
        throw ConfigError("fedpaq: bit width out of [2,8]");
      }
      return;
    case Tag::lfl:
      if (lfl_m_up < 1 || lfl_m_up > kMaxBitWidth || lfl_m_down < 1 ||
          lfl_m_down > kMaxBitWidth) {
        throw ConfigError("lfl: bit widths out of [1,8]");
      }
      return;
  }
  throw ConfigError("CompressorKind: unknown tag");
}

Mat SignCompressed::value() const {
  Mat out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = positive[i] ? alpha : -alpha;
  }
  for (std::uint32_t idx : zero_indices) out.data[idx] = 0.0;
  return out;
}

SignCompressed signsgd_compress(const Mat& delta, double alpha) {
  if (!(alpha > 0.0)) throw SpecError("signsgd_compress: alpha must be positive");
  if (!all_finite(delta)) throw DataError("signsgd_compress: non-finite input");
  SignCompressed out;
  out.rows = delta.rows;
  out.cols = delta.cols;
  out.alpha = static_cast<double>(static_cast<float>(alpha));
  out.positive.resize(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    double v = delta.data[i];
    out.positive[i] = v > 0.0 ? 1 : 0;
    if (v == 0.0) out.zero_indices.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

Mat QuantCompressed::value() const { return dequantize(ints, alpha); }

QuantCompressed fedpaq_compress(const Mat& delta, int m) {
  QuantCompressed out;
  out.m = m;
  out.alpha = static_cast<double>(static_cast<float>(step_size(delta, m)));
  out.ints = quantize(delta, QuantParams{out.alpha, m});
  return out;
}

QuantCompressed lfl_compress(const Mat& tensor, int m, Rng& rng) {
  QuantCompressed out;
  out.m = m;
  out.alpha = static_cast<double>(static_cast<float>(step_size(tensor, m)));
  out.ints = stochastic_quantize(tensor, QuantParams{out.alpha, m}, rng);
  return out;
}

GlobalModel fedavg_apply(const GlobalModel& base, std::span<const MlpParams> deltas,
                         std::span<const double> weights) {
  if (deltas.size() != weights.size()) {
    throw ProtocolError("fedavg_apply: delta/weight count mismatch");
  }
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!deltas.empty() && std::abs(total - 1.0) > 1e-12) {
    throw ProtocolError("fedavg_apply: weights sum to " + std::to_string(total));
  }
  GlobalModel out;
  out.round = base.round + 1;
  out.params = base.params;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    const MlpParams& d = deltas[k];
    if (d.weights.size() != out.params.weights.size()) {
      throw DimensionError("fedavg_apply: layer count mismatch");
    }
    for (std::size_t l = 0; l < d.weights.size(); ++l) {
      require_same_shape(out.params.weights[l], d.weights[l], "fedavg_apply");
      require_same_shape(out.params.biases[l], d.biases[l], "fedavg_apply");
      for (std::size_t i = 0; i < d.weights[l].size(); ++i) {
        out.params.weights[l].data[i] += weights[k] * d.weights[l].data[i];
      }
      for (std::size_t i = 0; i < d.biases[l].size(); ++i) {
        out.params.biases[l].data[i] += weights[k] * d.biases[l].data[i];
      }
    }
  }
  return out;
}

namespace {

template <typename T>
LocalSgdResult train_local_sgd_impl(const MlpParams& start, const Dataset& shard,
                                    std::size_t epochs, std::size_t batch_size,
                                    double lr, Rng& rng) {
  MlpParamsT<T> params;
  for (const auto& w : start.weights) {
    MatT<T> wt(w.rows, w.cols);
    for (std::size_t i = 0; i < w.size(); ++i) wt.data[i] = static_cast<T>(w.data[i]);
    params.weights.push_back(std::move(wt));
  }
  for (const auto& b : start.biases) {
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
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t startrow = 0; startrow < order.size(); startrow += batch_size) {
      std::size_t count = std::min(batch_size, order.size() - startrow);
      MatT<T> batch(count, features.cols);
      std::vector<int> labels(count);
      for (std::size_t r = 0; r < count; ++r) {
        std::size_t src = order[startrow + r];
        std::copy_n(&features.data[src * features.cols], features.cols,
                    &batch.data[r * features.cols]);
        labels[r] = shard.labels[src];
      }
      ForwardCacheT<T> cache;
      MatT<T> logits = forward(params, batch, &cache);
      auto [loss, grads] = loss_and_backward(params, cache, logits, std::span<const int>(labels));
      sgd_step(params, grads, lr);
      loss_sum += loss;
      ++steps;
    }
  }

  LocalSgdResult out;
  out.mean_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
  if constexpr (std::is_same_v<T, double>) {
    out.params = std::move(params);
  } else {
    out.params = params_to_double(params);
  }
  return out;
}

}  // namespace

LocalSgdResult train_local_sgd(const MlpParams& start, const Dataset& shard,
                               std::size_t epochs, std::size_t batch_size, double lr,
                               Precision precision, Rng& rng) {
  if (shard.n() == 0) throw DataError("train_local_sgd: empty shard");
  if (precision == Precision::fp32) {
    return train_local_sgd_impl<float>(start, shard, epochs, batch_size, lr, rng);
  }
  return train_local_sgd_impl<double>(start, shard, epochs, batch_size, lr, rng);
}

}  // namespace fedbif
