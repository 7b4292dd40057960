#include "fedbif/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedbif {

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) {
    throw SpecError("MlpSpec: need at least input and output widths");
  }
  for (std::size_t w : layer_widths) {
    if (w == 0) throw SpecError("MlpSpec: layer widths must be >= 1");
  }
}

template <typename T>
std::size_t MlpParamsT<T>::weight_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  return n;
}

template <typename T>
std::size_t MlpParamsT<T>::bias_count() const {
  std::size_t n = 0;
  for (const auto& b : biases) n += b.size();
  return n;
}

MlpParams init_mlp(const MlpSpec& spec) {
  spec.validate();
  Rng rng(derive_stream(spec.seed, {0x1217ULL}));
  MlpParams p;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    std::size_t in = spec.layer_widths[l];
    std::size_t out = spec.layer_widths[l + 1];
    Mat w(in, out);
    double sigma = std::sqrt(2.0 / static_cast<double>(in));
    for (double& v : w.data) v = sigma * rng.normal();
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(1, out, 0.0);
  }
  return p;
}

MlpParamsF params_to_float(const MlpParams& p) {
  MlpParamsF out;
  for (const auto& w : p.weights) out.weights.push_back(to_float(w));
  for (const auto& b : p.biases) out.biases.push_back(to_float(b));
  return out;
}

MlpParams params_to_double(const MlpParamsF& p) {
  MlpParams out;
  for (const auto& w : p.weights) out.weights.push_back(to_double(w));
  for (const auto& b : p.biases) out.biases.push_back(to_double(b));
  return out;
}

namespace {

// out = a (r x k) * b (k x c)
template <typename T>
MatT<T> matmul(const MatT<T>& a, const MatT<T>& b) {
  MatT<T> out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      T aik = a(i, k);
      if (aik == T(0)) continue;
      const T* brow = &b.data[k * b.cols];
      T* orow = &out.data[i * out.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// out = a^T (cols x rows of a) * b
template <typename T>
MatT<T> matmul_at_b(const MatT<T>& a, const MatT<T>& b) {
  MatT<T> out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const T* arow = &a.data[k * a.cols];
    const T* brow = &b.data[k * b.cols];
    for (std::size_t i = 0; i < a.cols; ++i) {
      T aki = arow[i];
      if (aki == T(0)) continue;
      T* orow = &out.data[i * out.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

// out = a * b^T
template <typename T>
MatT<T> matmul_a_bt(const MatT<T>& a, const MatT<T>& b) {
  MatT<T> out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* arow = &a.data[i * a.cols];
    for (std::size_t j = 0; j < b.rows; ++j) {
      const T* brow = &b.data[j * b.cols];
      T acc = T(0);
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
void add_row_vector(MatT<T>& m, const MatT<T>& bias) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    T* row = &m.data[i * m.cols];
    for (std::size_t j = 0; j < m.cols; ++j) row[j] += bias.data[j];
  }
}

template <typename T>
void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) throw DimensionError("labels/batch size mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DataError("label " + std::to_string(y) + " out of [0, " +
                      std::to_string(classes) + ")");
    }
  }
}

// Row-wise softmax probabilities, log-sum-exp stabilized. Returns mean loss.
template <typename T>
double softmax_rows(const MatT<T>& logits, std::span<const int> labels, MatT<T>* probs) {
  check_labels<T>(labels, logits.rows, logits.cols);
  if (probs) *probs = MatT<T>(logits.rows, logits.cols);
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const T* row = &logits.data[i * logits.cols];
    T mx = row[0];
    for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      sum += std::exp(static_cast<double>(row[j] - mx));
    }
    double lse = std::log(sum) + static_cast<double>(mx);
    loss += lse - static_cast<double>(row[static_cast<std::size_t>(labels[i])]);
    if (probs) {
      for (std::size_t j = 0; j < logits.cols; ++j) {
        (*probs)(i, j) = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
      }
    }
  }
  return loss / static_cast<double>(logits.rows);
}

}  // namespace

template <typename T>
MatT<T> forward(const MlpParamsT<T>& params, const MatT<T>& batch,
                ForwardCacheT<T>* cache) {
  if (params.weights.empty()) throw SpecError("forward: empty model");
  if (batch.cols != params.weights.front().rows) {
    throw DimensionError("forward: batch width " + std::to_string(batch.cols) +
                         " != input width " + std::to_string(params.weights.front().rows));
  }
  if (cache) {
    cache->input = batch;
    cache->pre_activations.clear();
    cache->activations.clear();
  }
  MatT<T> act = batch;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    MatT<T> z = matmul(act, params.weights[l]);
    add_row_vector(z, params.biases[l]);
    if (cache) cache->pre_activations.push_back(z);
    if (l + 1 < params.weights.size()) {
      for (T& v : z.data) v = std::max(v, T(0));  // ReLU on hidden layers
      if (cache) cache->activations.push_back(z);
    }
    act = std::move(z);
  }
  return act;
}

template <typename T>
double softmax_cross_entropy(const MatT<T>& logits, std::span<const int> labels) {
  return softmax_rows<T>(logits, labels, nullptr);
}

template <typename T>
std::pair<double, GradientsT<T>> loss_and_backward(const MlpParamsT<T>& params,
                                                   const ForwardCacheT<T>& cache,
                                                   const MatT<T>& logits,
                                                   std::span<const int> labels) {
  MatT<T> probs;
  double loss = softmax_rows<T>(logits, labels, &probs);

  const std::size_t batch = logits.rows;
  const std::size_t layers = params.weights.size();

  // d = dL/dz for the output layer: (softmax - onehot) / batch
  MatT<T> d = probs;
  const T inv_batch = T(1) / static_cast<T>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    d(i, static_cast<std::size_t>(labels[i])) -= T(1);
  }
  for (T& v : d.data) v *= inv_batch;

  GradientsT<T> grads;
  grads.weights.resize(layers);
  grads.biases.resize(layers);

  for (std::size_t l = layers; l-- > 0;) {
    const MatT<T>& below = l == 0 ? cache.input : cache.activations[l - 1];
    grads.weights[l] = matmul_at_b(below, d);
    MatT<T> db(1, d.cols);
    for (std::size_t i = 0; i < d.rows; ++i) {
      for (std::size_t j = 0; j < d.cols; ++j) db.data[j] += d(i, j);
    }
    grads.biases[l] = std::move(db);
    if (l > 0) {
      MatT<T> d_prev = matmul_a_bt(d, params.weights[l]);
      const MatT<T>& z = cache.pre_activations[l - 1];
      for (std::size_t i = 0; i < d_prev.data.size(); ++i) {
        if (z.data[i] <= T(0)) d_prev.data[i] = T(0);
      }
      d = std::move(d_prev);
    }
  }
  return {loss, std::move(grads)};
}

template <typename T>
void sgd_step(MlpParamsT<T>& params, const GradientsT<T>& grads, double lr) {
  if (lr < 0.0) throw SpecError("sgd_step: learning rate must be >= 0");
  if (grads.weights.size() != params.weights.size()) {
    throw DimensionError("sgd_step: layer count mismatch");
  }
  const T step = static_cast<T>(lr);
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    require_same_shape(params.weights[l], grads.weights[l], "sgd_step");
    require_same_shape(params.biases[l], grads.biases[l], "sgd_step");
    for (std::size_t i = 0; i < params.weights[l].data.size(); ++i) {
      params.weights[l].data[i] -= step * grads.weights[l].data[i];
    }
    for (std::size_t i = 0; i < params.biases[l].data.size(); ++i) {
      params.biases[l].data[i] -= step * grads.biases[l].data[i];
    }
  }
}

template <typename T>
double accuracy(const MlpParamsT<T>& params, const MatT<T>& features,
                std::span<const int> labels) {
  MatT<T> logits = forward(params, features);
  check_labels<T>(labels, logits.rows, logits.cols);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const T* row = &logits.data[i * logits.cols];
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == static_cast<std::size_t>(labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows);
}

template struct MlpParamsT<float>;
template struct MlpParamsT<double>;
template MatT<float> forward<float>(const MlpParamsT<float>&, const MatT<float>&, ForwardCacheT<float>*);
template MatT<double> forward<double>(const MlpParamsT<double>&, const MatT<double>&, ForwardCacheT<double>*);
template std::pair<double, GradientsT<float>> loss_and_backward<float>(const MlpParamsT<float>&, const ForwardCacheT<float>&, const MatT<float>&, std::span<const int>);
template std::pair<double, GradientsT<double>> loss_and_backward<double>(const MlpParamsT<double>&, const ForwardCacheT<double>&, const MatT<double>&, std::span<const int>);
template double softmax_cross_entropy<float>(const MatT<float>&, std::span<const int>);
template double softmax_cross_entropy<double>(const MatT<double>&, std::span<const int>);
template void sgd_step<float>(MlpParamsT<float>&, const GradientsT<float>&, double);
template void sgd_step<double>(MlpParamsT<double>&, const GradientsT<double>&, double);
template double accuracy<float>(const MlpParamsT<float>&, const MatT<float>&, std::span<const int>);
template double accuracy<double>(const MlpParamsT<double>&, const MatT<double>&, std::span<const int>);

}  // namespace fedbif
