#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fedbif/matrix.hpp"
#include "fedbif/rng.hpp"

namespace fedbif {

enum class Activation { relu };

struct MlpSpec {
  std::vector<std::size_t> layer_widths;  // input, hidden..., output
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t num_layers() const { return layer_widths.size() - 1; }
};

/// Parameters of a dense network. Weight l maps width[l] -> width[l+1] and
/// is stored (in x out); bias l is (1 x out). Also reused as a value bag for
/// model deltas and gradients, which share the shapes exactly.
template <typename T>
struct MlpParamsT {
  std::vector<MatT<T>> weights;
  std::vector<MatT<T>> biases;

  std::size_t num_layers() const { return weights.size(); }
  std::size_t weight_count() const;
  std::size_t bias_count() const;
  std::size_t parameter_count() const { return weight_count() + bias_count(); }

  bool operator==(const MlpParamsT&) const = default;
};

using MlpParams = MlpParamsT<double>;
using MlpParamsF = MlpParamsT<float>;

template <typename T>
using GradientsT = MlpParamsT<T>;  // shapes mirror the parameters exactly

/// Kaiming-normal weights (variance 2/fan_in), zero biases; deterministic
/// under the spec seed.
MlpParams init_mlp(const MlpSpec& spec);

MlpParamsF params_to_float(const MlpParams& p);
MlpParams params_to_double(const MlpParamsF& p);

template <typename T>
struct ForwardCacheT {
  MatT<T> input;
  std::vector<MatT<T>> pre_activations;  // one per layer
  std::vector<MatT<T>> activations;      // post-ReLU, hidden layers only
};

/// Runs the network on a batch (rows = samples). The parameters are passed
/// in on every call, which is what lets bit freezing substitute
/// reconstructed weights without the engine knowing.
template <typename T>
MatT<T> forward(const MlpParamsT<T>& params, const MatT<T>& batch,
                ForwardCacheT<T>* cache = nullptr);

/// Mean softmax cross-entropy and gradients for every parameter, plus the
/// gradient sensitivity the STE consumes (grads.weights[l] is df/dW_l at the
/// exact weight values used in forward).
template <typename T>
std::pair<double, GradientsT<T>> loss_and_backward(const MlpParamsT<T>& params,
                                                   const ForwardCacheT<T>& cache,
                                                   const MatT<T>& logits,
                                                   std::span<const int> labels);

/// Forward-only loss, for evaluation.
template <typename T>
double softmax_cross_entropy(const MatT<T>& logits, std::span<const int> labels);

/// params <- params - lr * grads, elementwise.
template <typename T>
void sgd_step(MlpParamsT<T>& params, const GradientsT<T>& grads, double lr);

/// Fraction of samples whose argmax logit equals the label.
template <typename T>
double accuracy(const MlpParamsT<T>& params, const MatT<T>& features,
                std::span<const int> labels);

extern template struct MlpParamsT<float>;
extern template struct MlpParamsT<double>;
extern template MatT<float> forward<float>(const MlpParamsT<float>&, const MatT<float>&, ForwardCacheT<float>*);
extern template MatT<double> forward<double>(const MlpParamsT<double>&, const MatT<double>&, ForwardCacheT<double>*);
extern template std::pair<double, GradientsT<float>> loss_and_backward<float>(const MlpParamsT<float>&, const ForwardCacheT<float>&, const MatT<float>&, std::span<const int>);
extern template std::pair<double, GradientsT<double>> loss_and_backward<double>(const MlpParamsT<double>&, const ForwardCacheT<double>&, const MatT<double>&, std::span<const int>);
extern template double softmax_cross_entropy<float>(const MatT<float>&, std::span<const int>);
extern template double softmax_cross_entropy<double>(const MatT<double>&, std::span<const int>);
extern template void sgd_step<float>(MlpParamsT<float>&, const GradientsT<float>&, double);
extern template void sgd_step<double>(MlpParamsT<double>&, const GradientsT<double>&, double);
extern template double accuracy<float>(const MlpParamsT<float>&, const MatT<float>&, std::span<const int>);
extern template double accuracy<double>(const MlpParamsT<double>&, const MatT<double>&, std::span<const int>);

}  // namespace fedbif
