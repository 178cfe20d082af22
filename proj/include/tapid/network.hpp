#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tapid/tensor.hpp"

namespace tapid {

struct ConvLayerSpec {
  std::size_t filters = 32;
  bool pool_after = false;

  bool operator==(const ConvLayerSpec&) const = default;
};

struct FeatureShape {
  std::size_t channels, height, width;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const FeatureShape&) const = default;
};

/// CNN description: a stack of 3x3/stride-1/same-padded conv layers (ReLU,
/// optional 2x2/stride-2 max-pool with floor semantics), then two hidden fc
/// layers of `embedding_width` units (ReLU + dropout) and a softmax
/// classification layer.
struct NetworkSpec {
  std::size_t input_height = 25;
  std::size_t input_width = 150;
  std::vector<ConvLayerSpec> convs;
  std::size_t embedding_width = 256;
  std::size_t num_classes = 50;
  double dropout_rate = 0.4;
  /// 6, 9 or 12 for the standard stacks; 0 for a custom stack.
  int depth_variant = 0;

  /// Standard stacks. 6: 32,64,128 each pooled. 9: every conv duplicated,
  /// pool after 2nd/4th/6th. 12: every conv triplicated, pool after
  /// 3rd/6th/9th.
  static NetworkSpec standard(int depth, std::size_t embedding_width, std::size_t num_classes,
                              double dropout_rate = 0.4);

  void validate() const;

  /// Feature-map shape after each conv layer (post-pool where pooled).
  std::vector<FeatureShape> shape_chain() const;
  std::size_t flatten_size() const;

  /// Names and shapes of all weight arrays, in serialization order.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_layout() const;
  std::size_t parameter_count() const;

  bool operator==(const NetworkSpec&) const = default;
};

/// Everything forward() computes that backward() needs.
template <class T>
struct ForwardCache {
  std::size_t batch = 0;
  /// conv_inputs[i]: input of conv i, [B, C, H, W] flattened.
  std::vector<std::vector<T>> conv_inputs;
  /// conv_relu[i]: post-ReLU conv output before pooling.
  std::vector<std::vector<T>> conv_relu;
  /// pool_argmax[i]: per pooled output, flat index into conv_relu[i].
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<T> flat;             // [B, flatten]
  std::vector<T> hidden1, hidden2;  // post-ReLU, pre-dropout, [B, E]
  std::vector<T> mask1, mask2;      // inverted-dropout multipliers (empty at inference)
  std::vector<T> dropped1, dropped2;
  Tensor<T> logits;         // [B, classes]
  Tensor<T> probabilities;  // [B, classes]
};

template <class T>
struct GradientResult {
  std::vector<NamedTensor<T>> gradients;  // same layout as the weights
  double loss = 0.0;                      // mean categorical cross-entropy
};

template <class T>
class Network {
 public:
  Network(NetworkSpec spec, std::vector<NamedTensor<T>> weights);

  /// Fan-in scaled Gaussian weights (std = sqrt(2 / fan_in)), zero biases.
  static Network initialized(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<NamedTensor<T>>& weights() const { return weights_; }
  std::vector<NamedTensor<T>>& mutable_weights() { return weights_; }

  /// batch: [B, 1, H, W] with pixels in [0, 1]. Dropout is applied only in
  /// train mode, with masks drawn from `seed`.
  ForwardCache<T> forward(const Tensor<T>& batch, bool train_mode, std::uint64_t seed = 0) const;

  GradientResult<T> backward(const ForwardCache<T>& cache, std::span<const int> labels) const;

  /// forward + backward in one call.
  GradientResult<T> gradients(const Tensor<T>& batch, std::span<const int> labels,
                              bool train_mode = false, std::uint64_t seed = 0) const;

  /// Post-ReLU output of the second hidden fc layer (inference mode), [B, E].
  Tensor<T> embed(const Tensor<T>& batch) const;

 private:
  NetworkSpec spec_;
  std::vector<NamedTensor<T>> weights_;
};

/// Mean categorical cross-entropy of probabilities against labels.
template <class T>
double cross_entropy(const Tensor<T>& probabilities, std::span<const int> labels);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace tapid
