#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tapid/tensor.hpp"

namespace tapid {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators for one parameter array.
template <class T>
struct AdamMoments {
  std::vector<T> m, v;

  explicit AdamMoments(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// Bias-corrected Adam update; `t` is the 1-based step count.
template <class T>
void adam_step(std::span<T> weights, std::span<const T> gradients, AdamMoments<T>& state,
               double learning_rate, std::uint64_t t, const AdamHyper& hyper = {});

template <>
void adam_step<float>(std::span<float>, std::span<const float>, AdamMoments<float>&, double,
                      std::uint64_t, const AdamHyper&);
template <>
void adam_step<double>(std::span<double>, std::span<const double>, AdamMoments<double>&, double,
                       std::uint64_t, const AdamHyper&);

/// Adam over a list of named arrays with a shared step counter.
template <class T>
class AdamOptimizer {
 public:
  AdamOptimizer(const std::vector<NamedTensor<T>>& weights, double learning_rate,
                AdamHyper hyper = {});

  void step(std::vector<NamedTensor<T>>& weights, const std::vector<NamedTensor<T>>& gradients);
  std::uint64_t steps() const { return t_; }

 private:
  double lr_;
  AdamHyper hyper_;
  std::uint64_t t_ = 0;
  std::vector<AdamMoments<T>> state_;
};

extern template class AdamOptimizer<float>;
extern template class AdamOptimizer<double>;

}  // namespace tapid
