#include "tapid/adam.hpp"

#include <cmath>

#include "tapid/simd/kernels.hpp"

namespace tapid {

template <>
void adam_step<float>(std::span<float> weights, std::span<const float> gradients,
                      AdamMoments<float>& state, double learning_rate, std::uint64_t t,
                      const AdamHyper& hyper) {
  if (t == 0) throw InvalidInput("adam_step: t must be >= 1");
  if (weights.size() != gradients.size() || state.m.size() != weights.size()) {
    throw InvalidInput("adam_step: size mismatch");
  }
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  simd::active_kernels().sadam(weights.data(), gradients.data(), state.m.data(), state.v.data(),
                               weights.size(), static_cast<float>(learning_rate),
                               static_cast<float>(hyper.beta1), static_cast<float>(hyper.beta2),
                               static_cast<float>(hyper.epsilon), static_cast<float>(bc1),
                               static_cast<float>(bc2));
}

template <>
void adam_step<double>(std::span<double> weights, std::span<const double> gradients,
                       AdamMoments<double>& state, double learning_rate, std::uint64_t t,
                       const AdamHyper& hyper) {
  if (t == 0) throw InvalidInput("adam_step: t must be >= 1");
  if (weights.size() != gradients.size() || state.m.size() != weights.size()) {
    throw InvalidInput("adam_step: size mismatch");
  }
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double g = gradients[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    weights[i] -= learning_rate * mhat / (std::sqrt(vhat) + hyper.epsilon);
  }
}

template <class T>
AdamOptimizer<T>::AdamOptimizer(const std::vector<NamedTensor<T>>& weights, double learning_rate,
                                AdamHyper hyper)
    : lr_(learning_rate), hyper_(hyper) {
  if (!(learning_rate > 0.0)) throw InvalidInput("adam: learning rate must be positive");
  for (const auto& w : weights) state_.emplace_back(w.tensor.size());
}

template <class T>
void AdamOptimizer<T>::step(std::vector<NamedTensor<T>>& weights,
                            const std::vector<NamedTensor<T>>& gradients) {
  if (weights.size() != state_.size() || gradients.size() != state_.size()) {
    throw InvalidInput("adam: parameter list changed between steps");
  }
  ++t_;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    adam_step<T>(weights[i].tensor.data, gradients[i].tensor.data, state_[i], lr_, t_, hyper_);
  }
}

template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

}  // namespace tapid
