#pragma once

#include <array>
#include <span>
#include <vector>

#include "tapid/signal.hpp"

namespace tapid {

inline constexpr std::size_t kStatsPerSignal = 12;
inline constexpr std::size_t kSignalPairs = 15;
inline constexpr std::size_t kHandcraftedSize = kStatsPerSignal * kNumChannels + 2 * kSignalPairs;

/// Layout of a handcrafted feature vector (102 values):
///   [0, 72)   12 statistics per channel, channels in canonical order
///             (mean, min, max, variance, excess kurtosis, skewness,
///              q30, q40, q50, q60, q70, q80)
///   [72, 102) per unordered channel pair (i<j, lexicographic):
///             Pearson r, Kendall tau-b
using HandcraftedVector = std::array<double, kHandcraftedSize>;

struct Correlation {
  double pearson = 0.0;
  double kendall_tau = 0.0;
};

/// Linear interpolation between order statistics at position p*(n-1).
double quantile(std::span<const double> values, double p);

/// Population moments; skewness/kurtosis of a constant signal are 0.
std::array<double, kStatsPerSignal> stat_features(std::span<const double> signal);

/// Pearson r and Kendall tau-b; both 0 when either input is constant.
Correlation correlation_features(std::span<const double> a, std::span<const double> b);

/// Computed on resampled (not normalized) signals.
HandcraftedVector extract_handcrafted(const ResampledSignals& signals);

}  // namespace tapid
