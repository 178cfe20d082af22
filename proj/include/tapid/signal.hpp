#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tapid {

inline constexpr std::size_t kSignalLength = 150;
inline constexpr std::size_t kNumChannels = 6;

/// Canonical channel order. The integer value is also the symbol used by the
/// row-ordering sequence of the image encoding.
enum class Channel : std::size_t { acc_x = 0, acc_y, acc_z, gyro_x, gyro_y, gyro_z };

struct RawChannel {
  std::vector<double> values;
  /// Seconds from window start, strictly increasing.
  std::vector<double> timestamps;

  bool operator==(const RawChannel&) const = default;
};

/// Six motion channels recorded around a single screen tap.
struct TapSession {
  std::string user_id;
  std::uint32_t tap_index = 0;
  std::array<RawChannel, kNumChannels> channels;
  double window_seconds = 1.5;

  /// Throws InvalidInput naming the first violated invariant.
  void validate() const;

  bool operator==(const TapSession&) const = default;
};

/// Exactly kSignalLength non-negative values with min 0 and unit L2 norm, or
/// all zeros when the source signal was constant.
struct NormalizedSignal {
  std::array<double, kSignalLength> values{};
};

using ResampledSignals = std::array<std::vector<double>, kNumChannels>;
using NormalizedSignals = std::array<NormalizedSignal, kNumChannels>;

/// Index-space linear interpolation to `target_len` points. Timestamps are
/// not consulted.
std::vector<double> resample_linear(std::span<const double> values, std::size_t target_len);
std::vector<double> resample_linear(const RawChannel& channel, std::size_t target_len);

/// Shift to min 0, then scale to unit L2 norm. Input must have length 150.
NormalizedSignal normalize_signal(std::span<const double> values);

/// Resample all six channels of a validated session to kSignalLength.
ResampledSignals resample_session(const TapSession& session);

NormalizedSignals normalize_session(const ResampledSignals& resampled);

}  // namespace tapid
