#include "tapid/signal.hpp"

#include <algorithm>
#include <cmath>

#include "tapid/errors.hpp"

namespace tapid {

namespace {

void check_channel(const RawChannel& ch, std::size_t index) {
  const auto name = "channel " + std::to_string(index);
  if (ch.values.size() != ch.timestamps.size()) {
    throw InvalidInput(name + ": values/timestamps length mismatch");
  }
  if (ch.values.size() < 2) {
    throw InvalidInput(name + ": needs at least 2 samples");
  }
  for (std::size_t i = 1; i < ch.timestamps.size(); ++i) {
    if (!(ch.timestamps[i] > ch.timestamps[i - 1])) {
      throw InvalidInput(name + ": timestamps not strictly increasing at sample " +
                         std::to_string(i));
    }
  }
}

}  // namespace

void TapSession::validate() const {
  for (std::size_t c = 0; c < kNumChannels; ++c) check_channel(channels[c], c);
  // Axes of one sensor are reported together; the two sensors are independent.
  for (std::size_t base : {std::size_t{0}, std::size_t{3}}) {
    const auto len = channels[base].values.size();
    for (std::size_t c = base + 1; c < base + 3; ++c) {
      if (channels[c].values.size() != len) {
        throw InvalidInput("channel " + std::to_string(c) + " length " +
                           std::to_string(channels[c].values.size()) +
                           " differs from channel " + std::to_string(base) + " length " +
                           std::to_string(len));
      }
    }
  }
}

std::vector<double> resample_linear(std::span<const double> values, std::size_t target_len) {
  if (values.size() < 2) throw InvalidInput("resample_linear: input length < 2");
  if (target_len < 2) throw InvalidInput("resample_linear: target length < 2");

  const std::size_t last = values.size() - 1;
  const double step = static_cast<double>(last) / static_cast<double>(target_len - 1);
  std::vector<double> out(target_len);
  for (std::size_t i = 0; i < target_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    auto lo = static_cast<std::size_t>(pos);
    if (lo >= last) {
      out[i] = values[last];
      continue;
    }
    const double frac = pos - static_cast<double>(lo);
    out[i] = frac == 0.0 ? values[lo] : values[lo] + (values[lo + 1] - values[lo]) * frac;
  }
  out.front() = values.front();
  out.back() = values.back();
  return out;
}

std::vector<double> resample_linear(const RawChannel& channel, std::size_t target_len) {
  if (channel.values.size() != channel.timestamps.size()) {
    throw InvalidInput("resample_linear: values/timestamps length mismatch");
  }
  return resample_linear(std::span<const double>(channel.values), target_len);
}

NormalizedSignal normalize_signal(std::span<const double> values) {
  if (values.size() != kSignalLength) {
    throw InvalidInput("normalize_signal: expected length 150, got " +
                       std::to_string(values.size()));
  }
  const double lo = *std::min_element(values.begin(), values.end());
  NormalizedSignal out;
  double sq = 0.0;
  for (std::size_t i = 0; i < kSignalLength; ++i) {
    out.values[i] = values[i] - lo;
    sq += out.values[i] * out.values[i];
  }
  const double norm = std::sqrt(sq);
  if (norm < 1e-12) {
    out.values.fill(0.0);
    return out;
  }
  for (auto& v : out.values) v /= norm;
  return out;
}

ResampledSignals resample_session(const TapSession& session) {
  session.validate();
  ResampledSignals out;
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    out[c] = resample_linear(session.channels[c], kSignalLength);
  }
  return out;
}

NormalizedSignals normalize_session(const ResampledSignals& resampled) {
  NormalizedSignals out;
  for (std::size_t c = 0; c < kNumChannels; ++c) out[c] = normalize_signal(resampled[c]);
  return out;
}

}  // namespace tapid
