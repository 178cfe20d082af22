#include "tapid/features.hpp"

#include <algorithm>
#include <cmath>

#include "tapid/errors.hpp"

namespace tapid {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInput(std::string(what) + ": non-finite input");
  }
}

double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

}  // namespace

double quantile(std::span<const double> values, double p) {
  if (values.empty()) throw InvalidInput("quantile: empty input");
  if (p < 0.0 || p > 1.0) throw InvalidInput("quantile: p outside [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted_quantile(sorted, p);
}

std::array<double, kStatsPerSignal> stat_features(std::span<const double> signal) {
  if (signal.empty()) throw InvalidInput("stat_features: empty input");
  require_finite(signal, "stat_features");

  std::vector<double> sorted(signal.begin(), signal.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    const double c = sorted.front();
    return {c, c, c, 0.0, 0.0, 0.0, c, c, c, c, c, c};
  }

  const double n = static_cast<double>(signal.size());
  double mean = 0.0;
  for (double x : signal) mean += x;
  mean /= n;

  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : signal) {
    const double d = x - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const double skew = m3 / std::pow(m2, 1.5);
  const double kurt = m4 / (m2 * m2) - 3.0;

  return {mean,
          sorted.front(),
          sorted.back(),
          m2,
          kurt,
          skew,
          sorted_quantile(sorted, 0.3),
          sorted_quantile(sorted, 0.4),
          sorted_quantile(sorted, 0.5),
          sorted_quantile(sorted, 0.6),
          sorted_quantile(sorted, 0.7),
          sorted_quantile(sorted, 0.8)};
}

Correlation correlation_features(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("correlation_features: length mismatch");
  if (a.size() < 2) throw InvalidInput("correlation_features: need at least 2 samples");
  require_finite(a, "correlation_features");
  require_finite(b, "correlation_features");

  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return {};

  Correlation out;
  out.pearson = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);

  // tau-b by pair counting; n = 150 keeps this at ~11k pairs.
  long long concordant_minus_discordant = 0;
  long long untied_a = 0, untied_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      const int sa = (da > 0) - (da < 0);
      const int sb = (db > 0) - (db < 0);
      concordant_minus_discordant += sa * sb;
      untied_a += sa != 0;
      untied_b += sb != 0;
    }
  }
  if (untied_a > 0 && untied_b > 0) {
    out.kendall_tau = std::clamp(
        static_cast<double>(concordant_minus_discordant) /
            std::sqrt(static_cast<double>(untied_a) * static_cast<double>(untied_b)),
        -1.0, 1.0);
  }
  return out;
}

HandcraftedVector extract_handcrafted(const ResampledSignals& signals) {
  HandcraftedVector out{};
  std::size_t pos = 0;
  for (const auto& s : signals) {
    if (s.size() != kSignalLength) {
      throw InvalidInput("extract_handcrafted: signals must have length 150");
    }
    const auto stats = stat_features(s);
    std::copy(stats.begin(), stats.end(), out.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += kStatsPerSignal;
  }
  for (std::size_t i = 0; i < kNumChannels; ++i) {
    for (std::size_t j = i + 1; j < kNumChannels; ++j) {
      const auto corr = correlation_features(signals[i], signals[j]);
      out[pos++] = corr.pearson;
      out[pos++] = corr.kendall_tau;
    }
  }
  return out;
}

}  // namespace tapid
