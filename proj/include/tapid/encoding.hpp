#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tapid/signal.hpp"

namespace tapid {

inline constexpr std::size_t kImageRows = 25;
inline constexpr std::size_t kImageCols = kSignalLength;

/// Row ordering for the image. Every contiguous window of `n` distinct symbols
/// counts as covering its unordered symbol set.
struct SignalSequence {
  std::vector<int> symbols;
  int k = 6;
  int n = 3;

  std::string to_string() const;  // comma-separated
};

/// The 25-symbol triplet-covering sequence used for all encodings by default.
SignalSequence default_sequence();

/// Greedy construction: repeatedly append the fewest symbols that complete an
/// uncovered n-subset; ties go to the lexicographically smallest suffix.
SignalSequence generate_sequence(int k, int n);

struct CoverageReport {
  std::size_t covered = 0;
  std::size_t total = 0;
  /// Sorted subsets (each sorted ascending) never seen as a window.
  std::vector<std::vector<int>> missing;

  bool complete() const { return missing.empty(); }
};

CoverageReport verify_coverage(const SignalSequence& seq);

enum class RescaleMode { global, per_signal };

RescaleMode parse_rescale_mode(const std::string& text);
std::string to_string(RescaleMode mode);

struct SignalImage {
  std::array<std::uint8_t, kImageRows * kImageCols> pixels{};
  std::string source_user;
  std::uint32_t source_tap = 0;

  std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * kImageCols + col]; }
};

/// Stack the normalized signals in sequence order and quantize to [0, 255].
/// With RescaleMode::global a single maximum over all six signals sets the
/// scale, so relative magnitudes survive quantization.
SignalImage encode_image(const NormalizedSignals& signals, const SignalSequence& seq,
                         RescaleMode mode = RescaleMode::global);

/// resample -> normalize -> encode for one session.
SignalImage encode_session(const TapSession& session, const SignalSequence& seq,
                           RescaleMode mode = RescaleMode::global);

/// Binary PGM (P5), 150x25, maxval 255. Returns bytes written.
std::size_t write_pgm(const SignalImage& image, std::ostream& out);
SignalImage read_pgm(std::istream& in);

}  // namespace tapid
