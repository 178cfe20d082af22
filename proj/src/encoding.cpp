#include "tapid/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "tapid/errors.hpp"

namespace tapid {

namespace {

// Bitmask of the window's symbols, or 0 when a symbol repeats.
unsigned window_mask(const std::vector<int>& s, std::size_t start, int n) {
  unsigned mask = 0;
  for (int i = 0; i < n; ++i) {
    const unsigned bit = 1u << s[start + static_cast<std::size_t>(i)];
    if (mask & bit) return 0;
    mask |= bit;
  }
  return mask;
}

std::vector<int> mask_to_symbols(unsigned mask) {
  std::vector<int> out;
  for (int b = 0; mask != 0; ++b, mask >>= 1) {
    if (mask & 1u) out.push_back(b);
  }
  return out;
}

void check_symbols(const SignalSequence& seq) {
  if (seq.k < 1 || seq.k > 30 || seq.n < 1) throw InvalidInput("sequence: bad k/n");
  for (int s : seq.symbols) {
    if (s < 0 || s >= seq.k) throw InvalidInput("sequence: symbol out of range");
  }
}

}  // namespace

std::string SignalSequence::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < symbols.size(); ++i) os << (i ? "," : "") << symbols[i];
  return os.str();
}

SignalSequence default_sequence() {
  return {{0, 1, 2, 3, 4, 5, 0, 2, 4, 5, 1, 3, 0, 4, 1, 2, 5, 3, 0, 2, 0, 5, 1, 3, 4}, 6, 3};
}

SignalSequence generate_sequence(int k, int n) {
  if (n < 2 || n > k) throw InvalidInput("generate_sequence: requires 2 <= n <= k");
  if (k > 16) throw InvalidInput("generate_sequence: k > 16 unsupported");

  std::set<unsigned> covered;
  std::size_t total = 1;
  for (int i = 0; i < n; ++i) total = total * static_cast<std::size_t>(k - i) / (i + 1);

  std::vector<int> seq;
  std::vector<int> suffix;
  while (covered.size() < total) {
    bool extended = false;
    for (int m = 1; m <= n && !extended; ++m) {
      if (seq.size() + static_cast<std::size_t>(m) < static_cast<std::size_t>(n)) continue;
      // Enumerate suffixes of length m in lexicographic order.
      suffix.assign(static_cast<std::size_t>(m), 0);
      while (true) {
        std::vector<int> cand = seq;
        cand.insert(cand.end(), suffix.begin(), suffix.end());
        const std::size_t first = cand.size() >= static_cast<std::size_t>(n + m - 1)
                                      ? cand.size() - static_cast<std::size_t>(n + m - 1)
                                      : 0;
        bool gains = false;
        for (std::size_t s = first; s + static_cast<std::size_t>(n) <= cand.size(); ++s) {
          const unsigned mask = window_mask(cand, s, n);
          if (mask && !covered.contains(mask)) {
            gains = true;
            break;
          }
        }
        if (gains) {
          for (std::size_t s = first; s + static_cast<std::size_t>(n) <= cand.size(); ++s) {
            if (const unsigned mask = window_mask(cand, s, n)) covered.insert(mask);
          }
          seq = std::move(cand);
          extended = true;
          break;
        }
        // next suffix (odometer)
        int pos = m - 1;
        while (pos >= 0 && ++suffix[static_cast<std::size_t>(pos)] == k) {
          suffix[static_cast<std::size_t>(pos)] = 0;
          --pos;
        }
        if (pos < 0) break;
      }
    }
    if (!extended) throw std::logic_error("generate_sequence: no progress");
  }
  return {seq, k, n};
}

CoverageReport verify_coverage(const SignalSequence& seq) {
  check_symbols(seq);
  std::set<unsigned> seen;
  if (seq.symbols.size() >= static_cast<std::size_t>(seq.n)) {
    for (std::size_t s = 0; s + static_cast<std::size_t>(seq.n) <= seq.symbols.size(); ++s) {
      if (const unsigned mask = window_mask(seq.symbols, s, seq.n)) seen.insert(mask);
    }
  }
  CoverageReport report;
  report.covered = seen.size();
  // All n-subsets of {0..k-1} as masks, in lexicographic order of their symbols.
  std::vector<int> idx(static_cast<std::size_t>(seq.n));
  for (int i = 0; i < seq.n; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (seq.n > seq.k) return report;
  while (true) {
    ++report.total;
    unsigned mask = 0;
    for (int v : idx) mask |= 1u << v;
    if (!seen.contains(mask)) report.missing.push_back(mask_to_symbols(mask));
    int i = seq.n - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == seq.k - seq.n + i) --i;
    if (i < 0) break;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < seq.n; ++j) {
      idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
  return report;
}

RescaleMode parse_rescale_mode(const std::string& text) {
  if (text == "global") return RescaleMode::global;
  if (text == "per-signal") return RescaleMode::per_signal;
  throw InvalidInput("unknown rescale mode '" + text + "'");
}

std::string to_string(RescaleMode mode) {
  return mode == RescaleMode::global ? "global" : "per-signal";
}

SignalImage encode_image(const NormalizedSignals& signals, const SignalSequence& seq,
                         RescaleMode mode) {
  check_symbols(seq);
  if (seq.k != static_cast<int>(kNumChannels)) {
    throw InvalidInput("encode_image: sequence alphabet must have 6 symbols");
  }
  if (seq.symbols.size() != kImageRows) {
    throw InvalidInput("encode_image: sequence must have 25 symbols");
  }

  std::array<double, kNumChannels> scale{};
  double global_max = 0.0;
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    scale[c] = *std::max_element(signals[c].values.begin(), signals[c].values.end());
    global_max = std::max(global_max, scale[c]);
  }
  if (mode == RescaleMode::global) scale.fill(global_max);

  // Quantize each channel once; rows are copies.
  std::array<std::array<std::uint8_t, kImageCols>, kNumChannels> rows{};
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    if (!(scale[c] > 0.0)) continue;
    for (std::size_t t = 0; t < kImageCols; ++t) {
      const double q = std::round(255.0 * signals[c].values[t] / scale[c]);
      rows[c][t] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
    }
  }

  SignalImage image;
  for (std::size_t r = 0; r < kImageRows; ++r) {
    const auto& src = rows[static_cast<std::size_t>(seq.symbols[r])];
    std::copy(src.begin(), src.end(), image.pixels.begin() + static_cast<std::ptrdiff_t>(r * kImageCols));
  }
  return image;
}

SignalImage encode_session(const TapSession& session, const SignalSequence& seq,
                           RescaleMode mode) {
  auto image = encode_image(normalize_session(resample_session(session)), seq, mode);
  image.source_user = session.user_id;
  image.source_tap = session.tap_index;
  return image;
}

std::size_t write_pgm(const SignalImage& image, std::ostream& out) {
  static constexpr char kHeader[] = "P5\n150 25\n255\n";
  constexpr std::size_t header_len = sizeof(kHeader) - 1;
  out.write(kHeader, header_len);
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("write_pgm: write failed");
  return header_len + image.pixels.size();
}

SignalImage read_pgm(std::istream& in) {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (!in || magic != "P5") throw FormatError("read_pgm: not a binary PGM");
  if (width != kImageCols || height != kImageRows || maxval != 255) {
    throw FormatError("read_pgm: expected 150x25 with maxval 255");
  }
  in.get();  // single whitespace after maxval
  SignalImage image;
  in.read(reinterpret_cast<char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    throw FormatError("read_pgm: truncated pixel data");
  }
  return image;
}

}  // namespace tapid
