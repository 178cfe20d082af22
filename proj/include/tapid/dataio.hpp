#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tapid/signal.hpp"
#include "tapid/svm.hpp"
#include "tapid/training.hpp"

namespace tapid {

// Sessions: one JSON object per line,
// {"user_id", "tap_index", "accelerometer": {"t","x","y","z"}, "gyroscope": {...}}.

/// Reads all records, validates them and returns them ordered by
/// (user_id, tap_index). Blank lines are skipped.
std::vector<TapSession> load_sessions(std::istream& in);
std::vector<TapSession> load_sessions(const std::filesystem::path& path);

void save_sessions(const std::vector<TapSession>& sessions, std::ostream& out);
void save_sessions(const std::vector<TapSession>& sessions, const std::filesystem::path& path);

struct SynthConfig {
  std::size_t num_users = 10;
  std::size_t taps_per_user = 40;
  double sample_rate_hz = 100.0;
  double jitter_std_seconds = 0.002;
  std::pair<std::size_t, std::size_t> length_range{140, 160};
  /// 0 makes all users statistically identical.
  double separation = 1.0;
  double noise_std = 0.05;
  /// Per-tap nuisance: log-normal gain spread and additive offset spread
  /// applied independently to every channel.
  double gain_std = 0.5;
  double offset_std = 1.0;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Users are named u000, u001, ...; output ordered by (user, tap).
std::vector<TapSession> synth_generate(const SynthConfig& config);
TapSession synth_session(const SynthConfig& config, std::size_t user, std::size_t tap);
std::string synth_user_id(std::size_t user);

// Binary artifacts: 4-byte magic, uint32 LE version, uint32 LE header length,
// JSON header, then little-endian arrays in header order.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kSvmModelVersion = 1;
inline constexpr std::uint32_t kEmbeddingsVersion = 1;

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_svm_model(const SvmModel& model, std::ostream& out);
SvmModel read_svm_model(std::istream& in);
void save_svm_model(const SvmModel& model, const std::filesystem::path& path);
SvmModel load_svm_model(const std::filesystem::path& path);

struct EmbeddingBatch {
  std::size_t width = 0;
  std::vector<std::string> users;
  std::vector<std::uint32_t> taps;
  /// count x width, row-major.
  std::vector<float> values;

  std::size_t count() const { return users.size(); }
  bool operator==(const EmbeddingBatch&) const = default;
};

void write_embeddings(const EmbeddingBatch& batch, std::ostream& out);
EmbeddingBatch read_embeddings(std::istream& in);
void save_embeddings(const EmbeddingBatch& batch, const std::filesystem::path& path);
EmbeddingBatch load_embeddings(const std::filesystem::path& path);

/// Write via a temporary sibling and rename, so readers never observe a
/// partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// epoch,train_loss,train_acc,val_loss,val_acc
void write_training_log_csv(const std::vector<EpochRecord>& log, std::ostream& out);

}  // namespace tapid
