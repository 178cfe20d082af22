#include "tapid/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <random>
#include <sstream>

#include <json.hpp>

#include "tapid/errors.hpp"
#include "tapid/random.hpp"

namespace tapid {

using nlohmann::json;

namespace {

constexpr const char* kSensorNames[2] = {"accelerometer", "gyroscope"};
constexpr const char* kAxisNames[3] = {"x", "y", "z"};

TapSession session_from_json(const json& j) {
  TapSession s;
  s.user_id = j.at("user_id").get<std::string>();
  s.tap_index = j.at("tap_index").get<std::uint32_t>();
  for (int sensor = 0; sensor < 2; ++sensor) {
    const auto& sj = j.at(kSensorNames[sensor]);
    const auto t = sj.at("t").get<std::vector<double>>();
    for (int axis = 0; axis < 3; ++axis) {
      auto& ch = s.channels[sensor * 3 + axis];
      ch.values = sj.at(kAxisNames[axis]).get<std::vector<double>>();
      ch.timestamps = t;
    }
  }
  return s;
}

json session_to_json(const TapSession& s) {
  json j = {{"user_id", s.user_id}, {"tap_index", s.tap_index}};
  for (int sensor = 0; sensor < 2; ++sensor) {
    json sj = {{"t", s.channels[sensor * 3].timestamps}};
    for (int axis = 0; axis < 3; ++axis) sj[kAxisNames[axis]] = s.channels[sensor * 3 + axis].values;
    j[kSensorNames[sensor]] = std::move(sj);
  }
  return j;
}

}  // namespace

std::vector<TapSession> load_sessions(std::istream& in) {
  std::vector<TapSession> sessions;
  std::vector<std::size_t> lines;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    TapSession s;
    try {
      s = session_from_json(json::parse(text));
    } catch (const json::exception& e) {
      throw ParseError(line, std::string("malformed record: ") + e.what());
    }
    // Every channel of a sensor shares that sensor's timestamps; differing
    // axis lengths are reported by validate() as a length mismatch.
    try {
      s.validate();
    } catch (const InvalidInput& e) {
      throw ParseError(line, "record (" + s.user_id + ", " + std::to_string(s.tap_index) +
                                 "): " + e.what());
    }
    sessions.push_back(std::move(s));
    lines.push_back(line);
  }
  std::vector<std::size_t> order(sessions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto key = [&](std::size_t i) { return std::tie(sessions[i].user_id, sessions[i].tap_index); };
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return key(a) < key(b); });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (key(order[i - 1]) == key(order[i])) {
      throw ParseError(lines[order[i]], "duplicate record (" + sessions[order[i]].user_id + ", " +
                                            std::to_string(sessions[order[i]].tap_index) + ")");
    }
  }
  std::vector<TapSession> sorted;
  sorted.reserve(sessions.size());
  for (auto i : order) sorted.push_back(std::move(sessions[i]));
  return sorted;
}

std::vector<TapSession> load_sessions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return load_sessions(in);
}

void save_sessions(const std::vector<TapSession>& sessions, std::ostream& out) {
  for (const auto& s : sessions) out << session_to_json(s).dump() << '\n';
}

void save_sessions(const std::vector<TapSession>& sessions, const std::filesystem::path& path) {
  std::ostringstream out;
  save_sessions(sessions, out);
  write_file_atomic(path, out.str());
}

// ---------------------------------------------------------------- synthesis

void SynthConfig::validate() const {
  if (num_users == 0) throw InvalidInput("synth: num_users must be >= 1");
  if (taps_per_user == 0) throw InvalidInput("synth: taps_per_user must be >= 1");
  if (!(sample_rate_hz > 0.0)) throw InvalidInput("synth: sample rate must be positive");
  const double max_len = 10.0 * 1.5 * sample_rate_hz;
  if (length_range.first < 2 || length_range.first > length_range.second ||
      static_cast<double>(length_range.second) > max_len) {
    throw InvalidInput("synth: length range must satisfy 2 <= lo <= hi <= 10 windows");
  }
  if (!(separation >= 0.0)) throw InvalidInput("synth: separation must be >= 0");
  if (!(noise_std >= 0.0) || !(jitter_std_seconds >= 0.0) || !(gain_std >= 0.0) ||
      !(offset_std >= 0.0)) {
    throw InvalidInput("synth: spreads must be >= 0");
  }
}

std::string synth_user_id(std::size_t user) {
  std::ostringstream s;
  s << 'u' << std::setw(3) << std::setfill('0') << user;
  return s.str();
}

namespace {

constexpr std::size_t kTones = 3;
constexpr double kTapInstant = 0.5;
constexpr double kTwoPi = 6.283185307179586;

struct ChannelParams {
  std::array<double, kTones> freq{}, amp{};
  double bump_amp = 0.0, bump_width = 0.0, bump_mix = 0.0, offset = 0.0;
};
using UserParams = std::array<ChannelParams, kNumChannels>;

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

UserParams population_params(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {0}));
  UserParams p;
  for (auto& ch : p) {
    for (std::size_t k = 0; k < kTones; ++k) {
      ch.freq[k] = uniform(rng, 2.0, 12.0);
      ch.amp[k] = uniform(rng, 0.3, 1.0);
    }
    ch.bump_amp = uniform(rng, 1.0, 3.0) * (rng() & 1 ? 1.0 : -1.0);
    ch.bump_width = uniform(rng, 0.04, 0.1);
    ch.bump_mix = uniform(rng, 0.0, 1.0);
    ch.offset = standard_normal(rng);
  }
  return p;
}

UserParams user_params(const SynthConfig& cfg, std::size_t user) {
  UserParams p = population_params(cfg.seed);
  std::mt19937_64 rng(derive_seed(cfg.seed, {1, user}));
  const double s = cfg.separation;
  for (auto& ch : p) {
    for (std::size_t k = 0; k < kTones; ++k) {
      ch.freq[k] = std::clamp(ch.freq[k] + s * 2.0 * standard_normal(rng), 1.0, 15.0);
      ch.amp[k] *= std::exp(s * 0.4 * standard_normal(rng));
    }
    ch.bump_amp += s * 1.0 * standard_normal(rng);
    ch.bump_width *= std::exp(s * 0.3 * standard_normal(rng));
    ch.bump_mix = std::clamp(ch.bump_mix + s * 0.3 * standard_normal(rng), 0.0, 1.0);
  }
  return p;
}

std::vector<double> jittered_times(std::size_t n, const SynthConfig& cfg, std::mt19937_64& rng) {
  std::vector<double> t(n);
  const double step = 1.0 / cfg.sample_rate_hz;
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<double>(i) * step + cfg.jitter_std_seconds * standard_normal(rng);
    if (i == 0) t[i] = std::max(t[i], 0.0);
    else if (t[i] <= t[i - 1]) t[i] = t[i - 1] + 1e-3 * step;
  }
  return t;
}

TapSession make_session(const SynthConfig& cfg, const UserParams& params, std::size_t user,
                        std::size_t tap) {
  std::mt19937_64 rng(derive_seed(cfg.seed, {2, user, tap}));
  TapSession s;
  s.user_id = synth_user_id(user);
  s.tap_index = static_cast<std::uint32_t>(tap);
  const auto span = cfg.length_range.second - cfg.length_range.first + 1;
  for (int sensor = 0; sensor < 2; ++sensor) {
    const auto n = cfg.length_range.first + static_cast<std::size_t>(uniform_below(rng, span));
    const auto t = jittered_times(n, cfg, rng);
    for (int axis = 0; axis < 3; ++axis) {
      const auto& p = params[sensor * 3 + axis];
      std::array<double, kTones> phase{};
      for (auto& ph : phase) ph = uniform(rng, 0.0, kTwoPi);
      const double gain = std::exp(cfg.gain_std * standard_normal(rng));
      const double shift = cfg.offset_std * standard_normal(rng);
      auto& ch = s.channels[sensor * 3 + axis];
      ch.timestamps = t;
      ch.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        double v = p.offset;
        for (std::size_t k = 0; k < kTones; ++k) v += p.amp[k] * std::sin(kTwoPi * p.freq[k] * t[i] + phase[k]);
        const double z = (t[i] - kTapInstant) / p.bump_width;
        const double g = std::exp(-0.5 * z * z);
        // Gaussian mixed with its (peak-normalized) derivative.
        v += p.bump_amp * ((1.0 - p.bump_mix) * g - p.bump_mix * 1.6487212707001282 * z * g);
        v += cfg.noise_std * standard_normal(rng);
        ch.values[i] = gain * v + shift;
      }
    }
  }
  return s;
}

}  // namespace

TapSession synth_session(const SynthConfig& config, std::size_t user, std::size_t tap) {
  config.validate();
  return make_session(config, user_params(config, user), user, tap);
}

std::vector<TapSession> synth_generate(const SynthConfig& config) {
  config.validate();
  std::vector<TapSession> out;
  out.reserve(config.num_users * config.taps_per_user);
  for (std::size_t u = 0; u < config.num_users; ++u) {
    const auto params = user_params(config, u);
    for (std::size_t t = 0; t < config.taps_per_user; ++t) out.push_back(make_session(config, params, u, t));
  }
  return out;
}

// ---------------------------------------------------------------- binary I/O

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

template <class Float, class Bits>
void put_floats(std::string& out, std::span<const Float> values) {
  for (Float f : values) {
    const auto bits = std::bit_cast<Bits>(f);
    for (std::size_t i = 0; i < sizeof(Bits); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

template <class Float, class Bits>
std::vector<Float> get_floats(const std::string& in, std::size_t& pos, std::size_t count) {
  if (count > (in.size() - pos) / sizeof(Bits)) throw FormatError("truncated array data");
  std::vector<Float> out(count);
  for (auto& f : out) {
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(Bits); ++i) {
      bits |= static_cast<Bits>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    f = std::bit_cast<Float>(bits);
    pos += sizeof(Bits);
  }
  return out;
}

std::string container(const char (&magic)[5], std::uint32_t version, const json& header) {
  std::string out(magic, 4);
  put_u32(out, version);
  const auto text = header.dump();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  return out;
}

struct Parsed {
  json header;
  std::size_t payload_pos;
};

Parsed parse_container(const std::string& bytes, const char (&magic)[5], std::uint32_t version) {
  if (bytes.size() < 12) throw FormatError("file too short");
  if (bytes.compare(0, 4, magic) != 0) throw FormatError(std::string("bad magic, expected ") + magic);
  const auto v = get_u32(bytes, 4);
  if (v != version) {
    throw FormatError("unsupported version " + std::to_string(v) + ", expected " + std::to_string(version));
  }
  const auto len = get_u32(bytes, 8);
  if (len > bytes.size() - 12) throw FormatError("truncated header");
  Parsed p;
  try {
    p.header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad header: ") + e.what());
  }
  p.payload_pos = 12 + len;
  return p;
}

void expect_end(const std::string& bytes, std::size_t pos) {
  if (pos != bytes.size()) throw FormatError("trailing bytes after payload");
}

std::string slurp(std::istream& in) {
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad header: ") + e.what());
  }
}

constexpr char kCkptMagic[5] = "MSID";
constexpr char kSvmMagic[5] = "MSVM";
constexpr char kEmbMagic[5] = "MSEM";

std::string checkpoint_bytes(const Checkpoint& ckpt) {
  const auto& spec = ckpt.spec;
  json convs = json::array();
  for (const auto& c : spec.convs) convs.push_back({c.filters, c.pool_after});
  json arrays = json::array();
  for (const auto& w : ckpt.weights) arrays.push_back({{"name", w.name}, {"shape", w.tensor.shape}});
  json log = json::array();
  for (const auto& e : ckpt.training_log) {
    log.push_back({e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc});
  }
  const json header = {{"spec",
                        {{"depth_variant", spec.depth_variant},
                         {"input_height", spec.input_height},
                         {"input_width", spec.input_width},
                         {"convs", convs},
                         {"embedding_width", spec.embedding_width},
                         {"num_classes", spec.num_classes},
                         {"dropout_rate", spec.dropout_rate}}},
                       {"arrays", arrays},
                       {"training_log", log},
                       {"best_epoch", ckpt.best_epoch},
                       {"rescale", to_string(ckpt.rescale)},
                       {"class_users", ckpt.class_users}};
  auto out = container(kCkptMagic, kCheckpointVersion, header);
  for (const auto& w : ckpt.weights) put_floats<float, std::uint32_t>(out, w.tensor.data);
  return out;
}

Checkpoint checkpoint_from(const std::string& bytes) {
  const auto p = parse_container(bytes, kCkptMagic, kCheckpointVersion);
  Checkpoint ckpt;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> arrays;
  guarded([&] {
    const auto& s = p.header.at("spec");
    auto& spec = ckpt.spec;
    spec.depth_variant = s.at("depth_variant").get<int>();
    spec.input_height = s.at("input_height").get<std::size_t>();
    spec.input_width = s.at("input_width").get<std::size_t>();
    for (const auto& c : s.at("convs")) spec.convs.push_back({c.at(0).get<std::size_t>(), c.at(1).get<bool>()});
    spec.embedding_width = s.at("embedding_width").get<std::size_t>();
    spec.num_classes = s.at("num_classes").get<std::size_t>();
    spec.dropout_rate = s.at("dropout_rate").get<double>();
    for (const auto& a : p.header.at("arrays")) {
      arrays.emplace_back(a.at("name").get<std::string>(), a.at("shape").get<std::vector<std::size_t>>());
    }
    for (const auto& e : p.header.at("training_log")) {
      ckpt.training_log.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>(),
                                   e.at(3).get<double>(), e.at(4).get<double>()});
    }
    ckpt.best_epoch = p.header.at("best_epoch").get<int>();
    ckpt.rescale = parse_rescale_mode(p.header.at("rescale").get<std::string>());
    ckpt.class_users = p.header.at("class_users").get<std::vector<std::string>>();
    return 0;
  });
  try {
    ckpt.spec.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("checkpoint spec: ") + e.what());
  }
  if (arrays != ckpt.spec.parameter_layout()) throw FormatError("checkpoint arrays do not match spec");
  auto pos = p.payload_pos;
  for (const auto& [name, shape] : arrays) {
    auto data = get_floats<float, std::uint32_t>(bytes, pos, shape_size(shape));
    ckpt.weights.push_back({name, Tensor<float>(shape, std::move(data))});
  }
  expect_end(bytes, pos);
  return ckpt;
}

std::string svm_bytes(const SvmModel& m) {
  const json header = {{"kernel", to_string(m.kernel.kind)},
                       {"gamma", m.kernel.gamma},
                       {"c", m.c},
                       {"bias", m.bias},
                       {"dimension", m.dimension},
                       {"support_vectors", m.support_vectors.size()},
                       {"converged", m.converged},
                       {"iterations", m.iterations},
                       {"mean", m.standardization.mean},
                       {"scale", m.standardization.scale}};
  auto out = container(kSvmMagic, kSvmModelVersion, header);
  for (const auto& sv : m.support_vectors) put_floats<double, std::uint64_t>(out, sv);
  put_floats<double, std::uint64_t>(out, m.dual_coefficients);
  return out;
}

SvmModel svm_from(const std::string& bytes) {
  const auto p = parse_container(bytes, kSvmMagic, kSvmModelVersion);
  SvmModel m;
  std::size_t count = 0;
  guarded([&] {
    const auto& h = p.header;
    m.kernel.kind = parse_kernel_kind(h.at("kernel").get<std::string>());
    m.kernel.gamma = h.at("gamma").get<double>();
    m.c = h.at("c").get<double>();
    m.bias = h.at("bias").get<double>();
    m.dimension = h.at("dimension").get<std::size_t>();
    count = h.at("support_vectors").get<std::size_t>();
    m.converged = h.at("converged").get<bool>();
    m.iterations = h.at("iterations").get<std::uint64_t>();
    m.standardization.mean = h.at("mean").get<std::vector<double>>();
    m.standardization.scale = h.at("scale").get<std::vector<double>>();
    return 0;
  });
  const auto& st = m.standardization;
  if (st.mean.size() != st.scale.size() || (!st.empty() && st.mean.size() != m.dimension)) {
    throw FormatError("svm model: standardization size mismatch");
  }
  if (m.dimension != 0 && count > (bytes.size() - p.payload_pos) / (8 * m.dimension)) {
    throw FormatError("truncated array data");
  }
  auto pos = p.payload_pos;
  for (std::size_t i = 0; i < count; ++i) {
    m.support_vectors.push_back(get_floats<double, std::uint64_t>(bytes, pos, m.dimension));
  }
  m.dual_coefficients = get_floats<double, std::uint64_t>(bytes, pos, count);
  expect_end(bytes, pos);
  return m;
}

std::string embeddings_bytes(const EmbeddingBatch& b) {
  if (b.taps.size() != b.users.size() || b.values.size() != b.count() * b.width) {
    throw InvalidInput("embeddings: inconsistent batch");
  }
  json ids = json::array();
  for (std::size_t i = 0; i < b.count(); ++i) ids.push_back({b.users[i], b.taps[i]});
  const json header = {{"count", b.count()}, {"width", b.width}, {"ids", ids}};
  auto out = container(kEmbMagic, kEmbeddingsVersion, header);
  put_floats<float, std::uint32_t>(out, b.values);
  return out;
}

EmbeddingBatch embeddings_from(const std::string& bytes) {
  const auto p = parse_container(bytes, kEmbMagic, kEmbeddingsVersion);
  EmbeddingBatch b;
  std::size_t count = 0;
  guarded([&] {
    count = p.header.at("count").get<std::size_t>();
    b.width = p.header.at("width").get<std::size_t>();
    for (const auto& id : p.header.at("ids")) {
      b.users.push_back(id.at(0).get<std::string>());
      b.taps.push_back(id.at(1).get<std::uint32_t>());
    }
    return 0;
  });
  if (b.users.size() != count) throw FormatError("embeddings: id count differs from header count");
  if (b.width != 0 && count > (bytes.size() - p.payload_pos) / (4 * b.width)) {
    throw FormatError("truncated array data");
  }
  auto pos = p.payload_pos;
  b.values = get_floats<float, std::uint32_t>(bytes, pos, count * b.width);
  expect_end(bytes, pos);
  return b;
}

void write_bytes(std::ostream& out, const std::string& bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed");
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) { write_bytes(out, checkpoint_bytes(ckpt)); }
Checkpoint read_checkpoint(std::istream& in) { return checkpoint_from(slurp(in)); }
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_bytes(ckpt));
}
Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from(read_file(path)); }

void write_svm_model(const SvmModel& model, std::ostream& out) { write_bytes(out, svm_bytes(model)); }
SvmModel read_svm_model(std::istream& in) { return svm_from(slurp(in)); }
void save_svm_model(const SvmModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, svm_bytes(model));
}
SvmModel load_svm_model(const std::filesystem::path& path) { return svm_from(read_file(path)); }

void write_embeddings(const EmbeddingBatch& batch, std::ostream& out) { write_bytes(out, embeddings_bytes(batch)); }
EmbeddingBatch read_embeddings(std::istream& in) { return embeddings_from(slurp(in)); }
void save_embeddings(const EmbeddingBatch& batch, const std::filesystem::path& path) {
  write_file_atomic(path, embeddings_bytes(batch));
}
EmbeddingBatch load_embeddings(const std::filesystem::path& path) { return embeddings_from(read_file(path)); }

void write_training_log_csv(const std::vector<EpochRecord>& log, std::ostream& out) {
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n" << std::setprecision(17);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_loss << ',' << e.val_acc << '\n';
  }
}

}  // namespace tapid
