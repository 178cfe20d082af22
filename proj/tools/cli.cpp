#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tapid/dataio.hpp"
#include "tapid/encoding.hpp"
#include "tapid/errors.hpp"
#include "tapid/features.hpp"
#include "tapid/protocol.hpp"
#include "tapid/training.hpp"

namespace tapid::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t default_seed() {
  const char* env = std::getenv("TAPID_SEED");
  if (env == nullptr || *env == '\0') return kDefaultSeed;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw InvalidInput(std::string("TAPID_SEED is not an unsigned integer: ") + env);
  }
}

void check_output(const fs::path& path) {
  const auto parent = path.parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw InvalidInput("output directory does not exist: " + parent.string());
  }
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

std::map<std::string, std::vector<const TapSession*>> group_by_user(const std::vector<TapSession>& sessions) {
  std::map<std::string, std::vector<const TapSession*>> out;
  for (const auto& s : sessions) out[s.user_id].push_back(&s);
  return out;
}

std::vector<std::string> user_list(const std::map<std::string, std::vector<const TapSession*>>& by_user) {
  std::vector<std::string> users;
  for (const auto& [u, v] : by_user) users.push_back(u);
  return users;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string output;
  SynthConfig config;
  std::size_t min_len = 140, max_len = 160;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* sub = app.add_subcommand("synth", "Generate synthetic tap sessions");
  sub->add_option("-o,--output", a.output, "Output session file (JSON lines)")->required();
  sub->add_option("--users", a.config.num_users, "Number of users")->capture_default_str();
  sub->add_option("--taps", a.config.taps_per_user, "Taps per user")->capture_default_str();
  sub->add_option("--seed", a.config.seed, "Generator seed");
  sub->add_option("--separation", a.config.separation, "Inter-user distinctiveness")->capture_default_str();
  sub->add_option("--noise", a.config.noise_std, "Noise standard deviation")->capture_default_str();
  sub->add_option("--jitter", a.config.jitter_std_seconds, "Timestamp jitter (s)")->capture_default_str();
  sub->add_option("--gain-std", a.config.gain_std, "Per-tap log gain spread")->capture_default_str();
  sub->add_option("--offset-std", a.config.offset_std, "Per-tap offset spread")->capture_default_str();
  sub->add_option("--rate", a.config.sample_rate_hz, "Sample rate (Hz)")->capture_default_str();
  sub->add_option("--min-len", a.min_len, "Minimum samples per sensor")->capture_default_str();
  sub->add_option("--max-len", a.max_len, "Maximum samples per sensor")->capture_default_str();
}

int run_synth(SynthArgs& a, std::ostream& out) {
  check_output(a.output);
  a.config.length_range = {a.min_len, a.max_len};
  const auto sessions = synth_generate(a.config);
  save_sessions(sessions, fs::path(a.output));
  out << "wrote " << sessions.size() << " sessions (" << a.config.num_users << " users) to "
      << a.output << '\n';
  return 0;
}

// ------------------------------------------------------------------ encode

struct EncodeArgs {
  std::string input, out_dir, rescale = "global";
  std::size_t limit = 0;
};

void add_encode(CLI::App& app, EncodeArgs& a) {
  auto* sub = app.add_subcommand("encode", "Encode sessions as 25x150 PGM images");
  sub->add_option("-i,--input", a.input, "Session file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out-dir", a.out_dir, "Directory for PGM files")->required();
  sub->add_option("--rescale", a.rescale, "global or per-signal")->capture_default_str();
  sub->add_option("--limit", a.limit, "Encode at most this many sessions (0 = all)");
}

int run_encode(const EncodeArgs& a, std::ostream& out) {
  const auto mode = parse_rescale_mode(a.rescale);
  check_output(fs::path(a.out_dir) / "x");
  const auto sessions = load_sessions(fs::path(a.input));
  const auto seq = default_sequence();
  std::size_t n = 0;
  for (const auto& s : sessions) {
    if (a.limit != 0 && n == a.limit) break;
    std::ostringstream name, bytes;
    name << s.user_id << '_' << std::setw(4) << std::setfill('0') << s.tap_index << ".pgm";
    write_pgm(encode_session(s, seq, mode), bytes);
    write_file_atomic(fs::path(a.out_dir) / name.str(), bytes.str());
    ++n;
  }
  out << "encoded " << n << " sessions into " << a.out_dir << '\n';
  return 0;
}

// ------------------------------------------------------------------ gen-seq

struct GenSeqArgs {
  int k = 6, n = 3;
  bool verify = false, fixed_order = false;
};

void add_genseq(CLI::App& app, GenSeqArgs& a) {
  auto* sub = app.add_subcommand("gen-seq", "Print a subset-covering symbol sequence");
  sub->add_option("--k", a.k, "Alphabet size")->capture_default_str();
  sub->add_option("--n", a.n, "Subset size")->capture_default_str();
  sub->add_flag("--verify", a.verify, "Check coverage of every n-subset");
  sub->add_flag("--fixed", a.fixed_order, "Print the fixed 25-symbol image row order instead");
}

int run_genseq(const GenSeqArgs& a, std::ostream& out) {
  const auto seq = a.fixed_order ? default_sequence() : generate_sequence(a.k, a.n);
  out << "sequence k=" << seq.k << " n=" << seq.n << " length " << seq.symbols.size() << ": "
      << seq.to_string() << '\n';
  if (!a.verify) return 0;
  const auto report = verify_coverage(seq);
  out << "coverage " << report.covered << '/' << report.total << '\n';
  for (const auto& m : report.missing) {
    out << "missing";
    for (int s : m) out << ' ' << s;
    out << '\n';
  }
  return report.complete() ? 0 : 1;
}

// ------------------------------------------------------------------ pretrain

struct PretrainArgs {
  std::string input, output, log, summary, rescale = "global";
  int depth = 6;
  std::size_t embed = 256;
  double dropout = 0.4;
  TrainConfig train;
  std::uint64_t seed = 0, split_seed = 0;
  bool seed_set = false, split_seed_set = false, all_users = false;
};

void add_pretrain(CLI::App& app, PretrainArgs& a) {
  auto* sub = app.add_subcommand("pretrain", "Train the multi-class CNN");
  sub->add_option("-i,--input", a.input, "Session file")->required()->check(CLI::ExistingFile);
  sub->add_option("-o,--output", a.output, "Checkpoint file")->required();
  sub->add_option("--depth", a.depth, "6, 9 or 12")->capture_default_str()->check(CLI::IsMember({6, 9, 12}));
  sub->add_option("--embed", a.embed, "Embedding width")->capture_default_str()->check(CLI::IsMember({128, 256, 512}));
  sub->add_option("--batch", a.train.batch_size, "Batch size")->capture_default_str()->check(CLI::IsMember({32, 64, 128}));
  sub->add_option("--lr", a.train.learning_rate, "Adam learning rate")->capture_default_str();
  sub->add_option("--epochs", a.train.epochs, "Maximum epochs")->capture_default_str();
  sub->add_option("--patience", a.train.patience, "Early-stopping patience")->capture_default_str();
  sub->add_option("--runs", a.train.runs, "Independent training runs")->capture_default_str();
  sub->add_option("--dropout", a.dropout, "Dropout rate of the hidden fc layers")->capture_default_str();
  sub->add_option("--rescale", a.rescale, "global or per-signal")->capture_default_str();
  sub->add_option("--seed", a.seed, "Training seed")->each([&](const std::string&) { a.seed_set = true; });
  sub->add_option("--split-seed", a.split_seed, "User split seed (defaults to the seed)")
      ->each([&](const std::string&) { a.split_seed_set = true; });
  sub->add_flag("--all-users", a.all_users, "Use every user as a class instead of the pre-training half");
  sub->add_option("--log", a.log, "Training log CSV of the selected run");
  sub->add_option("--summary", a.summary, "JSON summary file");
}

int run_pretrain(PretrainArgs& a, std::ostream& out) {
  const auto mode = parse_rescale_mode(a.rescale);
  for (const auto& p : {a.output, a.log, a.summary}) {
    if (!p.empty()) check_output(p);
  }
  const auto seed = a.seed_set ? a.seed : default_seed();
  const auto split_seed = a.split_seed_set ? a.split_seed : seed;
  a.train.seed = seed;
  a.train.validate();

  const auto sessions = load_sessions(fs::path(a.input));
  const auto by_user = group_by_user(sessions);
  auto users = user_list(by_user);
  if (!a.all_users) users = split_users(users, split_seed).pretrain_users;
  if (users.size() < 2) throw InvalidInput("pretrain: need at least two users");

  const auto seq = default_sequence();
  LabeledImages train_set, val_set;
  for (std::size_t c = 0; c < users.size(); ++c) {
    const auto& taps = by_user.at(users[c]);
    std::vector<std::uint32_t> ids;
    for (const auto* s : taps) ids.push_back(s->tap_index);
    const auto split = split_taps(ids);
    for (const auto* s : taps) {
      const bool is_train = std::binary_search(split.train.begin(), split.train.end(), s->tap_index);
      auto& dst = is_train ? train_set : val_set;
      dst.images.push_back(encode_session(*s, seq, mode));
      dst.labels.push_back(static_cast<int>(c));
    }
  }

  const auto spec = NetworkSpec::standard(a.depth, a.embed, users.size(), a.dropout);
  out << "pretrain: " << users.size() << " classes, " << train_set.size() << " train / "
      << val_set.size() << " validation images, " << a.depth << "-layer, embedding " << a.embed
      << ", batch " << a.train.batch_size << '\n';
  out << "run  epoch  train_loss  train_acc  val_loss  val_acc\n";
  auto result = train_runs(spec, a.train, train_set, val_set, [&](int run, const EpochRecord& e) {
    out << std::setw(3) << run << std::setw(7) << e.epoch << std::setw(12) << fixed(e.train_loss)
        << std::setw(11) << fixed(e.train_acc) << std::setw(10) << fixed(e.val_loss) << std::setw(9)
        << fixed(e.val_acc) << '\n';
  });
  auto& best = result.runs[result.best_run];
  best.rescale = mode;
  best.class_users = users;
  save_checkpoint(best, fs::path(a.output));

  out << "mean train acc " << fixed(result.mean_train_acc) << ", mean val acc "
      << fixed(result.mean_val_acc) << "; selected run " << result.best_run << " (epoch "
      << best.best_epoch << ")\n";
  if (!a.log.empty()) {
    std::ostringstream csv;
    write_training_log_csv(best.training_log, csv);
    write_text(a.log, csv.str());
  }
  if (!a.summary.empty()) {
    json runs = json::array();
    for (const auto& r : result.runs) {
      const auto& e = r.training_log.at(static_cast<std::size_t>(r.best_epoch - 1));
      runs.push_back({{"best_epoch", r.best_epoch}, {"epochs_run", r.training_log.size()},
                      {"train_acc", e.train_acc}, {"val_acc", e.val_acc}});
    }
    const json j = {{"depth", a.depth}, {"embedding_width", a.embed},
                    {"batch_size", a.train.batch_size}, {"learning_rate", a.train.learning_rate},
                    {"dropout", a.dropout}, {"seed", seed}, {"split_seed", split_seed},
                    {"classes", users}, {"mean_train_acc", result.mean_train_acc},
                    {"mean_val_acc", result.mean_val_acc}, {"best_run", result.best_run},
                    {"runs", runs}};
    write_text(a.summary, j.dump(2) + "\n");
  }
  return 0;
}

// ------------------------------------------------------------------ embed

struct EmbedArgs {
  std::string checkpoint, input, output;
};

void add_embed(CLI::App& app, EmbedArgs& a) {
  auto* sub = app.add_subcommand("embed", "Extract CNN embeddings for every session");
  sub->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sub->add_option("-i,--input", a.input, "Session file")->required()->check(CLI::ExistingFile);
  sub->add_option("-o,--output", a.output, "Embeddings file")->required();
}

int run_embed(const EmbedArgs& a, std::ostream& out) {
  check_output(a.output);
  const auto ckpt = load_checkpoint(fs::path(a.checkpoint));
  const auto sessions = load_sessions(fs::path(a.input));
  const auto net = ckpt.network();
  const auto seq = default_sequence();

  std::vector<SignalImage> images;
  EmbeddingBatch batch;
  batch.width = ckpt.spec.embedding_width;
  for (const auto& s : sessions) {
    images.push_back(encode_session(s, seq, ckpt.rescale));
    batch.users.push_back(s.user_id);
    batch.taps.push_back(s.tap_index);
  }
  for (const auto& e : extract_embeddings(net, images)) batch.values.insert(batch.values.end(), e.begin(), e.end());
  save_embeddings(batch, fs::path(a.output));
  out << "wrote " << batch.count() << " embeddings of width " << batch.width << " to " << a.output << '\n';
  return 0;
}

// ------------------------------------------------------------------ identify

struct IdentifyArgs {
  std::string input, embeddings, output, kernel;
  bool handcrafted = false, grid_search = false, all_users = false;
  double c = 0.0, gamma = 0.0;
  std::size_t folds = 5, workers = 1;
  FewShotCounts counts;
  std::uint64_t seed = 0, split_seed = 0, task_seed = 0;
  bool seed_set = false, split_seed_set = false, task_seed_set = false;
};

void add_identify(CLI::App& app, IdentifyArgs& a) {
  auto* sub = app.add_subcommand("identify", "Few-shot identification with a calibrated SVM");
  sub->add_option("-i,--input", a.input, "Session file")->required()->check(CLI::ExistingFile);
  auto* emb = sub->add_option("--embeddings", a.embeddings, "Embeddings file")->check(CLI::ExistingFile);
  auto* hand = sub->add_flag("--handcrafted", a.handcrafted, "Use the 102 handcrafted features");
  emb->excludes(hand);
  sub->add_option("-o,--output", a.output, "Report prefix; writes PREFIX.csv and PREFIX.json")->required();
  sub->add_option("--kernel", a.kernel, "linear or rbf (preset: linear for embeddings, rbf for handcrafted)");
  sub->add_option("--c", a.c, "Regularization (preset: 1 for embeddings, 100 for handcrafted)");
  sub->add_option("--gamma", a.gamma, "RBF width (default 1/(m Var X))");
  sub->add_flag("--grid-search", a.grid_search, "Choose C per task by cross-validation over {0.1,1,10,100}");
  sub->add_option("--folds", a.folds, "Cross-validation folds")->capture_default_str();
  sub->add_option("--train-pos", a.counts.train_pos, "Positive training samples")->capture_default_str();
  sub->add_option("--train-neg", a.counts.train_neg, "Negative training samples")->capture_default_str();
  sub->add_option("--test-pos", a.counts.test_pos, "Positive test samples")->capture_default_str();
  sub->add_option("--test-neg", a.counts.test_neg, "Negative test samples")->capture_default_str();
  sub->add_option("--seed", a.seed, "Base seed")->each([&](const std::string&) { a.seed_set = true; });
  sub->add_option("--split-seed", a.split_seed, "User split seed (defaults to the seed)")
      ->each([&](const std::string&) { a.split_seed_set = true; });
  sub->add_option("--task-seed", a.task_seed, "Negative sampling seed (defaults to the seed)")
      ->each([&](const std::string&) { a.task_seed_set = true; });
  sub->add_flag("--all-users", a.all_users, "Use every user instead of the identification half");
  sub->add_option("--workers", a.workers, "Parallel tasks")->capture_default_str();
}

int run_identify(IdentifyArgs& a, std::ostream& out) {
  if (a.embeddings.empty() && !a.handcrafted) throw InvalidInput("identify: give --embeddings or --handcrafted");
  check_output(a.output + ".json");
  const auto seed = a.seed_set ? a.seed : default_seed();
  const auto split_seed = a.split_seed_set ? a.split_seed : seed;
  const auto task_seed = a.task_seed_set ? a.task_seed : seed;

  IdentificationOptions opt;
  opt.kernel.kind = parse_kernel_kind(a.kernel.empty() ? (a.handcrafted ? "rbf" : "linear") : a.kernel);
  opt.kernel.gamma = a.gamma;
  opt.c = a.c > 0.0 ? a.c : (a.handcrafted ? 100.0 : 1.0);
  opt.grid_search = a.grid_search;
  opt.folds = a.folds;
  opt.workers = std::max<std::size_t>(a.workers, 1);

  const auto sessions = load_sessions(fs::path(a.input));
  const auto by_user = group_by_user(sessions);
  auto users = user_list(by_user);
  if (!a.all_users) users = split_users(users, split_seed).identification_users;

  SampleIndex index;
  for (const auto& u : users) {
    for (const auto* s : by_user.at(u)) index[u].push_back(s->tap_index);
  }
  const auto tasks = build_fewshot_tasks(users, index, a.counts, task_seed);

  std::map<SampleRef, std::vector<double>> features;
  if (a.handcrafted) {
    for (const auto& u : users) {
      for (const auto* s : by_user.at(u)) {
        const auto h = extract_handcrafted(resample_session(*s));
        features[{u, s->tap_index}] = std::vector<double>(h.begin(), h.end());
      }
    }
  } else {
    const auto batch = load_embeddings(fs::path(a.embeddings));
    for (std::size_t i = 0; i < batch.count(); ++i) {
      const auto* row = batch.values.data() + i * batch.width;
      features[{batch.users[i], batch.taps[i]}] = std::vector<double>(row, row + batch.width);
    }
  }
  const auto provider = [&](const SampleRef& ref) -> std::vector<double> {
    const auto it = features.find(ref);
    if (it == features.end()) {
      throw InvalidInput("identify: no features for (" + ref.user_id + ", " + std::to_string(ref.tap_index) + ")");
    }
    return it->second;
  };

  auto report = run_identification(tasks, provider, opt, a.handcrafted ? "handcrafted" : "cnn");
  report.config["seed"] = seed;
  report.config["split_seed"] = split_seed;
  report.config["task_seed"] = task_seed;
  report.config["counts"] = {a.counts.train_pos, a.counts.train_neg, a.counts.test_pos, a.counts.test_neg};
  report.config["calibration"] = "training set";
  if (!a.handcrafted) report.config["embeddings"] = fs::path(a.embeddings).filename().string();

  std::ostringstream csv;
  write_report_csv(report, csv);
  write_text(a.output + ".csv", csv.str());
  write_text(a.output + ".json", report_to_json(report).dump(2) + "\n");

  out << "identify (" << report.provider << ", " << to_string(opt.kernel.kind) << "): " << tasks.size()
      << " tasks\n";
  out << "user        acc     far     frr  cal_gap\n";
  std::size_t unconverged = 0;
  for (const auto& r : report.per_task) {
    out << std::left << std::setw(8) << r.target_user << std::right << std::setw(8) << fixed(r.rates.accuracy)
        << std::setw(8) << fixed(r.rates.far) << std::setw(8) << fixed(r.rates.frr) << std::setw(9)
        << fixed(r.calibrated_gap) << '\n';
    unconverged += !r.converged;
  }
  out << std::left << std::setw(8) << "mean" << std::right << std::setw(8) << fixed(report.aggregate.accuracy)
      << std::setw(8) << fixed(report.aggregate.far) << std::setw(8) << fixed(report.aggregate.frr)
      << std::setw(9) << fixed(report.mean_calibrated_gap) << '\n';
  if (unconverged > 0) out << "warning: " << unconverged << " SVM(s) hit the iteration cap\n";
  return 0;
}

// ------------------------------------------------------------------ compare

struct CompareArgs {
  std::string a, b, output;
  double alpha = 0.01;
};

void add_compare(CLI::App& app, CompareArgs& a) {
  auto* sub = app.add_subcommand("compare", "McNemar test between two identification reports");
  sub->add_option("report_a", a.a, "First report (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("report_b", a.b, "Second report (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--alpha", a.alpha, "Significance level")->capture_default_str();
  sub->add_option("-o,--output", a.output, "JSON comparison file");
}

IdentificationReport load_report(const std::string& path) {
  const auto text = read_file(path);
  try {
    return report_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

int run_compare(const CompareArgs& a, std::ostream& out) {
  if (!a.output.empty()) check_output(a.output);
  const auto cmp = compare_reports(load_report(a.a), load_report(a.b), a.alpha);
  out << std::left << std::setw(14) << "provider" << std::right << std::setw(8) << "acc" << std::setw(8) << "far"
      << std::setw(8) << "frr" << '\n';
  for (const auto& [name, r] : {std::pair{cmp.provider_a, cmp.aggregate_a}, std::pair{cmp.provider_b, cmp.aggregate_b}}) {
    out << std::left << std::setw(14) << name << std::right << std::setw(8) << fixed(r.accuracy) << std::setw(8)
        << fixed(r.far) << std::setw(8) << fixed(r.frr) << '\n';
  }
  std::size_t significant = 0;
  for (const auto& [u, m] : cmp.per_task) significant += m.significant;
  out << "mcnemar pooled: b=" << cmp.pooled.b << " c=" << cmp.pooled.c << " statistic "
      << fixed(cmp.pooled.statistic, 3) << " critical " << fixed(cmp.pooled.critical, 3) << ' '
      << (cmp.pooled.significant ? "significant" : "not significant") << '\n';
  out << "per-task significant: " << significant << '/' << cmp.per_task.size() << '\n';
  if (!a.output.empty()) write_text(a.output, comparison_to_json(cmp).dump(2) + "\n");
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tap-gesture user identification pipeline", "tapid"};
  app.require_subcommand(1);
  SynthArgs synth;
  EncodeArgs encode;
  GenSeqArgs genseq;
  PretrainArgs pretrain;
  EmbedArgs embed;
  IdentifyArgs identify;
  CompareArgs compare;
  add_synth(app, synth);
  add_encode(app, encode);
  add_genseq(app, genseq);
  add_pretrain(app, pretrain);
  add_embed(app, embed);
  add_identify(app, identify);
  add_compare(app, compare);
  // CLI11 defaults the synth seed to the build constant; the environment may override it.
  try {
    synth.config.seed = default_seed();
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    app.exit(e, out, err);
    return 2;
  }

  try {
    const auto& name = app.get_subcommands().front()->get_name();
    if (name == "synth") return run_synth(synth, out);
    if (name == "encode") return run_encode(encode, out);
    if (name == "gen-seq") return run_genseq(genseq, out);
    if (name == "pretrain") return run_pretrain(pretrain, out);
    if (name == "embed") return run_embed(embed, out);
    if (name == "identify") return run_identify(identify, out);
    if (name == "compare") return run_compare(compare, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace tapid::cli
