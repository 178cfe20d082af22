// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "../support/svm_checks.hpp"
#include "cli.hpp"
#include "tapid/adam.hpp"
#include "tapid/dataio.hpp"
#include "tapid/encoding.hpp"
#include "tapid/errors.hpp"
#include "tapid/network.hpp"
#include "tapid/protocol.hpp"
#include "tapid/random.hpp"
#include "tapid/svm.hpp"
#include "tapid/training.hpp"

using namespace tapid;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::vector<std::string> failures;
  std::vector<std::string> info;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      failures.push_back(what);
    }
  }
  void note(const std::string& what) { info.push_back(what); }
};

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

template <class E, class F>
bool throws(F&& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("tapid_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ------------------------------------------------------------------ 1

// Independent coverage count: sets of n distinct symbols seen in windows.
std::size_t windows_covered(const std::vector<int>& symbols, int n) {
  std::set<std::vector<int>> seen;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= symbols.size(); ++i) {
    std::vector<int> w(symbols.begin() + static_cast<std::ptrdiff_t>(i),
                       symbols.begin() + static_cast<std::ptrdiff_t>(i) + n);
    std::sort(w.begin(), w.end());
    if (std::adjacent_find(w.begin(), w.end()) == w.end()) seen.insert(w);
  }
  return seen.size();
}

std::size_t binomial(int k, int n) {
  std::size_t r = 1;
  for (int i = 1; i <= n; ++i) r = r * static_cast<std::size_t>(k - n + i) / static_cast<std::size_t>(i);
  return r;
}

void sequences(Outcome& o) {
  const auto g = generate_sequence(6, 3);
  const auto cov = verify_coverage(g);
  o.require(g.symbols.size() <= 25, "generated (6,3) length " + std::to_string(g.symbols.size()) + " > 25");
  o.require(cov.complete() && cov.covered == 20 && cov.total == 20, "generated (6,3) coverage incomplete");
  o.require(windows_covered(g.symbols, 3) == 20, "independent count disagrees for generated (6,3)");
  o.note("generated (6,3) length " + std::to_string(g.symbols.size()));

  const auto p = default_sequence();
  const auto pc = verify_coverage(p);
  const std::vector<int> literal{0, 1, 2, 3, 4, 5, 0, 2, 4, 5, 1, 3, 0, 4, 1, 2, 5, 3, 0, 2, 0, 5, 1, 3, 4};
  o.require(p.symbols == literal, "fixed row order differs from the literal sequence");
  o.require(pc.covered == 20 && pc.total == 20, "fixed sequence coverage " + std::to_string(pc.covered) + "/20");
  o.require(windows_covered(p.symbols, 3) == 20, "independent count disagrees for the fixed sequence");

  std::size_t pairs = 0;
  for (int k = 2; k <= 7; ++k) {
    for (int n = 2; n <= k; ++n) {
      const auto s = generate_sequence(k, n);
      const auto r = verify_coverage(s);
      const bool ok = r.complete() && r.total == binomial(k, n) && windows_covered(s.symbols, n) == binomial(k, n);
      o.require(ok, "(k=" + std::to_string(k) + ", n=" + std::to_string(n) + ") not fully covered");
      ++pairs;
    }
  }
  o.note(std::to_string(pairs) + " (k, n) pairs covered exhaustively");
}

// ------------------------------------------------------------------ 2

void numerics(Outcome& o) {
  using namespace gradcheck;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(3, 8), filt(1, 3), emb(3, 6), cls(2, 4), bsz(1, 3), coin(0, 1),
      nconv(0, 2);
  int configs = 0;
  double worst = 0.0;
  std::size_t checked = 0;
  while (configs < 24) {
    std::vector<ConvLayerSpec> convs;
    const int n = nconv(rng);
    for (int i = 0; i < n; ++i) convs.push_back({static_cast<std::size_t>(filt(rng)), coin(rng) == 1});
    auto spec = custom_spec(dim(rng), dim(rng), convs, emb(rng), cls(rng));
    try {
      spec.validate();
    } catch (const InvalidInput&) {
      continue;
    }
    auto net = random_network(spec, rng);
    const auto b = static_cast<std::size_t>(bsz(rng));
    const auto batch = random_batch<double>(b, spec.input_height, spec.input_width, rng);
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(rng() % spec.num_classes);
    const auto res = check_gradients(net, batch, labels, configs % 3 == 2, 77);
    worst = std::max(worst, res.worst_rel);
    checked += res.checked;
    ++configs;
  }
  o.require(worst < 1e-4, "worst gradient relative error " + std::to_string(worst));
  o.note(std::to_string(configs) + " configs, " + std::to_string(checked) + " parameters, worst rel " +
         std::to_string(worst));

  double row_err = 0.0;
  for (double scale : {1.0, 50.0, 500.0}) {
    auto net = Network<double>::initialized(custom_spec(5, 9, {{2, true}}, 6, 5), 3);
    for (auto& w : net.mutable_weights()) {
      for (auto& x : w.tensor.data) x *= scale;
    }
    const auto out = net.forward(random_batch<double>(4, 5, 9, rng), false);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 5; ++c) sum += out.probabilities.data[r * 5 + c];
      row_err = std::max(row_err, std::abs(sum - 1.0));
    }
  }
  o.require(row_err <= 1e-6, "softmax row sum off by " + std::to_string(row_err));

  std::vector<double> w{1.0};
  const std::vector<double> g{2.0};
  AdamMoments<double> state(1);
  adam_step<double>(w, g, state, 1e-3, 1);
  o.require(std::abs(w[0] - 0.999) <= 1e-9, "Adam single step gives " + std::to_string(w[0]));
}

// ------------------------------------------------------------------ 3

void architecture(Outcome& o) {
  struct Expected {
    int depth;
    std::vector<std::size_t> filters;
    std::vector<std::size_t> pools;
  };
  const Expected cases[] = {
      {6, {32, 64, 128}, {0, 1, 2}},
      {9, {32, 32, 64, 64, 128, 128}, {1, 3, 5}},
      {12, {32, 32, 32, 64, 64, 64, 128, 128, 128}, {2, 5, 8}},
  };
  for (const auto& e : cases) {
    const auto spec = NetworkSpec::standard(e.depth, 256, 50);
    const std::string tag = std::to_string(e.depth) + "-layer: ";
    o.require(spec.convs.size() == e.filters.size(), tag + "wrong conv count");
    std::vector<std::size_t> filters, pools;
    for (std::size_t i = 0; i < spec.convs.size(); ++i) {
      filters.push_back(spec.convs[i].filters);
      if (spec.convs[i].pool_after) pools.push_back(i);
    }
    o.require(filters == e.filters, tag + "filter ladder differs");
    o.require(pools == e.pools, tag + "pool positions differ");
    std::size_t kernels = 0;
    for (const auto& [name, shape] : spec.parameter_layout()) {
      if (shape.size() == 4) {
        o.require(shape[2] == 3 && shape[3] == 3, tag + name + " is not 3x3");
        ++kernels;
      }
    }
    o.require(kernels == e.filters.size(), tag + "conv kernel count " + std::to_string(kernels));
    const auto chain = spec.shape_chain();
    o.require(chain.back() == (FeatureShape{128, 3, 18}), tag + "final feature map is not 128x3x18");
    o.require(spec.flatten_size() == 6912, tag + "flatten size " + std::to_string(spec.flatten_size()));
    const auto net = Network<float>::initialized(spec, 1);
    const auto out = net.forward(Tensor<float>({1, 1, 25, 150}), false);
    o.require(out.flat.size() == 6912, tag + "forward flatten " + std::to_string(out.flat.size()));
  }
  o.note("flatten 6912 = 128 x 3 x 18");
}

// ------------------------------------------------------------------ 4

void svm(Outcome& o) {
  std::vector<std::pair<SvmModel, LabeledVectors>> trained;

  LabeledVectors two;
  two.push_back({0.0, 0.0}, -1);
  two.push_back({2.0, 2.0}, 1);
  SvmOptions raw;
  raw.standardize = false;
  const auto m = train_svm(two, {KernelKind::linear, 0.0}, 1000.0, raw);
  double w0 = 0.0, w1 = 0.0;
  for (std::size_t k = 0; k < m.support_vectors.size(); ++k) {
    w0 += m.dual_coefficients[k] * m.support_vectors[k][0];
    w1 += m.dual_coefficients[k] * m.support_vectors[k][1];
  }
  o.require(std::abs(w0 - 0.5) <= 1e-3 && std::abs(w1 - 0.5) <= 1e-3 && std::abs(m.bias + 1.0) <= 1e-3,
            "two-point case: w=(" + num(w0) + ", " + num(w1) + ") b=" + num(m.bias));
  o.require(std::abs(decision_value(m, std::vector<double>{1.0, 1.0})) <= 1e-3, "two-point midpoint not on boundary");
  trained.emplace_back(m, two);

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> size(2, 10), dim(1, 4);
  std::uniform_real_distribution<double> gap(0.0, 2.5);
  const double cs[] = {0.1, 1.0, 10.0, 100.0};
  double worst_obj = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto s = svmcheck::blobs(static_cast<std::size_t>(size(rng)), static_cast<std::size_t>(dim(rng)),
                                   gap(rng), rng());
    const KernelSpec k = trial % 2 ? KernelSpec{KernelKind::rbf, 0.5} : KernelSpec{KernelKind::linear, 0.0};
    const double c = cs[trial % 4];
    const auto model = train_svm(s, k, c, raw);
    const auto qp = oracle::svm_dual(svmcheck::kernel_matrix(s, k), s.labels, c);
    const double rel = std::abs(dual_objective(model) - qp.objective) / std::max(1e-9, std::abs(qp.objective));
    worst_obj = std::max(worst_obj, rel);
    trained.emplace_back(model, s);
  }
  o.require(worst_obj <= 1e-2, "dual objective relative error " + std::to_string(worst_obj));
  o.note("40 QP instances (<= 20 points), worst relative objective error " + std::to_string(worst_obj));

  for (std::uint64_t seed = 10; seed < 14; ++seed) {
    const auto s = svmcheck::blobs(30, 8, 0.8, seed);
    for (const auto& k : {KernelSpec{KernelKind::linear, 0.0}, KernelSpec{KernelKind::rbf, 0.0}}) {
      for (double c : kDefaultCGrid) trained.emplace_back(train_svm(s, k, c), s);
    }
  }

  double worst_kkt = 0.0, worst_eq = 0.0;
  bool box = true, converged = true;
  for (const auto& [model, s] : trained) {
    const auto r = svmcheck::kkt(model, s);
    worst_kkt = std::max(worst_kkt, r.worst);
    worst_eq = std::max(worst_eq, r.equality);
    box = box && r.in_box;
    converged = converged && model.converged;
  }
  o.require(worst_kkt <= 1e-3, "KKT violation " + std::to_string(worst_kkt));
  o.require(worst_eq <= 1e-6 && box, "dual constraints violated");
  o.require(converged, "a solver run hit the iteration cap");
  o.note(std::to_string(trained.size()) + " models, worst KKT violation " + std::to_string(worst_kkt));
}

// ------------------------------------------------------------------ 5

void metrics(Outcome& o) {
  struct Case {
    ConfusionMatrix cm;
    double acc, far, frr;
  };
  const Case cases[] = {
      {{90, 5, 10, 95}, 185.0 / 200.0, 5.0 / 100.0, 10.0 / 100.0},
      {{97, 3, 3, 97}, 194.0 / 200.0, 3.0 / 100.0, 3.0 / 100.0},
      {{20, 0, 0, 100}, 1.0, 0.0, 0.0},
      {{7, 13, 1, 9}, 16.0 / 30.0, 13.0 / 22.0, 1.0 / 8.0},
  };
  for (const auto& c : cases) {
    const auto r = confusion_metrics(c.cm);
    o.require(r.accuracy == c.acc && r.far == c.far && r.frr == c.frr,
              "rates of (" + std::to_string(c.cm.tp) + "," + std::to_string(c.cm.fp) + "," +
                  std::to_string(c.cm.fn) + "," + std::to_string(c.cm.tn) + ") differ");
  }

  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  std::size_t sets = 0, achievable = 0;
  double worst = 0.0;
  bool flag_ok = true;
  auto check = [&](const std::vector<double>& scores, const std::vector<int>& labels, double got, bool within) {
    const double best = oracle::best_gap(scores, labels);
    worst = std::max(worst, std::abs(got - best));
    flag_ok = flag_ok && within == (best < 0.01);
    achievable += best < 0.01;
    ++sets;
  };
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> scores;
    std::vector<int> labels;
    const double sep = 0.15 * (trial % 25);
    const int npos = 1 + static_cast<int>(uniform_below(rng, 40)), nneg = 1 + static_cast<int>(uniform_below(rng, 150));
    for (int i = 0; i < npos; ++i) scores.push_back(std::round((g(rng) + sep) * 4) / 4), labels.push_back(1);
    for (int i = 0; i < nneg; ++i) scores.push_back(std::round((g(rng) - sep) * 4) / 4), labels.push_back(-1);
    const auto t = sweep_threshold(scores, labels);
    const double gap = std::abs(t.far - t.frr);
    check(scores, labels, gap, gap < 0.01);
  }
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = svmcheck::blobs(20 + seed, 4, 0.2 * static_cast<double>(seed % 10), seed);
    const auto model = train_svm(s, {seed % 2 ? KernelKind::rbf : KernelKind::linear, 0.0}, 1.0);
    const auto cal = calibrate_bias(model, s);
    std::vector<double> scores;
    for (const auto& x : s.features) scores.push_back(decision_value(model, x));
    check(scores, s.labels, cal.gap, cal.within_target);
  }
  o.require(worst <= 1e-12, "calibrated gap exceeds the exhaustive optimum by " + std::to_string(worst));
  o.require(flag_ok, "within-target flag disagrees with achievability");
  o.note(std::to_string(sets) + " score sets, " + std::to_string(achievable) + " with a gap under 1% achievable");
}

// ------------------------------------------------------------------ 6

void mcnemar(Outcome& o) {
  auto run = [](std::size_t b, std::size_t c) {
    std::vector<bool> x, y;
    for (std::size_t i = 0; i < 40; ++i) x.push_back(true), y.push_back(true);
    for (std::size_t i = 0; i < b; ++i) x.push_back(true), y.push_back(false);
    for (std::size_t i = 0; i < c; ++i) x.push_back(false), y.push_back(true);
    for (std::size_t i = 0; i < 7; ++i) x.push_back(false), y.push_back(false);
    return mcnemar_test(x, y, 0.01);
  };
  // (|b - c| - 1)^2 / (b + c): 49/12 = 4.0833 and 729/32 = 22.78125.
  const auto a = run(10, 2);
  o.require(std::abs(a.statistic - 49.0 / 12.0) <= 1e-3 && num(a.statistic, 3) == "4.083" && !a.significant,
            "b=10 c=2: statistic " + num(a.statistic) + (a.significant ? " significant" : ""));
  const auto b = run(30, 2);
  o.require(std::abs(b.statistic - 729.0 / 32.0) <= 1e-3 && num(b.statistic, 2) == "22.78" && b.significant,
            "b=30 c=2: statistic " + num(b.statistic) + (b.significant ? "" : " not significant"));
  o.require(std::abs(a.critical - 6.635) <= 1e-3, "critical value " + num(a.critical));
  o.note("4.083 / 22.781 against critical " + num(a.critical, 3));
}

// ------------------------------------------------------------------ 7

int cli(const std::vector<std::string>& args, std::string* captured = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (captured) *captured += out.str();
  if (code != 0) std::cerr << err.str();
  return code;
}

const std::vector<std::string> kCounts{"--train-pos", "5", "--train-neg", "20", "--test-pos", "20", "--test-neg", "20"};

// synth -> pretrain -> embed -> identify (both feature sets) -> compare
bool pipeline(const fs::path& dir, std::string& log) {
  const auto s = (dir / "sessions.jsonl").string(), ck = (dir / "model.ckpt").string(),
             em = (dir / "embeddings.bin").string();
  auto identify = [&](std::vector<std::string> args) {
    args.insert(args.end(), kCounts.begin(), kCounts.end());
    return cli(args, &log) == 0;
  };
  return cli({"synth", "-o", s, "--users", "10", "--taps", "40", "--separation", "1.0"}, &log) == 0 &&
         cli({"pretrain", "-i", s, "-o", ck, "--epochs", "30", "--summary", (dir / "pretrain.json").string(),
              "--log", (dir / "pretrain.csv").string()},
             &log) == 0 &&
         cli({"embed", "--checkpoint", ck, "-i", s, "-o", em}, &log) == 0 &&
         identify({"identify", "-i", s, "--embeddings", em, "-o", (dir / "cnn").string()}) &&
         identify({"identify", "-i", s, "--handcrafted", "-o", (dir / "handcrafted").string()}) &&
         cli({"compare", (dir / "cnn.json").string(), (dir / "handcrafted.json").string(), "-o",
              (dir / "compare.json").string()},
             &log) == 0;
}

// Accuracy of a checkpoint on taps the generator never produced for training.
double fresh_tap_accuracy(const Checkpoint& ckpt, const SynthConfig& cfg, std::uint32_t first, std::uint32_t count) {
  const auto seq = default_sequence();
  LabeledImages data;
  for (std::size_t c = 0; c < ckpt.class_users.size(); ++c) {
    const auto user = static_cast<std::size_t>(std::stoul(ckpt.class_users[c].substr(1)));
    for (std::uint32_t t = first; t < first + count; ++t) {
      data.images.push_back(encode_session(synth_session(cfg, user, t), seq, ckpt.rescale));
      data.labels.push_back(static_cast<int>(c));
    }
  }
  return evaluate(ckpt.network(), data).accuracy;
}

bool same_files(const fs::path& a, const fs::path& b, std::string& detail) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) names.insert(e.path().filename().string());
  for (const auto& n : names) {
    if (!fs::exists(a / n) || !fs::exists(b / n) || read_file(a / n) != read_file(b / n)) {
      detail = n;
      return false;
    }
  }
  detail = std::to_string(names.size()) + " files";
  return true;
}

void benchmark(Outcome& o) {
  const auto run_a = scratch("run_a"), run_b = scratch("run_b");
  std::string log_a, log_b;
  const bool ok_a = pipeline(run_a, log_a);
  o.require(ok_a, "pipeline run failed");
  if (!ok_a) return;

  const auto summary = nlohmann::json::parse(read_file(run_a / "pretrain.json"));
  const double val_acc = summary.at("mean_val_acc").get<double>();
  o.require(val_acc >= 0.8, "(a) validation accuracy " + num(val_acc) + " < 0.80 at high separation");
  SynthConfig high;
  const auto ckpt = load_checkpoint(run_a / "model.ckpt");
  const double fresh_high = fresh_tap_accuracy(ckpt, high, 40, 40);
  o.note("(a) high separation: " + std::to_string(ckpt.class_users.size()) + " classes, validation accuracy " +
         num(val_acc) + ", fresh taps " + num(fresh_high));

  // Separation 0: every user is drawn from the same distribution.
  SynthConfig flat;
  flat.separation = 0.0;
  const auto sessions = synth_generate(flat);
  const auto seq = default_sequence();
  LabeledImages train_set, val_set;
  std::vector<std::string> users;
  for (const auto& s : sessions) {
    if (users.empty() || users.back() != s.user_id) users.push_back(s.user_id);
    auto& dst = s.tap_index < flat.taps_per_user * 4 / 5 ? train_set : val_set;
    dst.images.push_back(encode_session(s, seq));
    dst.labels.push_back(static_cast<int>(users.size() - 1));
  }
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = cli::kDefaultSeed;
  auto chance_ckpt = train_multiclass(NetworkSpec::standard(6, 256, users.size()), tc, train_set, val_set);
  chance_ckpt.class_users = users;
  const double biased_val = chance_ckpt.training_log.at(static_cast<std::size_t>(chance_ckpt.best_epoch - 1)).val_acc;
  const std::uint32_t fresh = 40;
  const double chance_acc = fresh_tap_accuracy(chance_ckpt, flat, flat.taps_per_user, fresh);
  const double p = 1.0 / static_cast<double>(users.size());
  const double band = 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(users.size() * fresh));
  o.require(std::abs(chance_acc - p) <= band,
            "(a) separation 0: held-out accuracy " + num(chance_acc) + " outside " + num(p) + " +- " + num(band));
  o.note("(a) separation 0: held-out accuracy " + num(chance_acc) + " (chance " + num(p) + " +- " + num(band, 3) +
         "), best-epoch validation " + num(biased_val));

  const auto cnn = report_from_json(nlohmann::json::parse(read_file(run_a / "cnn.json")));
  const auto hand = report_from_json(nlohmann::json::parse(read_file(run_a / "handcrafted.json")));
  o.require(cnn.aggregate.accuracy >= hand.aggregate.accuracy,
            "(b) embeddings " + num(cnn.aggregate.accuracy) + " < handcrafted " + num(hand.aggregate.accuracy));
  const auto cmp = compare_reports(cnn, hand);
  o.note("(b) few-shot accuracy: embeddings " + num(cnn.aggregate.accuracy) + " (FAR " + num(cnn.aggregate.far) +
         ", FRR " + num(cnn.aggregate.frr) + "), handcrafted " + num(hand.aggregate.accuracy) + " (FAR " +
         num(hand.aggregate.far) + ", FRR " + num(hand.aggregate.frr) + "), McNemar " + num(cmp.pooled.statistic, 3));

  const bool ok_b = pipeline(run_b, log_b);
  std::string detail;
  auto mask = [](std::string text, const fs::path& dir) {
    const std::string needle = dir.string();
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos)) {
      text.replace(pos, needle.size(), "<run>");
    }
    return text;
  };
  const bool same = ok_b && same_files(run_a, run_b, detail) && mask(log_a, run_a) == mask(log_b, run_b);
  if (ok_b && detail.find("files") != std::string::npos && !same) detail = "stdout";
  o.require(same, "(c) second run differs: " + (ok_b ? detail : std::string("failed")));
  if (same) o.note("(c) two runs byte-identical (" + detail + " and stdout)");
}

// ------------------------------------------------------------------ 8

TapSession golden_session() {
  TapSession s;
  s.user_id = "golden";
  for (std::size_t ch = 0; ch < kNumChannels; ++ch) {
    const std::size_t n = ch < 3 ? 143 : 157;
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = static_cast<double>(i);
      s.channels[ch].values.push_back(std::sin(0.05 * static_cast<double>(ch + 1) * x + static_cast<double>(ch)) +
                                      0.1 * static_cast<double>(ch) * x / static_cast<double>(n));
      s.channels[ch].timestamps.push_back(0.01 * x);
    }
  }
  return s;
}

// Every cut point of a serialized artifact must be rejected.
template <class Read>
bool truncations_rejected(const std::string& bytes, Read read, std::size_t step) {
  for (std::size_t len = 0; len < bytes.size(); len += std::max<std::size_t>(1, len < 64 ? 1 : step)) {
    std::stringstream in(bytes.substr(0, len));
    if (!throws<FormatError>([&] { read(in); })) return false;
  }
  return true;
}

void formats(Outcome& o) {
  std::ostringstream pgm;
  write_pgm(encode_session(golden_session(), default_sequence(), RescaleMode::global), pgm);
  std::string golden;
  try {
    golden = read_file(fs::path(TAPID_TEST_DATA_DIR) / "golden.pgm");
  } catch (const IoError&) {
  }
  o.require(!golden.empty() && pgm.str() == golden, "PGM differs from the golden file");

  const auto dir = scratch("formats");
  auto ckpt = build_network(NetworkSpec::standard(6, 128, 4), 9);
  ckpt.training_log = {{1, 1.4, 0.3, 1.3, 0.35}};
  ckpt.best_epoch = 1;
  ckpt.class_users = {"a", "b", "c", "d"};
  save_checkpoint(ckpt, dir / "m.ckpt");
  o.require(load_checkpoint(dir / "m.ckpt") == ckpt, "checkpoint round trip lossy");

  const auto samples = svmcheck::blobs(12, 5, 1.0, 4);
  const auto model = train_svm(samples, {KernelKind::rbf, 0.0}, 10.0);
  save_svm_model(model, dir / "m.svm");
  o.require(load_svm_model(dir / "m.svm") == model, "SVM model round trip lossy");

  EmbeddingBatch emb;
  emb.width = 128;
  const auto net = ckpt.network();
  std::vector<SignalImage> images;
  for (std::uint32_t t = 0; t < 6; ++t) {
    images.push_back(encode_session(synth_session({}, t % 2, t), default_sequence()));
    emb.users.push_back(synth_user_id(t % 2));
    emb.taps.push_back(t);
  }
  for (const auto& row : extract_embeddings(net, images)) emb.values.insert(emb.values.end(), row.begin(), row.end());
  save_embeddings(emb, dir / "e.bin");
  o.require(load_embeddings(dir / "e.bin") == emb, "embedding round trip lossy");

  SynthConfig small;
  small.num_users = 3;
  small.taps_per_user = 4;
  const auto sessions = synth_generate(small);
  save_sessions(sessions, dir / "s.jsonl");
  o.require(load_sessions(dir / "s.jsonl") == sessions, "session round trip lossy");

  std::size_t leftovers = 0;
  for (const auto& e : fs::directory_iterator(dir)) leftovers += e.path().extension() == ".tmp";
  o.require(leftovers == 0, "temporary files left behind");

  o.require(truncations_rejected(read_file(dir / "m.ckpt"), [](std::istream& in) { read_checkpoint(in); }, 4099),
            "a truncated checkpoint was accepted");
  o.require(truncations_rejected(read_file(dir / "m.svm"), [](std::istream& in) { read_svm_model(in); }, 7),
            "a truncated SVM model was accepted");
  o.require(truncations_rejected(read_file(dir / "e.bin"), [](std::istream& in) { read_embeddings(in); }, 5),
            "a truncated embedding file was accepted");
  const auto text = read_file(dir / "s.jsonl");
  std::stringstream cut(text.substr(0, text.size() / 2));
  o.require(throws<ParseError>([&] { load_sessions(cut); }), "a truncated session file was accepted");

  // A failed load leaves the previous file intact and readable.
  write_file_atomic(dir / "m.ckpt.part", read_file(dir / "m.ckpt").substr(0, 1000));
  o.require(throws<FormatError>([&] { load_checkpoint(dir / "m.ckpt.part"); }) &&
                load_checkpoint(dir / "m.ckpt") == ckpt,
            "truncated checkpoint handling");
  o.note("golden PGM " + std::to_string(golden.size()) + " bytes; checkpoint " +
         std::to_string(fs::file_size(dir / "m.ckpt")) + " bytes");
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    double limit_seconds;  // 0: no limit
    std::function<void(Outcome&)> run;
  };
  const Criterion criteria[] = {
      {1, "sequence construction", 1.0, sequences},
      {2, "numerical correctness", 30.0, numerics},
      {3, "architecture", 0.0, architecture},
      {4, "svm solver", 30.0, svm},
      {5, "metrics and calibration", 0.0, metrics},
      {6, "mcnemar", 0.0, mcnemar},
      {7, "end-to-end synthetic benchmark", 600.0, benchmark},
      {8, "formats", 0.0, formats},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_seconds > 0) o.require(secs < c.limit_seconds, "took " + num(secs, 2) + " s, limit " + num(c.limit_seconds, 0) + " s");
    std::printf("[%s] criterion %d: %s (%.2f s)\n", o.ok ? "PASS" : "FAIL", c.id, c.title, secs);
    for (const auto& n : o.info) std::printf("       %s\n", n.c_str());
    for (const auto& f : o.failures) std::printf("       failed: %s\n", f.c_str());
    std::fflush(stdout);
    failed += !o.ok;
  }
  std::printf("%d/8 criteria passed\n", 8 - failed);
  return failed == 0 ? 0 : 1;
}
