#include "tapid/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <random>
#include <span>
#include <thread>

#include "tapid/errors.hpp"
#include "tapid/random.hpp"

namespace tapid {

UserSplit split_users(std::vector<std::string> user_ids, std::uint64_t seed) {
  if (user_ids.size() % 2 != 0) throw InvalidInput("split_users: user count must be even");
  std::sort(user_ids.begin(), user_ids.end());
  if (std::adjacent_find(user_ids.begin(), user_ids.end()) != user_ids.end()) {
    throw InvalidInput("split_users: duplicate user id");
  }
  std::mt19937_64 rng(derive_seed(seed, {0x5011}));
  shuffle_in_place(std::span<std::string>(user_ids), rng);
  UserSplit split;
  split.seed = seed;
  const std::size_t half = user_ids.size() / 2;
  split.pretrain_users.assign(user_ids.begin(), user_ids.begin() + half);
  split.identification_users.assign(user_ids.begin() + half, user_ids.end());
  return split;
}

TapSplit split_taps(std::vector<std::uint32_t> taps, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw InvalidInput("split_taps: fraction must be in (0, 1]");
  }
  std::sort(taps.begin(), taps.end());
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(taps.size()) + 1e-9));
  TapSplit split;
  split.train.assign(taps.begin(), taps.begin() + n_train);
  split.validation.assign(taps.begin() + n_train, taps.end());
  return split;
}

void FewShotCounts::validate() const {
  if (train_pos == 0 || train_neg == 0 || test_pos == 0 || test_neg == 0) {
    throw InvalidInput("few-shot counts must be positive");
  }
}

namespace {

std::vector<SampleRef> draw_without_replacement(const std::vector<std::string>& pool,
                                                const SampleIndex& samples, std::size_t count,
                                                std::uint64_t seed) {
  std::vector<SampleRef> all;
  for (const auto& u : pool) {
    for (auto tap : samples.at(u)) all.push_back({u, tap});
  }
  if (all.size() < count) {
    throw InvalidInput("few-shot: negative pool has " + std::to_string(all.size()) +
                       " samples, need " + std::to_string(count));
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_below(rng, all.size() - i));
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  return all;
}

}  // namespace

std::vector<FewShotTask> build_fewshot_tasks(const std::vector<std::string>& identification_users,
                                             const SampleIndex& samples, const FewShotCounts& counts,
                                             std::uint64_t seed) {
  counts.validate();
  if (identification_users.size() < 3) {
    throw InvalidInput("few-shot: need at least 3 users to form two non-empty negative pools");
  }
  for (const auto& u : identification_users) {
    if (!samples.contains(u)) throw InvalidInput("few-shot: no samples for user '" + u + "'");
  }

  std::vector<FewShotTask> tasks;
  for (std::size_t t = 0; t < identification_users.size(); ++t) {
    const auto& target = identification_users[t];
    auto taps = samples.at(target);
    std::sort(taps.begin(), taps.end());
    if (taps.size() < counts.train_pos + counts.test_pos) {
      throw InvalidInput("few-shot: user '" + target + "' has " + std::to_string(taps.size()) +
                         " samples, need " + std::to_string(counts.train_pos + counts.test_pos));
    }
    FewShotTask task;
    task.target_user = target;
    for (std::size_t i = 0; i < counts.train_pos; ++i) task.train_pos.push_back({target, taps[i]});
    for (std::size_t i = taps.size() - counts.test_pos; i < taps.size(); ++i) {
      task.test_pos.push_back({target, taps[i]});
    }

    std::vector<std::string> others;
    for (const auto& u : identification_users) {
      if (u != target) others.push_back(u);
    }
    std::mt19937_64 rng(derive_seed(seed, {t, 0}));
    shuffle_in_place(std::span<std::string>(others), rng);
    const std::size_t n_a = (others.size() + 1) / 2;
    task.neg_pool_train.assign(others.begin(), others.begin() + n_a);
    task.neg_pool_test.assign(others.begin() + n_a, others.end());
    task.train_neg = draw_without_replacement(task.neg_pool_train, samples, counts.train_neg,
                                              derive_seed(seed, {t, 1}));
    task.test_neg = draw_without_replacement(task.neg_pool_test, samples, counts.test_neg,
                                             derive_seed(seed, {t, 2}));
    tasks.push_back(std::move(task));
  }
  return tasks;
}

Rates confusion_metrics(const ConfusionMatrix& cm) {
  if (cm.tp + cm.fn == 0) throw InvalidInput("confusion_metrics: no positive samples");
  if (cm.fp + cm.tn == 0) throw InvalidInput("confusion_metrics: no negative samples");
  Rates r;
  r.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  r.far = static_cast<double>(cm.fp) / static_cast<double>(cm.fp + cm.tn);
  r.frr = static_cast<double>(cm.fn) / static_cast<double>(cm.fn + cm.tp);
  return r;
}

double chi2_1dof_critical(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must be in (0, 1)");
  // P(chi2_1 > z^2) = erfc(z / sqrt 2); bisect for z.
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (std::erfc(mid / std::sqrt(2.0)) > alpha) lo = mid; else hi = mid;
  }
  const double z = 0.5 * (lo + hi);
  return z * z;
}

McNemarResult mcnemar_test(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b,
                           double alpha) {
  if (correct_a.size() != correct_b.size()) {
    throw InvalidInput("mcnemar_test: correctness vectors differ in length");
  }
  McNemarResult r;
  r.critical = chi2_1dof_critical(alpha);
  for (std::size_t i = 0; i < correct_a.size(); ++i) {
    if (correct_a[i] && !correct_b[i]) ++r.b;
    if (!correct_a[i] && correct_b[i]) ++r.c;
  }
  if (r.b + r.c == 0) return r;
  const double diff = std::abs(static_cast<double>(r.b) - static_cast<double>(r.c)) - 1.0;
  r.statistic = diff * diff / static_cast<double>(r.b + r.c);
  r.significant = r.statistic > r.critical;
  return r;
}

namespace {

TaskResult run_task(const FewShotTask& task, const FeatureProvider& provider,
                    const IdentificationOptions& options) {
  LabeledVectors train;
  for (const auto& ref : task.train_pos) train.push_back(provider(ref), 1);
  for (const auto& ref : task.train_neg) train.push_back(provider(ref), -1);

  TaskResult result;
  result.target_user = task.target_user;
  result.c = options.c;
  if (options.grid_search) {
    result.c = grid_search_c(train, options.kernel, options.c_grid, options.folds, options.svm).best_c;
  }
  const auto model = train_svm(train, options.kernel, result.c, options.svm);
  const auto cal = calibrate_bias(model, train);
  result.gamma = cal.model.kernel.kind == KernelKind::rbf ? cal.model.kernel.gamma : 0.0;
  result.calibrated_gap = cal.gap;
  result.within_target = cal.within_target;
  result.converged = model.converged;

  auto score = [&](const SampleRef& ref, bool positive) {
    const bool accepted = predict(cal.model, provider(ref)) == 1;
    if (positive) (accepted ? result.confusion.tp : result.confusion.fn)++;
    else (accepted ? result.confusion.fp : result.confusion.tn)++;
    result.test_samples.push_back(ref);
    result.correct.push_back(accepted == positive);
  };
  for (const auto& ref : task.test_pos) score(ref, true);
  for (const auto& ref : task.test_neg) score(ref, false);
  result.rates = confusion_metrics(result.confusion);
  result.test_gap = std::abs(result.rates.far - result.rates.frr);
  return result;
}

}  // namespace

IdentificationReport run_identification(const std::vector<FewShotTask>& tasks,
                                        const FeatureProvider& provider,
                                        const IdentificationOptions& options,
                                        const std::string& provider_name) {
  if (tasks.empty()) throw InvalidInput("run_identification: no tasks");
  std::vector<TaskResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());

  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, tasks.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) results[i] = run_task(tasks[i], provider, options);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
          try {
            results[i] = run_task(tasks[i], provider, options);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  IdentificationReport report;
  report.provider = provider_name;
  report.per_task = std::move(results);
  const auto n = static_cast<double>(report.per_task.size());
  for (const auto& r : report.per_task) {
    report.aggregate.accuracy += r.rates.accuracy;
    report.aggregate.far += r.rates.far;
    report.aggregate.frr += r.rates.frr;
    report.mean_calibrated_gap += r.calibrated_gap;
  }
  report.aggregate.accuracy /= n;
  report.aggregate.far /= n;
  report.aggregate.frr /= n;
  report.mean_calibrated_gap /= n;
  report.config = {{"kernel", to_string(options.kernel.kind)},
                   {"gamma", options.kernel.gamma},
                   {"c", options.c},
                   {"grid_search", options.grid_search},
                   {"c_grid", options.c_grid},
                   {"folds", options.folds},
                   {"tolerance", options.svm.tolerance},
                   {"standardize", options.svm.standardize}};
  return report;
}

void write_report_csv(const IdentificationReport& report, std::ostream& out) {
  out << "user_id,accuracy,far,frr,calibrated_gap,test_gap,c,gamma,tp,fp,fn,tn,converged\n";
  out << std::setprecision(17);
  for (const auto& r : report.per_task) {
    out << r.target_user << ',' << r.rates.accuracy << ',' << r.rates.far << ',' << r.rates.frr
        << ',' << r.calibrated_gap << ',' << r.test_gap << ',' << r.c << ',' << r.gamma << ','
        << r.confusion.tp << ',' << r.confusion.fp << ',' << r.confusion.fn << ','
        << r.confusion.tn << ',' << (r.converged ? 1 : 0) << '\n';
  }
}

namespace {

nlohmann::json rates_json(const Rates& r) {
  return {{"accuracy", r.accuracy}, {"far", r.far}, {"frr", r.frr}};
}

Rates rates_from(const nlohmann::json& j) {
  return {j.at("accuracy").get<double>(), j.at("far").get<double>(), j.at("frr").get<double>()};
}

nlohmann::json mcnemar_json(const McNemarResult& m) {
  return {{"statistic", m.statistic}, {"significant", m.significant}, {"b", m.b},
          {"c", m.c}, {"critical", m.critical}};
}

}  // namespace

nlohmann::json report_to_json(const IdentificationReport& report) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& r : report.per_task) {
    std::string bits;
    for (bool b : r.correct) bits.push_back(b ? '1' : '0');
    nlohmann::json refs = nlohmann::json::array();
    for (const auto& s : r.test_samples) refs.push_back({s.user_id, s.tap_index});
    tasks.push_back({{"user_id", r.target_user},
                     {"rates", rates_json(r.rates)},
                     {"confusion", {r.confusion.tp, r.confusion.fp, r.confusion.fn, r.confusion.tn}},
                     {"c", r.c},
                     {"gamma", r.gamma},
                     {"calibrated_gap", r.calibrated_gap},
                     {"test_gap", r.test_gap},
                     {"within_target", r.within_target},
                     {"converged", r.converged},
                     {"test_samples", refs},
                     {"correct", bits}});
  }
  return {{"provider", report.provider},
          {"aggregate", rates_json(report.aggregate)},
          {"mean_calibrated_gap", report.mean_calibrated_gap},
          {"config", report.config},
          {"tasks", tasks}};
}

IdentificationReport report_from_json(const nlohmann::json& j) {
  try {
    IdentificationReport report;
    report.provider = j.at("provider").get<std::string>();
    report.aggregate = rates_from(j.at("aggregate"));
    report.mean_calibrated_gap = j.at("mean_calibrated_gap").get<double>();
    report.config = j.value("config", nlohmann::json::object());
    for (const auto& t : j.at("tasks")) {
      TaskResult r;
      r.target_user = t.at("user_id").get<std::string>();
      r.rates = rates_from(t.at("rates"));
      const auto& cm = t.at("confusion");
      r.confusion = {cm.at(0).get<std::uint64_t>(), cm.at(1).get<std::uint64_t>(),
                     cm.at(2).get<std::uint64_t>(), cm.at(3).get<std::uint64_t>()};
      r.c = t.at("c").get<double>();
      r.gamma = t.at("gamma").get<double>();
      r.calibrated_gap = t.at("calibrated_gap").get<double>();
      r.test_gap = t.at("test_gap").get<double>();
      r.within_target = t.at("within_target").get<bool>();
      r.converged = t.at("converged").get<bool>();
      for (const auto& s : t.at("test_samples")) {
        r.test_samples.push_back({s.at(0).get<std::string>(), s.at(1).get<std::uint32_t>()});
      }
      for (char ch : t.at("correct").get<std::string>()) {
        if (ch != '0' && ch != '1') throw FormatError("report: bad correctness string");
        r.correct.push_back(ch == '1');
      }
      if (r.correct.size() != r.test_samples.size()) {
        throw FormatError("report: correctness and sample counts differ");
      }
      report.per_task.push_back(std::move(r));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

ReportComparison compare_reports(const IdentificationReport& a, const IdentificationReport& b,
                                 double alpha) {
  if (a.per_task.size() != b.per_task.size()) {
    throw InvalidInput("compare: reports have different task counts");
  }
  ReportComparison cmp;
  cmp.provider_a = a.provider;
  cmp.provider_b = b.provider;
  cmp.aggregate_a = a.aggregate;
  cmp.aggregate_b = b.aggregate;
  std::vector<bool> all_a, all_b;
  for (std::size_t i = 0; i < a.per_task.size(); ++i) {
    const auto& ta = a.per_task[i];
    const auto& tb = b.per_task[i];
    if (ta.target_user != tb.target_user || ta.test_samples != tb.test_samples) {
      throw InvalidInput("compare: task " + std::to_string(i) + " was evaluated on different samples");
    }
    cmp.per_task.emplace_back(ta.target_user, mcnemar_test(ta.correct, tb.correct, alpha));
    all_a.insert(all_a.end(), ta.correct.begin(), ta.correct.end());
    all_b.insert(all_b.end(), tb.correct.begin(), tb.correct.end());
  }
  cmp.pooled = mcnemar_test(all_a, all_b, alpha);
  return cmp;
}

nlohmann::json comparison_to_json(const ReportComparison& cmp) {
  nlohmann::json per_task = nlohmann::json::array();
  std::size_t significant = 0;
  for (const auto& [user, m] : cmp.per_task) {
    per_task.push_back({{"user_id", user}, {"mcnemar", mcnemar_json(m)}});
    significant += m.significant;
  }
  return {{"provider_a", cmp.provider_a},
          {"provider_b", cmp.provider_b},
          {"aggregate_a", rates_json(cmp.aggregate_a)},
          {"aggregate_b", rates_json(cmp.aggregate_b)},
          {"pooled", mcnemar_json(cmp.pooled)},
          {"significant_tasks", significant},
          {"per_task", per_task}};
}

}  // namespace tapid
