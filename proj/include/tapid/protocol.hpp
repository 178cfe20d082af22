#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tapid/svm.hpp"

namespace tapid {

struct UserSplit {
  std::vector<std::string> pretrain_users;
  std::vector<std::string> identification_users;
  std::uint64_t seed = 0;
};

/// Seeded shuffle; first half pre-training, second half identification.
UserSplit split_users(std::vector<std::string> user_ids, std::uint64_t seed);

/// Chronological per-user split for multi-class training: the first
/// floor(fraction * n) taps train, the rest validate.
struct TapSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> validation;
};
TapSplit split_taps(std::vector<std::uint32_t> taps, double train_fraction = 0.8);

struct SampleRef {
  std::string user_id;
  std::uint32_t tap_index = 0;

  auto operator<=>(const SampleRef&) const = default;
};

/// user id -> that user's tap indices.
using SampleIndex = std::map<std::string, std::vector<std::uint32_t>>;

struct FewShotCounts {
  std::size_t train_pos = 20;
  std::size_t train_neg = 100;
  std::size_t test_pos = 100;
  std::size_t test_neg = 100;

  void validate() const;
};

struct FewShotTask {
  std::string target_user;
  std::vector<SampleRef> train_pos;
  std::vector<SampleRef> train_neg;
  std::vector<SampleRef> test_pos;
  std::vector<SampleRef> test_neg;
  std::vector<std::string> neg_pool_train;
  std::vector<std::string> neg_pool_test;
};

/// One task per identification user. Positives: first train_pos taps train,
/// last test_pos taps test. The remaining users are shuffled into pools of
/// ceil(n/2) and floor(n/2); negatives are drawn without replacement from
/// pool A for training and pool B for testing.
std::vector<FewShotTask> build_fewshot_tasks(const std::vector<std::string>& identification_users,
                                             const SampleIndex& samples, const FewShotCounts& counts,
                                             std::uint64_t seed);

struct ConfusionMatrix {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct Rates {
  double accuracy = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

Rates confusion_metrics(const ConfusionMatrix& cm);

struct McNemarResult {
  double statistic = 0.0;
  bool significant = false;
  std::uint64_t b = 0;  // A correct, B wrong
  std::uint64_t c = 0;  // A wrong, B correct
  double critical = 0.0;
};

/// Upper 1 - alpha quantile of chi-square with one degree of freedom.
double chi2_1dof_critical(double alpha);

/// Continuity-corrected statistic (|b - c| - 1)^2 / (b + c).
McNemarResult mcnemar_test(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b,
                           double alpha = 0.01);

using FeatureProvider = std::function<std::vector<double>(const SampleRef&)>;

struct IdentificationOptions {
  KernelSpec kernel;
  double c = 1.0;
  /// When set, c is chosen per task by cross-validation over c_grid.
  bool grid_search = false;
  std::vector<double> c_grid{kDefaultCGrid.begin(), kDefaultCGrid.end()};
  std::size_t folds = 5;
  SvmOptions svm;
  std::size_t workers = 1;
};

struct TaskResult {
  std::string target_user;
  ConfusionMatrix confusion;
  Rates rates;
  double c = 0.0;
  double gamma = 0.0;
  /// |FAR - FRR| on the calibration (training) set and on the test set.
  double calibrated_gap = 0.0;
  double test_gap = 0.0;
  bool within_target = false;
  bool converged = true;
  /// Test samples (positives first) and whether each was classified correctly.
  std::vector<SampleRef> test_samples;
  std::vector<bool> correct;
};

struct IdentificationReport {
  std::string provider;
  std::vector<TaskResult> per_task;
  Rates aggregate;
  double mean_calibrated_gap = 0.0;
  nlohmann::json config;
};

IdentificationReport run_identification(const std::vector<FewShotTask>& tasks,
                                        const FeatureProvider& provider,
                                        const IdentificationOptions& options,
                                        const std::string& provider_name = "features");

void write_report_csv(const IdentificationReport& report, std::ostream& out);
nlohmann::json report_to_json(const IdentificationReport& report);
IdentificationReport report_from_json(const nlohmann::json& j);

struct ReportComparison {
  std::string provider_a, provider_b;
  Rates aggregate_a, aggregate_b;
  McNemarResult pooled;
  /// Per task, in task order.
  std::vector<std::pair<std::string, McNemarResult>> per_task;
};

/// McNemar over the concatenated test decisions of two reports built from
/// the same tasks.
ReportComparison compare_reports(const IdentificationReport& a, const IdentificationReport& b,
                                 double alpha = 0.01);
nlohmann::json comparison_to_json(const ReportComparison& cmp);

}  // namespace tapid
