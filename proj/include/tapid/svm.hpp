#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tapid {

enum class KernelKind { linear, rbf };

std::string to_string(KernelKind kind);
KernelKind parse_kernel_kind(const std::string& text);

struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  /// RBF width. At training time a non-positive value requests the default
  /// 1 / (m * Var(X)) computed on the (standardized) training matrix.
  double gamma = 0.0;

  double operator()(std::span<const double> a, std::span<const double> b) const;
  bool operator==(const KernelSpec&) const = default;
};

/// Per-feature z-scoring fit on training data. Zero-variance features keep
/// scale 1.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardization fit(const std::vector<std::vector<double>>& rows);
  bool empty() const { return mean.empty(); }
  std::vector<double> apply(std::span<const double> x) const;

  bool operator==(const Standardization&) const = default;
};

/// Feature vectors with labels +1 / -1.
struct LabeledVectors {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;

  std::size_t size() const { return features.size(); }
  void push_back(std::vector<double> x, int y) {
    features.push_back(std::move(x));
    labels.push_back(y);
  }
};

struct SvmOptions {
  bool standardize = true;
  /// Maximal KKT violation at termination.
  double tolerance = 1e-3;
  /// Iteration cap in units of n pair updates.
  std::size_t max_passes = 10000;
};

struct SvmModel {
  /// Stored in the standardized feature space.
  std::vector<std::vector<double>> support_vectors;
  /// alpha_i * y_i for each support vector.
  std::vector<double> dual_coefficients;
  double bias = 0.0;
  KernelSpec kernel;
  double c = 1.0;
  Standardization standardization;
  bool converged = true;
  std::uint64_t iterations = 0;
  std::size_t dimension = 0;

  bool operator==(const SvmModel&) const = default;
};

/// Soft-margin dual by sequential pairwise (SMO) optimization with
/// second-order working-set selection.
SvmModel train_svm(const LabeledVectors& samples, KernelSpec kernel, double c,
                   const SvmOptions& options = {});

/// sum_i alpha_i y_i k(x_i, x) + b, with standardization applied to x.
double decision_value(const SvmModel& model, std::span<const double> x);

/// Sign of the decision value; exactly 0 maps to +1.
int predict(const SvmModel& model, std::span<const double> x);

/// Dual objective sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij of a
/// trained model, evaluated from its support vectors.
double dual_objective(const SvmModel& model);

/// gamma = 1 / (m * population variance of all entries pooled).
double default_rbf_gamma(const std::vector<std::vector<double>>& matrix);

struct CalibrationResult {
  SvmModel model;      // bias shifted by `offset`
  double offset = 0.0;
  double far = 0.0;
  double frr = 0.0;
  double gap = 0.0;    // |far - frr| on the calibration set
  double accuracy = 0.0;
  bool within_target = false;  // gap < 1%
};

/// Sweep the decision threshold over the calibration scores (midpoints of
/// consecutive distinct values, both extremes, and the current bias) and
/// pick the one minimizing |FAR - FRR|, then maximizing accuracy, then
/// minimizing the bias change.
CalibrationResult calibrate_bias(const SvmModel& model, const LabeledVectors& calibration);

/// Same sweep on raw scores: returns the chosen threshold offset and rates.
struct ThresholdChoice {
  double offset = 0.0;
  double far = 0.0, frr = 0.0, accuracy = 0.0;
};
ThresholdChoice sweep_threshold(std::span<const double> scores, std::span<const int> labels);

inline constexpr std::array<double, 4> kDefaultCGrid{0.1, 1.0, 10.0, 100.0};

struct GridSearchResult {
  double best_c = 0.0;
  std::vector<std::pair<double, double>> scores;  // (c, cross-validated accuracy)
};

/// Stratified k-fold cross-validated accuracy per c; ties go to the smaller c.
GridSearchResult grid_search_c(const LabeledVectors& samples, KernelSpec kernel,
                               std::span<const double> c_grid, std::size_t folds = 5,
                               const SvmOptions& options = {});

}  // namespace tapid
