#include "tapid/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tapid/errors.hpp"
#include "tapid/simd/kernels.hpp"

namespace tapid {

std::string to_string(KernelKind kind) { return kind == KernelKind::linear ? "linear" : "rbf"; }

KernelKind parse_kernel_kind(const std::string& text) {
  if (text == "linear") return KernelKind::linear;
  if (text == "rbf") return KernelKind::rbf;
  throw InvalidInput("unknown kernel '" + text + "'");
}

double KernelSpec::operator()(std::span<const double> a, std::span<const double> b) const {
  const auto& k = simd::active_kernels();
  if (kind == KernelKind::linear) return k.ddot(a.data(), b.data(), a.size());
  return std::exp(-gamma * k.dsqdist(a.data(), b.data(), a.size()));
}

Standardization Standardization::fit(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw InvalidInput("standardization: no rows");
  const std::size_t d = rows.front().size();
  Standardization s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  }
  for (auto& m : s.mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = r[j] - s.mean[j];
      s.scale[j] += dv * dv;
    }
  }
  for (auto& sc : s.scale) {
    sc = std::sqrt(sc / static_cast<double>(rows.size()));
    if (!(sc > 1e-12)) sc = 1.0;
  }
  return s;
}

std::vector<double> Standardization::apply(std::span<const double> x) const {
  if (empty()) return {x.begin(), x.end()};
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
  return out;
}

double default_rbf_gamma(const std::vector<std::vector<double>>& matrix) {
  if (matrix.empty() || matrix.front().empty()) throw InvalidInput("default_rbf_gamma: empty matrix");
  const std::size_t m = matrix.front().size();
  double mean = 0.0;
  std::size_t count = 0;
  for (const auto& r : matrix) {
    for (double v : r) mean += v;
    count += r.size();
  }
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (const auto& r : matrix) {
    for (double v : r) var += (v - mean) * (v - mean);
  }
  var /= static_cast<double>(count);
  if (!(var > 0.0)) throw InvalidInput("default_rbf_gamma: zero variance");
  return 1.0 / (static_cast<double>(m) * var);
}

namespace {

void check_samples(const LabeledVectors& samples) {
  if (samples.features.size() != samples.labels.size()) {
    throw InvalidInput("svm: features/labels count mismatch");
  }
  if (samples.size() == 0) throw InvalidInput("svm: no samples");
  const std::size_t d = samples.features.front().size();
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples.features[i].size() != d) throw InvalidInput("svm: inconsistent dimensions");
    for (double v : samples.features[i]) {
      if (!std::isfinite(v)) throw InvalidInput("svm: non-finite feature");
    }
    if (samples.labels[i] == 1) {
      pos = true;
    } else if (samples.labels[i] == -1) {
      neg = true;
    } else {
      throw InvalidInput("svm: labels must be +1 or -1");
    }
  }
  if (!pos || !neg) throw InvalidInput("svm: both classes are required");
}

}  // namespace

SvmModel train_svm(const LabeledVectors& samples, KernelSpec kernel, double c,
                   const SvmOptions& options) {
  check_samples(samples);
  if (!(c > 0.0)) throw InvalidInput("svm: C must be positive");

  SvmModel model;
  model.c = c;
  model.dimension = samples.features.front().size();
  if (options.standardize) model.standardization = Standardization::fit(samples.features);

  const std::size_t n = samples.size();
  std::vector<std::vector<double>> x;
  x.reserve(n);
  for (const auto& f : samples.features) x.push_back(model.standardization.apply(f));

  if (kernel.kind == KernelKind::rbf && !(kernel.gamma > 0.0)) {
    kernel.gamma = default_rbf_gamma(x);
  }
  model.kernel = kernel;

  const auto& y = samples.labels;
  std::vector<double> K(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) K[i * n + j] = K[j * n + i] = kernel(x[i], x[j]);
  }

  constexpr double tau = 1e-12;
  std::vector<double> alpha(n, 0.0), G(n, -1.0);
  auto in_up = [&](std::size_t t) { return y[t] == 1 ? alpha[t] < c : alpha[t] > 0.0; };
  auto in_low = [&](std::size_t t) { return y[t] == 1 ? alpha[t] > 0.0 : alpha[t] < c; };

  const std::uint64_t max_iter = static_cast<std::uint64_t>(options.max_passes) * std::max<std::size_t>(n, 1);
  model.converged = false;
  std::uint64_t iter = 0;
  for (; iter < max_iter; ++iter) {
    double gmax = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t i = -1;
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(t) && -y[t] * G[t] >= gmax) {
        gmax = -y[t] * G[t];
        i = static_cast<std::ptrdiff_t>(t);
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t j = -1;
    double best_obj = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      gmax2 = std::max(gmax2, y[t] * G[t]);
      const double grad_diff = gmax + y[t] * G[t];
      if (i >= 0 && grad_diff > 0.0) {
        const auto iu = static_cast<std::size_t>(i);
        double quad = K[iu * n + iu] + K[t * n + t] - 2.0 * K[iu * n + t];
        if (quad <= 0.0) quad = tau;
        const double obj = -(grad_diff * grad_diff) / quad;
        if (obj <= best_obj) {
          best_obj = obj;
          j = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    if (i < 0 || j < 0 || gmax + gmax2 < options.tolerance) {
      model.converged = true;
      break;
    }

    const auto iu = static_cast<std::size_t>(i), ju = static_cast<std::size_t>(j);
    const double old_ai = alpha[iu], old_aj = alpha[ju];
    double quad = K[iu * n + iu] + K[ju * n + ju] - 2.0 * K[iu * n + ju];
    if (quad <= 0.0) quad = tau;
    double& ai = alpha[iu];
    double& aj = alpha[ju];
    if (y[iu] != y[ju]) {
      const double delta = (-G[iu] - G[ju]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0.0) {
        if (aj < 0.0) { aj = 0.0; ai = diff; }
      } else {
        if (ai < 0.0) { ai = 0.0; aj = -diff; }
      }
      if (diff > 0.0) {
        if (ai > c) { ai = c; aj = c - diff; }
      } else {
        if (aj > c) { aj = c; ai = c + diff; }
      }
    } else {
      const double delta = (G[iu] - G[ju]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > c) {
        if (ai > c) { ai = c; aj = sum - c; }
      } else {
        if (aj < 0.0) { aj = 0.0; ai = sum; }
      }
      if (sum > c) {
        if (aj > c) { aj = c; ai = sum - c; }
      } else {
        if (ai < 0.0) { ai = 0.0; aj = sum; }
      }
    }
    const double dai = ai - old_ai, daj = aj - old_aj;
    for (std::size_t t = 0; t < n; ++t) {
      G[t] += y[t] * (y[iu] * K[t * n + iu] * dai + y[ju] * K[t * n + ju] * daj);
    }
  }
  model.iterations = iter;

  // Bias from free vectors, else the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  std::size_t nr_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * G[t];
    if (alpha[t] >= c) {
      if (y[t] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0.0) {
      if (y[t] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++nr_free;
      sum_free += yg;
    }
  }
  const double rho = nr_free > 0 ? sum_free / static_cast<double>(nr_free) : (ub + lb) / 2.0;
  model.bias = -rho;

  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0) {
      model.support_vectors.push_back(x[t]);
      model.dual_coefficients.push_back(alpha[t] * y[t]);
    }
  }
  return model;
}

double decision_value(const SvmModel& model, std::span<const double> x) {
  if (x.size() != model.dimension) {
    throw InvalidInput("decision_value: expected dimension " + std::to_string(model.dimension) +
                       ", got " + std::to_string(x.size()));
  }
  const auto z = model.standardization.apply(x);
  double f = model.bias;
  for (std::size_t i = 0; i < model.support_vectors.size(); ++i) {
    f += model.dual_coefficients[i] * model.kernel(model.support_vectors[i], z);
  }
  return f;
}

int predict(const SvmModel& model, std::span<const double> x) {
  return decision_value(model, x) >= 0.0 ? 1 : -1;
}

double dual_objective(const SvmModel& model) {
  double lin = 0.0, quad = 0.0;
  const std::size_t n = model.support_vectors.size();
  for (std::size_t i = 0; i < n; ++i) {
    lin += std::abs(model.dual_coefficients[i]);
    for (std::size_t j = 0; j < n; ++j) {
      quad += model.dual_coefficients[i] * model.dual_coefficients[j] *
              model.kernel(model.support_vectors[i], model.support_vectors[j]);
    }
  }
  return lin - 0.5 * quad;
}

ThresholdChoice sweep_threshold(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidInput("calibration: size mismatch");
  std::size_t npos = 0, nneg = 0;
  for (int l : labels) (l == 1 ? npos : nneg)++;
  if (npos == 0 || nneg == 0) throw InvalidInput("calibration: both classes are required");

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> thresholds{0.0, sorted.front() - 1.0, sorted.back() + 1.0};
  for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
    thresholds.push_back(sorted[k] + (sorted[k + 1] - sorted[k]) / 2.0);
  }

  constexpr double eq = 1e-12;
  ThresholdChoice best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double tau : thresholds) {
    std::size_t fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool accept = scores[i] >= tau;
      if (labels[i] == 1 && !accept) ++fn;
      if (labels[i] != 1 && accept) ++fp;
    }
    ThresholdChoice cand;
    cand.offset = -tau;
    cand.far = static_cast<double>(fp) / static_cast<double>(nneg);
    cand.frr = static_cast<double>(fn) / static_cast<double>(npos);
    cand.accuracy = 1.0 - static_cast<double>(fp + fn) / static_cast<double>(scores.size());
    const double gap = std::abs(cand.far - cand.frr);
    bool better = gap < best_gap - eq;
    if (!better && std::abs(gap - best_gap) <= eq) {
      better = cand.accuracy > best.accuracy + eq ||
               (std::abs(cand.accuracy - best.accuracy) <= eq &&
                std::abs(cand.offset) < std::abs(best.offset));
    }
    if (better) {
      best = cand;
      best_gap = gap;
    }
  }
  return best;
}

CalibrationResult calibrate_bias(const SvmModel& model, const LabeledVectors& calibration) {
  if (calibration.features.size() != calibration.labels.size()) {
    throw InvalidInput("calibration: features/labels count mismatch");
  }
  std::vector<double> scores;
  scores.reserve(calibration.size());
  for (const auto& x : calibration.features) scores.push_back(decision_value(model, x));
  const auto choice = sweep_threshold(scores, calibration.labels);

  CalibrationResult result;
  result.model = model;
  result.model.bias += choice.offset;
  result.offset = choice.offset;
  result.far = choice.far;
  result.frr = choice.frr;
  result.gap = std::abs(choice.far - choice.frr);
  result.accuracy = choice.accuracy;
  result.within_target = result.gap < 0.01;
  return result;
}

GridSearchResult grid_search_c(const LabeledVectors& samples, KernelSpec kernel,
                               std::span<const double> c_grid, std::size_t folds,
                               const SvmOptions& options) {
  if (c_grid.empty()) throw InvalidInput("grid_search_c: empty grid");
  if (folds < 2) throw InvalidInput("grid_search_c: need at least 2 folds");
  check_samples(samples);

  // Stratified: the r-th sample of each class goes to fold r mod k.
  std::vector<std::size_t> fold_of(samples.size());
  std::size_t seen_pos = 0, seen_neg = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& seen = samples.labels[i] == 1 ? seen_pos : seen_neg;
    fold_of[i] = seen++ % folds;
  }
  if (seen_pos < folds || seen_neg < folds) {
    throw InvalidInput("grid_search_c: fewer samples than folds in a class");
  }

  std::vector<double> grid(c_grid.begin(), c_grid.end());
  std::sort(grid.begin(), grid.end());

  GridSearchResult result;
  double best_score = -1.0;
  for (double c : grid) {
    std::size_t correct = 0;
    for (std::size_t f = 0; f < folds; ++f) {
      LabeledVectors train, test;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        (fold_of[i] == f ? test : train).push_back(samples.features[i], samples.labels[i]);
      }
      const auto model = train_svm(train, kernel, c, options);
      for (std::size_t i = 0; i < test.size(); ++i) {
        correct += predict(model, test.features[i]) == test.labels[i];
      }
    }
    const double score = static_cast<double>(correct) / static_cast<double>(samples.size());
    result.scores.emplace_back(c, score);
    if (score > best_score) {
      best_score = score;
      result.best_c = c;
    }
  }
  return result;
}

}  // namespace tapid
