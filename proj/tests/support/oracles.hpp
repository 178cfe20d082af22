#pragma once

// Independent reference computations used as test oracles. Nothing here
// shares code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double rbf(const std::vector<double>& a, const std::vector<double>& b, double gamma) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-gamma * d);
}

// Projection onto {0 <= a <= c, y.a = 0}: a_i = clip(z_i - mu y_i, 0, c),
// with mu found by bisection (y.a is non-increasing in mu).
inline std::vector<double> project(const std::vector<double>& z, const std::vector<int>& y, double c) {
  auto at = [&](double mu) {
    std::vector<double> a(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      a[i] = std::clamp(z[i] - mu * y[i], 0.0, c);
      s += y[i] * a[i];
    }
    return std::pair{a, s};
  };
  double lo = -1e6, hi = 1e6;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (at(mid).second > 0.0) lo = mid; else hi = mid;
  }
  return at(0.5 * (lo + hi)).first;
}

struct QpSolution {
  std::vector<double> alpha;
  double objective;
};

// Maximizes sum(a) - 1/2 a'Qa, Q_ij = y_i y_j K_ij, by accelerated projected
// gradient ascent.
inline QpSolution svm_dual(const std::vector<std::vector<double>>& K, const std::vector<int>& y,
                           double c, int iterations = 20000) {
  const std::size_t n = y.size();
  double lipschitz = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(K[i][j]);
    lipschitz = std::max(lipschitz, row);
  }
  const double step = 1.0 / std::max(lipschitz, 1e-12);
  auto grad = [&](const std::vector<double>& a) {
    std::vector<double> g(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i] -= y[i] * y[j] * K[i][j] * a[j];
    }
    return g;
  };
  auto objective = [&](const std::vector<double>& a) {
    double lin = 0.0, quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      lin += a[i];
      for (std::size_t j = 0; j < n; ++j) quad += a[i] * a[j] * y[i] * y[j] * K[i][j];
    }
    return lin - 0.5 * quad;
  };
  std::vector<double> a(n, 0.0), prev = a, v = a;
  double t = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const auto g = grad(v);
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = v[i] + step * g[i];
    prev = a;
    a = project(z, y, c);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    for (std::size_t i = 0; i < n; ++i) v[i] = a[i] + (t - 1.0) / t_next * (a[i] - prev[i]);
    t = t_next;
  }
  return {a, objective(a)};
}

// Smallest |FAR - FRR| over every acceptance set of the form {s >= tau}.
inline double best_gap(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<double> taus(scores.begin(), scores.end());
  taus.push_back(std::numeric_limits<double>::infinity());
  double npos = 0, nneg = 0;
  for (int l : labels) (l == 1 ? npos : nneg) += 1;
  double best = 2.0;
  for (double tau : taus) {
    double fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool acc = scores[i] >= tau;
      if (labels[i] == 1 && !acc) fn += 1;
      if (labels[i] != 1 && acc) fp += 1;
    }
    best = std::min(best, std::abs(fp / nneg - fn / npos));
  }
  return best;
}

}  // namespace oracle
