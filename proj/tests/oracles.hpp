#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library's scoring, loss or sampling code; everything is a direct loop in
// long double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline long double dot(const Vec& a, const Vec& b) {
  long double s = 0;
  for (std::size_t n = 0; n < a.size(); ++n) s += static_cast<long double>(a[n]) * b[n];
  return s;
}

inline long double dist(const Vec& a, const Vec& b) {
  long double s = 0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    const long double d = static_cast<long double>(a[n]) - b[n];
    s += d * d;
  }
  return std::sqrt(s);
}

inline Vec unit(const Vec& v) {
  const long double n = std::sqrt(dot(v, v));
  Vec out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = static_cast<double>(v[k] / n);
  return out;
}

inline Vec random_unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec v(d);
  for (double& x : v) x = g(rng);
  return unit(v);
}

inline std::vector<Vec> random_units(std::size_t b, std::size_t d, std::mt19937_64& rng) {
  std::vector<Vec> out;
  for (std::size_t r = 0; r < b; ++r) out.push_back(random_unit(d, rng));
  return out;
}

inline double cosine_score(const Vec& t, const Vec& i, const Vec& p) {
  return static_cast<double>((dot(t, i) + dot(t, p) + dot(i, p)) / 3.0L);
}

inline double l2_raw(const Vec& t, const Vec& i, const Vec& p) {
  return static_cast<double>(dist(t, i) + dist(t, p) + dist(i, p));
}

inline double l2_mapped(const Vec& t, const Vec& i, const Vec& p) {
  const long double lmax = 3.0L * std::sqrt(3.0L);
  return static_cast<double>(1.0L - (dist(t, i) + dist(t, p) + dist(i, p)) / lmax);
}

/// -log softmax(scale * x)[target], in long double.
inline double cross_entropy(const Vec& x, std::size_t target, double scale) {
  long double top = -std::numeric_limits<long double>::infinity();
  for (double v : x) top = std::max(top, static_cast<long double>(scale) * v);
  long double s = 0;
  for (double v : x) s += std::exp(static_cast<long double>(scale) * v - top);
  return static_cast<double>(std::log(s) + top - static_cast<long double>(scale) * x[target]);
}

/// Row and column softmax cross entropies of the scaled cosine matrix.
inline double clip_pair(const std::vector<Vec>& a, const std::vector<Vec>& b, double scale) {
  const std::size_t n = a.size();
  long double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    Vec row(n), col(n);
    for (std::size_t q = 0; q < n; ++q) {
      row[q] = static_cast<double>(dot(a[r], b[q]));
      col[q] = static_cast<double>(dot(a[q], b[r]));
    }
    total += cross_entropy(row, r, scale) + cross_entropy(col, r, scale);
  }
  return static_cast<double>(total / (2.0L * n));
}

/// Farthest point sampling recomputed from scratch at every step.
inline std::vector<std::size_t> fps(const std::vector<std::array<double, 3>>& pts, std::size_t k,
                                    std::size_t start) {
  std::vector<std::size_t> chosen{start};
  while (chosen.size() < k) {
    std::size_t best = pts.size();
    long double best_d = -1;
    for (std::size_t p = 0; p < pts.size(); ++p) {
      if (std::find(chosen.begin(), chosen.end(), p) != chosen.end()) continue;
      long double m = std::numeric_limits<long double>::infinity();
      for (std::size_t c : chosen) {
        long double s = 0;
        for (int a = 0; a < 3; ++a) {
          const long double d = static_cast<long double>(pts[p][a]) - pts[c][a];
          s += d * d;
        }
        m = std::min(m, s);
      }
      if (m > best_d) {
        best_d = m;
        best = p;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

/// Scalar AdamW recurrence, written out step by step.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double p, double g, double lr, double b1, double b2, double eps, double wd) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    p = p - lr * wd * p;
    return p - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace oracle
