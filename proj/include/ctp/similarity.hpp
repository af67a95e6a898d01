#pragma once

// Normalization and the similarity functions over three-modality batches.
//
// Axis convention used everywhere in this library: a similarity tensor entry
// (i, j, k) scores text row i, image row j and point row k. Both metrics are
// symmetric in the three vectors, so the convention only matters for
// indexing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ctp/error.hpp"
#include "ctp/matrix.hpp"
#include "ctp/parallel.hpp"

namespace ctp {

enum class Modality { text, image, point };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::image: return "image";
    case Modality::point: return "point";
  }
  return "?";
}

enum class Metric { cosine, l2_mapped };

inline const char* metric_name(Metric m) {
  return m == Metric::cosine ? "cosine" : "l2_mapped";
}

/// Tolerance on the unit-norm flag.
inline constexpr double kUnitNormTol = 1e-6;

/// Default cap on the batch size of a dense b*b*b tensor.
inline constexpr std::size_t kDefaultMaxBatch = 512;

inline double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

/// Returns v / |v|. Zero-norm (or non-finite) input is rejected rather than
/// perturbed.
inline std::vector<double> normalize(std::span<const double> v) {
  require(!v.empty(), Errc::degenerate_input, "normalize: empty vector");
  for (double x : v)
    require(std::isfinite(x), Errc::non_finite, "normalize: non-finite entry");
  const double n = norm2(v);
  require(n > 0.0, Errc::degenerate_input, "normalize: zero norm");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

/// One modality's b x d block of embeddings.
struct FeatureBatch {
  Matrix<double> values;
  Modality modality = Modality::text;
  bool normalized = false;

  std::size_t batch() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
  std::span<const double> row(std::size_t r) const { return values.row(r); }

  /// Wraps raw features without touching them.
  static FeatureBatch raw(Matrix<double> m, Modality mod) {
    require(m.rows() >= 1 && m.cols() >= 1, Errc::degenerate_input,
            "feature batch must be at least 1x1");
    return FeatureBatch{std::move(m), mod, false};
  }

  /// Normalizes every row.
  static FeatureBatch unit(const Matrix<double>& m, Modality mod) {
    require(m.rows() >= 1 && m.cols() >= 1, Errc::degenerate_input,
            "feature batch must be at least 1x1");
    Matrix<double> out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto n = normalize(m.row(r));
      std::copy(n.begin(), n.end(), out.row(r).begin());
    }
    return FeatureBatch{std::move(out), mod, true};
  }

  /// Accepts rows that are already unit norm (within kUnitNormTol).
  static FeatureBatch assume_unit(Matrix<double> m, Modality mod) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const double n = norm2(m.row(r));
      require(std::abs(n - 1.0) <= kUnitNormTol, Errc::invalid_argument,
              "row " + std::to_string(r) + " is not unit norm");
    }
    return FeatureBatch{std::move(m), mod, true};
  }
};

namespace detail {

inline void check_pair(const FeatureBatch& a, const FeatureBatch& b,
                       const char* what) {
  require(a.normalized && b.normalized, Errc::invalid_argument,
          std::string(what) + ": batches must be normalized");
  require(a.dim() == b.dim(), Errc::dimension_mismatch,
          std::string(what) + ": embedding dimensions differ");
}

inline std::size_t check_triplet(const FeatureBatch& t, const FeatureBatch& i,
                                 const FeatureBatch& p, std::size_t max_batch,
                                 const char* what) {
  check_pair(t, i, what);
  check_pair(t, p, what);
  require(t.batch() == i.batch() && t.batch() == p.batch(),
          Errc::dimension_mismatch, std::string(what) + ": batch sizes differ");
  require(t.batch() <= max_batch, Errc::out_of_range,
          std::string(what) + ": batch size " + std::to_string(t.batch()) +
              " exceeds limit " + std::to_string(max_batch));
  return t.batch();
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    const double d = a[n] - b[n];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace detail

/// Entry (r, c) = a.row(r) . b.row(c).
inline Matrix<double> cosine_pair_matrix(const FeatureBatch& a,
                                         const FeatureBatch& b) {
  detail::check_pair(a, b, "cosine_pair_matrix");
  Matrix<double> out(a.batch(), b.batch());
  for (std::size_t r = 0; r < a.batch(); ++r)
    for (std::size_t c = 0; c < b.batch(); ++c)
      out(r, c) = dot(a.row(r), b.row(c));
  return out;
}

/// Entry (r, c) = |a.row(r) - b.row(c)|, unsquared.
inline Matrix<double> distance_pair_matrix(const FeatureBatch& a,
                                           const FeatureBatch& b) {
  detail::check_pair(a, b, "distance_pair_matrix");
  Matrix<double> out(a.batch(), b.batch());
  for (std::size_t r = 0; r < a.batch(); ++r)
    for (std::size_t c = 0; c < b.batch(); ++c)
      out(r, c) = detail::distance(a.row(r), b.row(c));
  return out;
}

/// Dense b x b x b array indexed (text, image, point).
class Cube {
 public:
  Cube() = default;
  explicit Cube(std::size_t b, double fill = 0.0) : b_(b), data_(b * b * b, fill) {}

  std::size_t batch() const noexcept { return b_; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * b_ + j) * b_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * b_ + j) * b_ + k];
  }
  std::span<const double> flat() const { return data_; }
  std::span<double> flat() { return data_; }

 private:
  std::size_t b_ = 0;
  std::vector<double> data_;
};

/// Similarity scores tagged with the metric that produced them.
struct SimilarityTensor {
  Cube scores;
  Metric metric = Metric::l2_mapped;

  std::size_t batch() const { return scores.batch(); }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return scores(i, j, k);
  }
};

/// Both metrics are sums of three pairwise terms, so the cube is assembled
/// from three b x b matrices: entry = offset + weight * (ti(i,j) + tp(i,k) + ip(j,k)).
inline Cube assemble_cube(const Matrix<double>& ti, const Matrix<double>& tp,
                          const Matrix<double>& ip, double offset,
                          double weight) {
  const std::size_t b = ti.rows();
  Cube cube(b);
  parallel_for(b, [&](std::size_t i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double tij = ti(i, j);
      for (std::size_t k = 0; k < b; ++k)
        cube(i, j, k) = offset + weight * (tij + tp(i, k) + ip(j, k));
    }
  });
  return cube;
}

/// Mean of the three pairwise dot products of each (text, image, point) triple.
inline SimilarityTensor cosine_tensor(const FeatureBatch& t,
                                      const FeatureBatch& i,
                                      const FeatureBatch& p,
                                      std::size_t max_batch = kDefaultMaxBatch) {
  detail::check_triplet(t, i, p, max_batch, "cosine_tensor");
  return {assemble_cube(cosine_pair_matrix(t, i), cosine_pair_matrix(t, p),
                        cosine_pair_matrix(i, p), 0.0, 1.0 / 3.0),
          Metric::cosine};
}

/// Sum of the three pairwise (unsquared) Euclidean distances of each triple.
inline Cube l2_tensor(const FeatureBatch& t, const FeatureBatch& i,
                      const FeatureBatch& p,
                      std::size_t max_batch = kDefaultMaxBatch) {
  detail::check_triplet(t, i, p, max_batch, "l2_tensor");
  return assemble_cube(distance_pair_matrix(t, i), distance_pair_matrix(t, p),
                       distance_pair_matrix(i, p), 0.0, 1.0);
}

/// Largest possible sum of pairwise distances between q unit vectors. Only
/// q = 3 (equilateral triangle on a great circle, 3*sqrt(3)) is supported.
inline double l_max(int q) {
  require(q == 3, Errc::unsupported,
          "unsupported q = " + std::to_string(q) + " (only q = 3)");
  return 3.0 * std::numbers::sqrt3;
}

/// 1 - raw / l_max(q), clamped at 0 against rounding above the bound.
inline double map_l2(double raw, int q = 3) {
  const double lmax = l_max(q);
  require(raw >= 0.0, Errc::out_of_range, "map_l2: negative distance sum");
  return std::max(0.0, 1.0 - raw / lmax);
}

inline SimilarityTensor map_l2(const Cube& raw, int q = 3) {
  const double lmax = l_max(q);
  Cube out(raw.batch());
  auto src = raw.flat();
  auto dst = out.flat();
  for (std::size_t n = 0; n < src.size(); ++n) {
    require(src[n] >= 0.0, Errc::out_of_range, "map_l2: negative distance sum");
    dst[n] = std::max(0.0, 1.0 - src[n] / lmax);
  }
  return {std::move(out), Metric::l2_mapped};
}

inline SimilarityTensor similarity_tensor(Metric metric, const FeatureBatch& t,
                                          const FeatureBatch& i,
                                          const FeatureBatch& p,
                                          std::size_t max_batch = kDefaultMaxBatch) {
  if (metric == Metric::cosine) return cosine_tensor(t, i, p, max_batch);
  return map_l2(l2_tensor(t, i, p, max_batch), 3);
}

/// Combination counts for q modalities and batch b: the full tensor covers
/// b^q entries, pairwise matrices cover q(q-1)/2 * b^2.
struct CombinationCount {
  unsigned long long tensor_entries;
  unsigned long long pairwise_entries;
};

inline CombinationCount count_combinations(unsigned long long b, int q = 3) {
  require(q >= 2, Errc::invalid_argument, "need at least two modalities");
  unsigned long long tensor = 1;
  for (int n = 0; n < q; ++n) tensor *= b;
  const unsigned long long pairs = static_cast<unsigned long long>(q) * (q - 1) / 2;
  return {tensor, pairs * b * b};
}

}  // namespace ctp
