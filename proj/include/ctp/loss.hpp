#pragma once

// Plane flattening, cross entropy, the three-plane tensor loss and the
// pairwise (similarity-matrix) baseline.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctp/error.hpp"
#include "ctp/similarity.hpp"

namespace ctp {

/// The plane a loss term lives in, named by its two varying axes. The fixed
/// axis is the remaining one: jk fixes text, ik fixes image, ij fixes point.
enum class Plane { jk, ik, ij };

enum class Flatten { nm, mask };

enum class Reduction { sum, mean };

inline constexpr std::array<Plane, 3> kPlanes = {Plane::jk, Plane::ik, Plane::ij};

inline const char* plane_name(Plane p) {
  switch (p) {
    case Plane::jk: return "jk";
    case Plane::ik: return "ik";
    case Plane::ij: return "ij";
  }
  return "?";
}

inline const char* flatten_name(Flatten f) { return f == Flatten::nm ? "nm" : "mask"; }

/// Initial logit scale is 1/0.07; the scale is exp(log_scale) capped at 100.
inline const double kInitLogScale = std::log(1.0 / 0.07);
inline constexpr double kMaxLogitScale = 100.0;
inline const double kMaxLogScale = std::log(kMaxLogitScale);

inline double logit_scale(double log_scale) {
  return std::min(std::exp(log_scale), kMaxLogitScale);
}

/// Tensor coordinates of plane entry (u, v) for fixed index ell.
struct Coord {
  std::size_t i, j, k;
};

inline Coord plane_coord(Plane plane, std::size_t ell, std::size_t u, std::size_t v) {
  switch (plane) {
    case Plane::jk: return {ell, u, v};
    case Plane::ik: return {u, ell, v};
    case Plane::ij: return {u, v, ell};
  }
  return {0, 0, 0};
}

/// An entry is masked when exactly one of its varying indices equals the
/// fixed index, i.e. it repeats the fixed modality's sample in one slot but
/// is not the matched triple. This drops 2(b-1) entries per plane.
inline bool masked(std::size_t ell, std::size_t u, std::size_t v) {
  return (u == ell) != (v == ell);
}

inline std::size_t flattened_length(std::size_t b, Flatten strategy) {
  return strategy == Flatten::nm ? b * b : b * b - 2 * b + 2;
}

struct FlattenedPlane {
  std::vector<double> logits;
  std::size_t target_pos = 0;
  std::vector<std::pair<std::size_t, std::size_t>> index_map;
  Flatten strategy = Flatten::mask;
};

/// Row-major flattening of the plane orthogonal to the fixed axis at `ell`.
inline FlattenedPlane flatten_plane(const SimilarityTensor& tensor, Plane plane,
                                    std::size_t ell, Flatten strategy) {
  const std::size_t b = tensor.batch();
  require(ell < b, Errc::out_of_range,
          "flatten_plane: ell " + std::to_string(ell) + " out of range for b = " +
              std::to_string(b));
  FlattenedPlane out;
  out.strategy = strategy;
  const std::size_t len = flattened_length(b, strategy);
  out.logits.reserve(len);
  out.index_map.reserve(len);
  for (std::size_t u = 0; u < b; ++u) {
    for (std::size_t v = 0; v < b; ++v) {
      if (strategy == Flatten::mask && masked(ell, u, v)) continue;
      if (u == ell && v == ell) out.target_pos = out.logits.size();
      const Coord c = plane_coord(plane, ell, u, v);
      out.logits.push_back(tensor(c.i, c.j, c.k));
      out.index_map.emplace_back(u, v);
    }
  }
  return out;
}

inline void check_scale(double scale) {
  require(std::isfinite(scale) && scale > 0.0, Errc::invalid_argument,
          "logit scale must be positive and finite");
}

/// -log softmax(scale * logits)[target], max-subtracted.
inline double cross_entropy(std::span<const double> logits, std::size_t target,
                            double scale) {
  require(!logits.empty(), Errc::invalid_argument, "cross_entropy: empty logits");
  require(target < logits.size(), Errc::out_of_range,
          "cross_entropy: target out of range");
  check_scale(scale);
  double top = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    require(std::isfinite(x), Errc::non_finite, "cross_entropy: non-finite logit");
    top = std::max(top, scale * x);
  }
  double sum = 0.0;
  for (double x : logits) sum += std::exp(scale * x - top);
  // log-sum-exp minus the target logit; never negative up to rounding.
  return std::max(0.0, std::log(sum) + top - scale * logits[target]);
}

inline double plane_loss(const SimilarityTensor& tensor, Plane plane,
                         Flatten strategy, double scale,
                         Reduction reduction = Reduction::sum) {
  const std::size_t b = tensor.batch();
  double total = 0.0;
  for (std::size_t ell = 0; ell < b; ++ell) {
    const auto flat = flatten_plane(tensor, plane, ell, strategy);
    total += cross_entropy(flat.logits, flat.target_pos, scale);
  }
  return reduction == Reduction::mean ? total / static_cast<double>(b) : total;
}

/// Weights of the three plane losses (jk, ik, ij) or of the three pairwise
/// losses (T-I, T-P, P-I).
struct Coefficients {
  double a = 1.0 / 3.0;
  double b = 1.0 / 3.0;
  double c = 1.0 / 3.0;

  std::array<double, 3> as_array() const { return {a, b, c}; }
  void validate() const {
    for (double w : as_array())
      require(std::isfinite(w) && w >= 0.0, Errc::invalid_argument,
              "loss coefficients must be finite and non-negative");
  }
  friend bool operator==(const Coefficients&, const Coefficients&) = default;
};

inline constexpr Coefficients kEqualThirds{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
/// Pairwise preset for training only the point encoder: no text-image term.
inline constexpr Coefficients kPointOnlyPairwise{0.0, 0.5, 0.5};

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> components;
  Coefficients coefficients;
};

struct TensorLossConfig {
  Metric metric = Metric::l2_mapped;
  Flatten strategy = Flatten::mask;
  Coefficients coefficients = kEqualThirds;
  Reduction reduction = Reduction::sum;
};

inline LossBreakdown tensor_loss(const FeatureBatch& t, const FeatureBatch& i,
                                 const FeatureBatch& p, const TensorLossConfig& cfg,
                                 double scale) {
  cfg.coefficients.validate();
  check_scale(scale);
  const auto tensor = similarity_tensor(cfg.metric, t, i, p);
  LossBreakdown out;
  out.coefficients = cfg.coefficients;
  const auto w = cfg.coefficients.as_array();
  for (std::size_t n = 0; n < kPlanes.size(); ++n) {
    const double l = plane_loss(tensor, kPlanes[n], cfg.strategy, scale, cfg.reduction);
    out.components[plane_name(kPlanes[n])] = l;
    out.total += w[n] * l;
  }
  return out;
}

/// Symmetric two-modality contrastive loss: the mean of the row-wise and
/// column-wise cross entropies (each averaged over the batch) of the scaled
/// cosine matrix, diagonal targets.
inline double clip_pair_loss(const FeatureBatch& a, const FeatureBatch& b,
                             double scale) {
  check_scale(scale);
  require(a.batch() == b.batch(), Errc::dimension_mismatch,
          "clip_pair_loss: batch sizes differ");
  const auto m = cosine_pair_matrix(a, b);
  const std::size_t n = m.rows();
  double rows = 0.0;
  double cols = 0.0;
  std::vector<double> column(n);
  for (std::size_t r = 0; r < n; ++r) {
    rows += cross_entropy(m.row(r), r, scale);
    for (std::size_t q = 0; q < n; ++q) column[q] = m(q, r);
    cols += cross_entropy(column, r, scale);
  }
  return 0.5 * (rows + cols) / static_cast<double>(n);
}

/// a * L(T-I) + b * L(T-P) + c * L(P-I).
inline LossBreakdown pairwise_loss(const FeatureBatch& t, const FeatureBatch& i,
                                   const FeatureBatch& p, const Coefficients& coeffs,
                                   double scale) {
  coeffs.validate();
  require(t.batch() == i.batch() && t.batch() == p.batch(), Errc::dimension_mismatch,
          "pairwise_loss: batch sizes differ");
  LossBreakdown out;
  out.coefficients = coeffs;
  out.components["T-I"] = clip_pair_loss(t, i, scale);
  out.components["T-P"] = clip_pair_loss(t, p, scale);
  out.components["P-I"] = clip_pair_loss(p, i, scale);
  out.total = coeffs.a * out.components["T-I"] + coeffs.b * out.components["T-P"] +
              coeffs.c * out.components["P-I"];
  return out;
}

}  // namespace ctp
