#pragma once

// Exact gradients of the tensor and pairwise losses with respect to raw
// (pre-normalization) features and the log logit scale, a central-difference
// checker, and a brute-force loss oracle that shares no code with loss.hpp.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ctp/error.hpp"
#include "ctp/loss.hpp"
#include "ctp/matrix.hpp"
#include "ctp/similarity.hpp"

namespace ctp {

enum class LossKind { tensor, pairwise };

/// A complete loss configuration: either the tensor loss with its metric,
/// flattening and plane weights, or the pairwise baseline with its weights.
struct LossSpec {
  LossKind kind = LossKind::tensor;
  TensorLossConfig tensor;
  Coefficients pairwise = kEqualThirds;

  std::string tag() const {
    if (kind == LossKind::pairwise) return "pairwise";
    if (tensor.metric == Metric::cosine)
      return tensor.strategy == Flatten::mask ? "ctp_cosine" : "ctp_cosine_nm";
    return tensor.strategy == Flatten::mask ? "ctp_mask" : "ctp_nm";
  }
};

/// Maps a loss tag (ctp_mask, ctp_nm, ctp_cosine, ctp_cosine_nm, pairwise)
/// onto a LossSpec with equal-thirds weights.
inline LossSpec loss_from_tag(const std::string& tag) {
  LossSpec s;
  if (tag == "ctp_mask") {
    s.tensor = {Metric::l2_mapped, Flatten::mask};
  } else if (tag == "ctp_nm") {
    s.tensor = {Metric::l2_mapped, Flatten::nm};
  } else if (tag == "ctp_cosine") {
    s.tensor = {Metric::cosine, Flatten::mask};
  } else if (tag == "ctp_cosine_nm") {
    s.tensor = {Metric::cosine, Flatten::nm};
  } else if (tag == "pairwise") {
    s.kind = LossKind::pairwise;
  } else {
    fail(Errc::invalid_argument, "unknown loss '" + tag + "'");
  }
  return s;
}

/// Distance floor inside the derivative of |a - b|.
inline constexpr double kDistanceFloor = 1e-12;

struct FeatureGradient {
  LossBreakdown breakdown;
  Matrix<double> d_text;
  Matrix<double> d_image;
  Matrix<double> d_point;
  double d_log_scale = 0.0;

  double loss() const { return breakdown.total; }
};

namespace detail {

struct Normalized {
  Matrix<double> unit;
  std::vector<double> norms;
};

inline Normalized normalize_rows(const Matrix<double>& raw) {
  Normalized out{Matrix<double>(raw.rows(), raw.cols()), std::vector<double>(raw.rows())};
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    const auto row = raw.row(r);
    const double n = norm2(row);
    require(std::isfinite(n), Errc::non_finite, "non-finite feature row");
    require(n > 0.0, Errc::degenerate_input,
            "zero norm feature row " + std::to_string(r));
    out.norms[r] = n;
    for (std::size_t c = 0; c < row.size(); ++c) out.unit(r, c) = row[c] / n;
  }
  return out;
}

/// Gradient through f_hat = f / |f|: (g - f_hat (f_hat . g)) / |f|.
inline Matrix<double> normalize_backward(const Normalized& n, const Matrix<double>& g) {
  Matrix<double> out(g.rows(), g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double proj = dot(n.unit.row(r), g.row(r));
    for (std::size_t c = 0; c < g.cols(); ++c)
      out(r, c) = (g(r, c) - n.unit(r, c) * proj) / n.norms[r];
  }
  return out;
}

/// Backward of one pairwise term matrix m(r, c) = sim(a_r, b_c) given dL/dm.
inline void pair_term_backward(Metric metric, const Matrix<double>& a,
                               const Matrix<double>& b, const Matrix<double>& m,
                               const Matrix<double>& dm, Matrix<double>& da,
                               Matrix<double>& db) {
  const std::size_t d = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < b.rows(); ++c) {
      const double g = dm(r, c);
      if (g == 0.0) continue;
      if (metric == Metric::cosine) {
        for (std::size_t n = 0; n < d; ++n) {
          da(r, n) += g * b(c, n);
          db(c, n) += g * a(r, n);
        }
      } else {
        const double dist = m(r, c);
        if (dist == 0.0) continue;  // subgradient 0 at coincidence
        const double inv = g / std::max(dist, kDistanceFloor);
        for (std::size_t n = 0; n < d; ++n) {
          const double diff = (a(r, n) - b(c, n)) * inv;
          da(r, n) += diff;
          db(c, n) -= diff;
        }
      }
    }
  }
}

inline Matrix<double> pair_term(Metric metric, const Matrix<double>& a,
                                const Matrix<double>& b) {
  Matrix<double> m(a.rows(), b.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < b.rows(); ++c)
      m(r, c) = metric == Metric::cosine ? dot(a.row(r), b.row(c))
                                         : distance(a.row(r), b.row(c));
  return m;
}

struct PlaneAccum {
  double loss = 0.0;
  double d_scale = 0.0;
};

/// Loss of one plane and its gradient scattered into the three pairwise
/// term gradients. `dscore_weight` converts dL/dscore into dL/dterm.
inline PlaneAccum plane_forward_backward(const Cube& scores, Plane plane,
                                         Flatten strategy, double scale, double weight,
                                         double dterm_per_dscore, Matrix<double>& g_ti,
                                         Matrix<double>& g_tp, Matrix<double>& g_ip) {
  const std::size_t b = scores.batch();
  PlaneAccum acc;
  std::vector<double> probs(b * b);
  for (std::size_t ell = 0; ell < b; ++ell) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t u = 0; u < b; ++u)
      for (std::size_t v = 0; v < b; ++v) {
        if (strategy == Flatten::mask && masked(ell, u, v)) continue;
        const Coord c = plane_coord(plane, ell, u, v);
        top = std::max(top, scale * scores(c.i, c.j, c.k));
      }
    double sum = 0.0;
    for (std::size_t u = 0; u < b; ++u)
      for (std::size_t v = 0; v < b; ++v) {
        if (strategy == Flatten::mask && masked(ell, u, v)) {
          probs[u * b + v] = 0.0;
          continue;
        }
        const Coord c = plane_coord(plane, ell, u, v);
        const double e = std::exp(scale * scores(c.i, c.j, c.k) - top);
        probs[u * b + v] = e;
        sum += e;
      }
    const Coord tc = plane_coord(plane, ell, ell, ell);
    const double target = scores(tc.i, tc.j, tc.k);
    acc.loss += std::max(0.0, std::log(sum) + top - scale * target);
    for (std::size_t u = 0; u < b; ++u)
      for (std::size_t v = 0; v < b; ++v) {
        if (strategy == Flatten::mask && masked(ell, u, v)) continue;
        const Coord c = plane_coord(plane, ell, u, v);
        const double p = probs[u * b + v] / sum - ((u == ell && v == ell) ? 1.0 : 0.0);
        acc.d_scale += weight * p * scores(c.i, c.j, c.k);
        const double g = weight * scale * p * dterm_per_dscore;
        g_ti(c.i, c.j) += g;
        g_tp(c.i, c.k) += g;
        g_ip(c.j, c.k) += g;
      }
  }
  return acc;
}

/// Symmetric CLIP loss of unit batches a, b with gradients added into da, db.
/// Returns (loss, dL/dscale) scaled by `weight`.
inline std::pair<double, double> clip_forward_backward(const Matrix<double>& a,
                                                       const Matrix<double>& b,
                                                       double scale, double weight,
                                                       Matrix<double>& da,
                                                       Matrix<double>& db) {
  const std::size_t n = a.rows();
  const auto cos = pair_term(Metric::cosine, a, b);
  Matrix<double> dcos(n, n);
  double loss = 0.0;
  double d_scale = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> e(n);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t r = 0; r < n; ++r) {
      auto at = [&](std::size_t q) { return pass == 0 ? cos(r, q) : cos(q, r); };
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t q = 0; q < n; ++q) top = std::max(top, scale * at(q));
      double sum = 0.0;
      for (std::size_t q = 0; q < n; ++q) sum += (e[q] = std::exp(scale * at(q) - top));
      loss += 0.5 * inv_n * std::max(0.0, std::log(sum) + top - scale * at(r));
      for (std::size_t q = 0; q < n; ++q) {
        const double p = (e[q] / sum - (q == r ? 1.0 : 0.0)) * 0.5 * inv_n;
        d_scale += weight * p * at(q);
        (pass == 0 ? dcos(r, q) : dcos(q, r)) += weight * scale * p;
      }
    }
  }
  pair_term_backward(Metric::cosine, a, b, cos, dcos, da, db);
  return {weight * loss, d_scale};
}

}  // namespace detail

/// Loss value and exact gradients with respect to the raw feature rows and
/// the log logit scale. The logit scale is exp(log_scale) capped at 100; past
/// the cap its derivative is zero.
inline FeatureGradient feature_loss_grad(const LossSpec& spec, const Matrix<double>& text,
                                         const Matrix<double>& image,
                                         const Matrix<double>& point, double log_scale) {
  require(text.rows() == image.rows() && text.rows() == point.rows(),
          Errc::dimension_mismatch, "feature_loss_grad: batch sizes differ");
  require(text.cols() == image.cols() && text.cols() == point.cols(),
          Errc::dimension_mismatch, "feature_loss_grad: dimensions differ");
  require(std::isfinite(log_scale), Errc::non_finite, "log scale is not finite");
  const std::size_t b = text.rows();
  const std::size_t d = text.cols();
  const auto nt = detail::normalize_rows(text);
  const auto ni = detail::normalize_rows(image);
  const auto np = detail::normalize_rows(point);
  const double scale = logit_scale(log_scale);
  const double dscale_dlog = std::exp(log_scale) < kMaxLogitScale ? scale : 0.0;

  Matrix<double> gt(b, d), gi(b, d), gp(b, d);
  FeatureGradient out;
  double d_scale = 0.0;

  if (spec.kind == LossKind::tensor) {
    const auto& cfg = spec.tensor;
    cfg.coefficients.validate();
    require(b <= kDefaultMaxBatch, Errc::out_of_range, "batch exceeds tensor limit");
    const Metric metric = cfg.metric;
    const auto ti = detail::pair_term(metric, nt.unit, ni.unit);
    const auto tp = detail::pair_term(metric, nt.unit, np.unit);
    const auto ip = detail::pair_term(metric, ni.unit, np.unit);
    const double lmax = l_max(3);
    const double offset = metric == Metric::cosine ? 0.0 : 1.0;
    const double weight = metric == Metric::cosine ? 1.0 / 3.0 : -1.0 / lmax;
    Cube scores = assemble_cube(ti, tp, ip, offset, weight);
    if (metric == Metric::l2_mapped)
      for (double& s : scores.flat()) s = std::max(0.0, s);

    Matrix<double> g_ti(b, b), g_tp(b, b), g_ip(b, b);
    const auto w = cfg.coefficients.as_array();
    const double red = cfg.reduction == Reduction::mean ? 1.0 / static_cast<double>(b) : 1.0;
    out.breakdown.coefficients = cfg.coefficients;
    for (std::size_t n = 0; n < kPlanes.size(); ++n) {
      const auto acc = detail::plane_forward_backward(
          scores, kPlanes[n], cfg.strategy, scale, w[n] * red, weight, g_ti, g_tp, g_ip);
      out.breakdown.components[plane_name(kPlanes[n])] = red * acc.loss;
      out.breakdown.total += w[n] * red * acc.loss;
      d_scale += acc.d_scale;
    }
    detail::pair_term_backward(metric, nt.unit, ni.unit, ti, g_ti, gt, gi);
    detail::pair_term_backward(metric, nt.unit, np.unit, tp, g_tp, gt, gp);
    detail::pair_term_backward(metric, ni.unit, np.unit, ip, g_ip, gi, gp);
  } else {
    const auto& c = spec.pairwise;
    c.validate();
    out.breakdown.coefficients = c;
    struct Term {
      const char* name;
      double weight;
      const Matrix<double>* a;
      const Matrix<double>* b;
      Matrix<double>* da;
      Matrix<double>* db;
    };
    const Term terms[] = {{"T-I", c.a, &nt.unit, &ni.unit, &gt, &gi},
                          {"T-P", c.b, &nt.unit, &np.unit, &gt, &gp},
                          {"P-I", c.c, &np.unit, &ni.unit, &gp, &gi}};
    for (const auto& term : terms) {
      Matrix<double> da(b, d), db(b, d);
      const auto [l, ds] = detail::clip_forward_backward(*term.a, *term.b, scale, 1.0, da, db);
      out.breakdown.components[term.name] = l;
      out.breakdown.total += term.weight * l;
      d_scale += term.weight * ds;
      for (std::size_t n = 0; n < da.size(); ++n) {
        term.da->flat()[n] += term.weight * da.flat()[n];
        term.db->flat()[n] += term.weight * db.flat()[n];
      }
    }
  }
  require(std::isfinite(out.breakdown.total), Errc::non_finite, "loss is not finite");
  out.d_text = detail::normalize_backward(nt, gt);
  out.d_image = detail::normalize_backward(ni, gi);
  out.d_point = detail::normalize_backward(np, gp);
  out.d_log_scale = d_scale * dscale_dlog;
  return out;
}

/// Loss of the raw features only (no gradient).
inline double feature_loss(const LossSpec& spec, const Matrix<double>& text,
                           const Matrix<double>& image, const Matrix<double>& point,
                           double log_scale) {
  const auto t = FeatureBatch::unit(text, Modality::text);
  const auto i = FeatureBatch::unit(image, Modality::image);
  const auto p = FeatureBatch::unit(point, Modality::point);
  const double scale = logit_scale(log_scale);
  if (spec.kind == LossKind::pairwise) return pairwise_loss(t, i, p, spec.pairwise, scale).total;
  return tensor_loss(t, i, p, spec.tensor, scale).total;
}

// ---------------------------------------------------------------------------
// Brute-force oracle

/// Maximum batch accepted by brute_force_loss.
inline constexpr std::size_t kOracleMaxBatch = 16;

/// Straight enumeration of the tensor loss: every plane entry is scored from
/// its three vectors directly and every cross entropy is summed term by term.
inline double brute_force_loss(const FeatureBatch& t, const FeatureBatch& i,
                               const FeatureBatch& p, Metric metric, Flatten strategy,
                               const Coefficients& coefficients, double scale,
                               Reduction reduction = Reduction::sum) {
  const std::size_t b = t.batch();
  require(b >= 1 && b <= kOracleMaxBatch, Errc::out_of_range, "oracle batch must be 1..16");
  require(i.batch() == b && p.batch() == b, Errc::dimension_mismatch, "oracle: batch sizes differ");
  require(t.normalized && i.normalized && p.normalized, Errc::invalid_argument,
          "oracle: batches must be normalized");
  require(scale > 0.0, Errc::invalid_argument, "oracle: scale must be positive");
  const std::size_t d = t.dim();

  auto score = [&](std::size_t ti, std::size_t ii, std::size_t pi) {
    const auto x = t.row(ti);
    const auto y = i.row(ii);
    const auto z = p.row(pi);
    if (metric == Metric::cosine) {
      double xy = 0, xz = 0, yz = 0;
      for (std::size_t n = 0; n < d; ++n) {
        xy += x[n] * y[n];
        xz += x[n] * z[n];
        yz += y[n] * z[n];
      }
      return (xy + xz + yz) / 3.0;
    }
    double dxy = 0, dxz = 0, dyz = 0;
    for (std::size_t n = 0; n < d; ++n) {
      dxy += (x[n] - y[n]) * (x[n] - y[n]);
      dxz += (x[n] - z[n]) * (x[n] - z[n]);
      dyz += (y[n] - z[n]) * (y[n] - z[n]);
    }
    const double raw = std::sqrt(dxy) + std::sqrt(dxz) + std::sqrt(dyz);
    return std::max(0.0, 1.0 - raw / (3.0 * std::sqrt(3.0)));
  };

  const double weights[3] = {coefficients.a, coefficients.b, coefficients.c};
  double total = 0.0;
  for (int axis = 0; axis < 3; ++axis) {  // 0: text fixed, 1: image fixed, 2: point fixed
    double plane_total = 0.0;
    for (std::size_t fixed = 0; fixed < b; ++fixed) {
      std::vector<double> kept;
      double target = 0.0;
      for (std::size_t x = 0; x < b; ++x) {
        for (std::size_t y = 0; y < b; ++y) {
          const bool x_dup = x == fixed;
          const bool y_dup = y == fixed;
          if (strategy == Flatten::mask && x_dup != y_dup) continue;
          double s = 0.0;
          if (axis == 0) s = score(fixed, x, y);
          if (axis == 1) s = score(x, fixed, y);
          if (axis == 2) s = score(x, y, fixed);
          if (x_dup && y_dup) target = s;
          kept.push_back(s);
        }
      }
      double top = kept.front();
      for (double s : kept) top = std::max(top, s);
      double z = 0.0;
      for (double s : kept) z += std::exp(scale * (s - top));
      plane_total += std::log(z) + scale * (top - target);
    }
    if (reduction == Reduction::mean) plane_total /= static_cast<double>(b);
    total += weights[axis] * plane_total;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Finite differences

inline constexpr double kDefaultFdEpsilon = 1e-5;

/// A named block of parameters together with the analytic gradient claimed
/// for it. The loss closure handed to finite_diff_check must read `values`.
template <typename T>
struct ParamRef {
  std::string name;
  std::span<T> values;
  std::span<const T> analytic;
};

/// |a - n| / max(|a|, |n|, 1e-8).
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

struct CoordinateCheck {
  std::size_t block = 0;  // index into the ParamRef list
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;

  double rel_error() const { return relative_error(analytic, numeric); }
  double abs_error() const { return std::abs(analytic - numeric); }
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::map<std::string, double> per_parameter;
  double epsilon = kDefaultFdEpsilon;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  std::vector<CoordinateCheck> checks;

  /// Coordinates exceeding `rel_tol` whose absolute error is also above
  /// `abs_tol`. With abs_tol = 0 this is the plain relative criterion.
  std::size_t violations(double rel_tol, double abs_tol = 0.0) const {
    std::size_t n = 0;
    for (const auto& c : checks)
      if (c.rel_error() > rel_tol && c.abs_error() > abs_tol) ++n;
    return n;
  }
};

/// Central differences (f(x+e) - f(x-e)) / 2e for every coordinate of every
/// parameter block, compared against the analytic gradient.
template <typename T>
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const ParamRef<T>> params,
                                  double epsilon = kDefaultFdEpsilon) {
  require(epsilon > 0.0, Errc::invalid_argument, "epsilon must be positive");
  GradCheckReport report;
  report.epsilon = epsilon;
  for (const auto& param : params) {
    require(param.values.size() == param.analytic.size(), Errc::dimension_mismatch,
            "gradient shape mismatch for " + param.name);
    double worst = 0.0;
    for (std::size_t n = 0; n < param.values.size(); ++n) {
      const T saved = param.values[n];
      param.values[n] = static_cast<T>(saved + epsilon);
      const double step_up = static_cast<double>(param.values[n]) - saved;
      const double up = loss();
      param.values[n] = static_cast<T>(saved - epsilon);
      const double step_down = saved - static_cast<double>(param.values[n]);
      const double down = loss();
      param.values[n] = saved;
      require(std::isfinite(up) && std::isfinite(down), Errc::non_finite,
              "non-finite loss while perturbing " + param.name + "[" +
                  std::to_string(n) + "]");
      const double numeric = (up - down) / (step_up + step_down);
      const double analytic = static_cast<double>(param.analytic[n]);
      const double err = relative_error(analytic, numeric);
      report.checks.push_back({static_cast<std::size_t>(&param - params.data()), n, analytic, numeric});
      report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic - numeric));
      ++report.coordinates;
      if (err > worst) worst = err;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = param.name;
        report.worst_index = n;
      }
    }
    report.per_parameter[param.name] = worst;
  }
  return report;
}

template <typename T>
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  const std::vector<ParamRef<T>>& params,
                                  double epsilon = kDefaultFdEpsilon) {
  return finite_diff_check<T>(loss, std::span<const ParamRef<T>>(params), epsilon);
}

}  // namespace ctp
