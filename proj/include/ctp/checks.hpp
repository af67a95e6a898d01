#pragma once

// Randomized gradient and oracle sweeps used by the CLI's gradcheck and
// oracle-check commands and by the test suites.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ctp/diff.hpp"
#include "ctp/loss.hpp"
#include "ctp/model.hpp"
#include "ctp/similarity.hpp"

namespace ctp {

/// Loss tags covered by the sweeps.
inline const std::vector<std::string>& all_loss_tags() {
  static const std::vector<std::string> tags{"ctp_mask", "ctp_nm", "ctp_cosine", "ctp_cosine_nm",
                                             "pairwise"};
  return tags;
}

inline Matrix<double> random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                    double sigma = 1.0) {
  std::normal_distribution<double> g(0.0, sigma);
  Matrix<double> m(rows, cols);
  for (double& x : m.flat()) x = g(rng);
  return m;
}

inline FeatureBatch random_unit_batch(std::size_t b, std::size_t d, Modality mod,
                                      std::mt19937_64& rng) {
  return FeatureBatch::unit(random_matrix(b, d, rng), mod);
}

/// Small random encoder inputs: b records, point clouds of 2..n_points
/// points (so some rows are padding).
inline BatchInputs random_inputs(const EncoderConfig& cfg, std::size_t b, std::mt19937_64& rng) {
  BatchInputs in{random_matrix(b, cfg.text_in, rng), random_matrix(b, cfg.image_in, rng), {}};
  std::uniform_int_distribution<std::size_t> count(std::min<std::size_t>(2, cfg.n_points),
                                                   cfg.n_points);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t r = 0; r < b; ++r) {
    std::vector<Point3> cloud(count(rng));
    for (auto& p : cloud) p = {g(rng), g(rng), g(rng)};
    in.points.push_back(pad_or_sample(cloud, cfg.n_points));
  }
  return in;
}

/// Encoder shapes used by the gradient sweeps.
inline EncoderConfig gradcheck_encoder_config(std::size_t embed_dim) {
  EncoderConfig cfg;
  cfg.text_in = 6;
  cfg.image_in = 5;
  cfg.embed_dim = embed_dim;
  cfg.text_hidden = {7};
  cfg.image_hidden = {6};
  cfg.point_widths = {6, 9};
  cfg.head_hidden = {7};
  cfg.n_points = 5;
  return cfg;
}

/// Absolute error a central difference can carry from rounding alone: a few
/// ulps of the loss value divided by the step.
inline double fd_rounding_floor(double loss, double epsilon, double ulps = 4.0) {
  return ulps * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss)) / epsilon;
}

struct GradCheckCase {
  std::string variant;
  std::uint64_t seed = 0;
  double loss = 0.0;
  GradCheckReport report;
  bool passed = false;

  /// Coordinates over `tolerance` once rounding noise is allowed for.
  std::size_t violations_beyond_rounding(double tolerance) const {
    return report.violations(tolerance, fd_rounding_floor(loss, report.epsilon));
  }
};

/// End-to-end check: analytic gradients of the loss with respect to every
/// encoder parameter and the log scale against central differences.
/// A coordinate fails when its relative error exceeds `tolerance` and its
/// absolute error exceeds `abs_floor` (0: relative criterion only).
/// `flip_sign` negates the largest analytic component (harness self-test).
template <typename T>
GradCheckCase model_gradcheck(const std::string& variant, std::uint64_t seed, std::size_t b,
                              std::size_t d, double epsilon, double tolerance,
                              double abs_floor = 0.0, bool flip_sign = false) {
  const LossSpec spec = loss_from_tag(variant);
  const auto cfg = gradcheck_encoder_config(d);
  std::mt19937_64 rng(seed * 7919 + 17);
  auto params = init_encoders<T>(cfg, seed);
  // Nonzero biases so no unit sits exactly on a rectifier kink.
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for_each_param(params, [&](const std::string& name, Modality, bool is_scale, std::span<T> s) {
    if (!is_scale && name.ends_with(".bias"))
      for (T& x : s) x = static_cast<T>(u(rng));
  });
  params.log_scale = static_cast<T>(std::log(2.0) + u(rng));
  const auto inputs = random_inputs(cfg, b, rng);

  auto mg = model_loss_grad(spec, params, inputs);
  if (flip_sign) {
    T* worst = nullptr;
    for_each_param(mg.grads, [&](const std::string&, Modality, bool, std::span<T> s) {
      for (T& x : s)
        if (!worst || std::abs(x) > std::abs(*worst)) worst = &x;
    });
    *worst = -*worst;
  }
  // Differences are always taken in double at the same parameter values, so
  // a single-precision run measures the error of its analytic gradient.
  auto numeric_params = params.template cast<double>();
  std::vector<double> analytic;
  for_each_param(mg.grads, [&](const std::string&, Modality, bool, std::span<T> s) {
    analytic.insert(analytic.end(), s.begin(), s.end());
  });
  std::vector<ParamRef<double>> refs;
  std::size_t offset = 0;
  for_each_param(numeric_params, [&](const std::string& name, Modality, bool, std::span<double> s) {
    refs.push_back({name, s, std::span<const double>(analytic).subspan(offset, s.size())});
    offset += s.size();
  });
  GradCheckCase out;
  out.variant = variant;
  out.seed = seed;
  out.loss = mg.loss();
  out.report = finite_diff_check<double>(
      [&] { return model_loss(spec, numeric_params, inputs); }, refs, epsilon);
  out.passed = out.report.violations(tolerance, abs_floor) == 0;
  return out;
}

/// Raw-feature check of feature_loss_grad (no encoders).
inline GradCheckCase feature_gradcheck(const std::string& variant, std::uint64_t seed,
                                       std::size_t b, std::size_t d, double epsilon,
                                       double tolerance, double abs_floor = 0.0) {
  const LossSpec spec = loss_from_tag(variant);
  std::mt19937_64 rng(seed * 104729 + 3);
  auto t = random_matrix(b, d, rng), i = random_matrix(b, d, rng), p = random_matrix(b, d, rng);
  double log_scale = std::log(3.0);
  const auto g = feature_loss_grad(spec, t, i, p, log_scale);
  std::vector<ParamRef<double>> refs{{"text", t.flat(), g.d_text.flat()},
                                     {"image", i.flat(), g.d_image.flat()},
                                     {"point", p.flat(), g.d_point.flat()},
                                     {"log_scale", std::span(&log_scale, 1), std::span(&g.d_log_scale, 1)}};
  GradCheckCase out;
  out.variant = variant;
  out.seed = seed;
  out.loss = g.loss();
  out.report = finite_diff_check<double>(
      [&] { return feature_loss(spec, t, i, p, log_scale); }, refs, epsilon);
  out.passed = out.report.violations(tolerance, abs_floor) == 0;
  return out;
}

struct OracleCase {
  Metric metric = Metric::l2_mapped;
  Flatten strategy = Flatten::mask;
  std::size_t b = 0;
  std::uint64_t seed = 0;
  double fast = 0.0;
  double oracle = 0.0;
  bool passed = false;

  double abs_error() const { return std::abs(fast - oracle); }
};

/// tensor_loss against brute_force_loss on random unit batches, for both
/// metrics and both flattening strategies.
inline std::vector<OracleCase> oracle_sweep(std::size_t b, std::size_t d, std::uint64_t seed,
                                            double tolerance) {
  std::mt19937_64 rng(seed * 15485863 + b);
  const auto t = random_unit_batch(b, d, Modality::text, rng);
  const auto i = random_unit_batch(b, d, Modality::image, rng);
  const auto p = random_unit_batch(b, d, Modality::point, rng);
  std::uniform_real_distribution<double> scale_dist(1.0, 20.0);
  const double scale = scale_dist(rng);
  std::vector<OracleCase> out;
  for (Metric metric : {Metric::cosine, Metric::l2_mapped}) {
    for (Flatten strategy : {Flatten::nm, Flatten::mask}) {
      TensorLossConfig cfg{metric, strategy, kEqualThirds, Reduction::sum};
      OracleCase c{metric, strategy, b, seed};
      c.fast = tensor_loss(t, i, p, cfg, scale).total;
      c.oracle = brute_force_loss(t, i, p, metric, strategy, kEqualThirds, scale);
      c.passed = c.abs_error() <= tolerance;
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace ctp
