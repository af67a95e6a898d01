#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace ctp;

namespace {

Matrix<double> identity_rows(std::size_t b, std::size_t d) {
  Matrix<double> m(b, d);
  for (std::size_t r = 0; r < b; ++r) m(r, r) = 1.0;
  return m;
}

bool all_finite(const Matrix<double>& m) {
  for (double x : m.flat())
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

TEST(FiniteDiff, QuadraticCalibration) {
  double x = 3.0;
  const double analytic = 6.0;
  std::vector<ParamRef<double>> refs{{"x", std::span(&x, 1), std::span(&analytic, 1)}};
  const auto r = finite_diff_check<double>([&] { return x * x; }, refs);
  ASSERT_EQ(r.checks.size(), 1u);
  EXPECT_NEAR(r.checks[0].numeric, 6.0, 1e-9);
  EXPECT_EQ(x, 3.0);  // restored
  EXPECT_LE(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.epsilon, kDefaultFdEpsilon);
}

TEST(FiniteDiff, ReportsNonFiniteLoss) {
  double x = 0.0;
  const double analytic = 0.0;
  std::vector<ParamRef<double>> refs{{"x", std::span(&x, 1), std::span(&analytic, 1)}};
  EXPECT_THROW(finite_diff_check<double>([&] { return std::log(x > 0 ? x : -1.0); }, refs), Error);
  EXPECT_THROW(finite_diff_check<double>([&] { return x; }, refs, 0.0), Error);
}

TEST(FiniteDiff, RelativeErrorDefinition) {
  EXPECT_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(relative_error(1e-10, 0.0), 1e-2, 1e-18);  // floor of 1e-8 in the denominator
}

TEST(FeatureGradient, BatchOfOneIsZero) {
  std::mt19937_64 rng(1);
  const auto t = random_matrix(1, 5, rng), i = random_matrix(1, 5, rng), p = random_matrix(1, 5, rng);
  for (const auto& tag : all_loss_tags()) {
    const auto g = feature_loss_grad(loss_from_tag(tag), t, i, p, 1.0);
    EXPECT_EQ(g.loss(), 0.0);
    for (const auto* m : {&g.d_text, &g.d_image, &g.d_point})
      for (double x : m->flat()) EXPECT_EQ(x, 0.0) << tag;
    EXPECT_EQ(g.d_log_scale, 0.0);
  }
}

TEST(FeatureGradient, DescentDirection) {
  // matched triplets aligned on e_r, negatives orthogonal
  const std::size_t b = 4, d = 6;
  for (const auto& tag : all_loss_tags()) {
    const auto spec = loss_from_tag(tag);
    auto t = identity_rows(b, d), i = identity_rows(b, d), p = identity_rows(b, d);
    // nudge off the exact coincidence so the L2 derivative is defined
    t(0, 5) = 1e-3;
    i(1, 4) = -2e-3;
    const auto g = feature_loss_grad(spec, t, i, p, 1.0);
    const double before = g.loss();
    for (std::size_t n = 0; n < t.flat().size(); ++n) {
      t.flat()[n] -= 1e-3 * g.d_text.flat()[n];
      i.flat()[n] -= 1e-3 * g.d_image.flat()[n];
      p.flat()[n] -= 1e-3 * g.d_point.flat()[n];
    }
    EXPECT_LE(feature_loss(spec, t, i, p, 1.0), before) << tag;
  }
}

TEST(FeatureGradient, CoincidentVectorsStayFinite) {
  const auto e = identity_rows(3, 4);
  for (const auto& tag : all_loss_tags()) {
    const auto g = feature_loss_grad(loss_from_tag(tag), e, e, e, 2.0);
    EXPECT_TRUE(std::isfinite(g.loss()));
    EXPECT_TRUE(all_finite(g.d_text) && all_finite(g.d_image) && all_finite(g.d_point)) << tag;
    EXPECT_TRUE(std::isfinite(g.d_log_scale));
  }
}

TEST(FeatureGradient, ScaleGradientVanishesPastCap) {
  std::mt19937_64 rng(4);
  const auto t = random_matrix(3, 4, rng), i = random_matrix(3, 4, rng), p = random_matrix(3, 4, rng);
  for (const auto& tag : all_loss_tags()) {
    const auto spec = loss_from_tag(tag);
    EXPECT_EQ(feature_loss_grad(spec, t, i, p, kMaxLogScale + 0.5).d_log_scale, 0.0);
    EXPECT_NE(feature_loss_grad(spec, t, i, p, 1.0).d_log_scale, 0.0);
    EXPECT_EQ(feature_loss(spec, t, i, p, kMaxLogScale + 0.5), feature_loss(spec, t, i, p, 7.0));
  }
}

TEST(FeatureGradient, LossAgreesWithLossModule) {
  std::mt19937_64 rng(5);
  const auto t = random_matrix(5, 6, rng), i = random_matrix(5, 6, rng), p = random_matrix(5, 6, rng);
  const auto ut = FeatureBatch::unit(t, Modality::text), ui = FeatureBatch::unit(i, Modality::image),
             up = FeatureBatch::unit(p, Modality::point);
  const double ls = 1.3;
  for (const auto& tag : all_loss_tags()) {
    const auto spec = loss_from_tag(tag);
    const auto g = feature_loss_grad(spec, t, i, p, ls);
    const auto ref = spec.kind == LossKind::pairwise
                         ? pairwise_loss(ut, ui, up, spec.pairwise, logit_scale(ls))
                         : tensor_loss(ut, ui, up, spec.tensor, logit_scale(ls));
    EXPECT_NEAR(g.loss(), ref.total, 1e-12) << tag;
    EXPECT_EQ(g.loss(), feature_loss(spec, t, i, p, ls));
    for (const auto& [name, v] : ref.components) EXPECT_NEAR(g.breakdown.components.at(name), v, 1e-12);
  }
}

TEST(FeatureGradient, ShapeAndTagErrors) {
  std::mt19937_64 rng(6);
  const auto t = random_matrix(3, 4, rng), i = random_matrix(2, 4, rng), p = random_matrix(3, 5, rng);
  EXPECT_THROW(feature_loss_grad(loss_from_tag("ctp_mask"), t, i, t, 1.0), Error);
  EXPECT_THROW(feature_loss_grad(loss_from_tag("ctp_mask"), t, t, p, 1.0), Error);
  EXPECT_THROW(loss_from_tag("ctp_squared"), Error);
  for (const auto& tag : all_loss_tags()) EXPECT_EQ(loss_from_tag(tag).tag(), tag);
}

// Central differences in double carry roughly eps_mach * |L| / epsilon of
// rounding noise, so tiny gradient components are checked against that floor.
TEST(GradCheck, FeatureLevelSweep) {
  std::size_t cases = 0;
  for (const auto& tag : all_loss_tags())
    for (std::size_t b : {2u, 3u, 4u, 6u})
      for (std::size_t d : {4u, 8u})
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
          const auto c = feature_gradcheck(tag, seed, b, d, kDefaultFdEpsilon, 1e-6);
          EXPECT_EQ(c.violations_beyond_rounding(1e-6), 0u)
              << tag << " b=" << b << " d=" << d << " seed=" << seed
              << " worst=" << c.report.max_rel_error << " at " << c.report.worst_parameter;
          EXPECT_LE(c.report.max_abs_error, 1e-7);
          ++cases;
        }
  EXPECT_EQ(cases, 800u);
}

TEST(GradCheck, ModelLevelSweepDouble) {
  for (const auto& tag : all_loss_tags())
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto c = model_gradcheck<double>(tag, seed, 4, 8, kDefaultFdEpsilon, 1e-6);
      EXPECT_EQ(c.violations_beyond_rounding(1e-6), 0u)
          << tag << " seed=" << seed << " worst=" << c.report.max_rel_error << " at "
          << c.report.worst_parameter << "[" << c.report.worst_index << "]";
      EXPECT_GT(c.report.coordinates, 300u);
    }
}

TEST(GradCheck, ModelLevelSweepSingle) {
  for (const auto& tag : all_loss_tags())
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto c = model_gradcheck<float>(tag, seed, 4, 8, kDefaultFdEpsilon, 1e-3, 1e-6);
      EXPECT_TRUE(c.passed) << tag << " seed=" << seed << " worst=" << c.report.max_rel_error;
    }
}

TEST(GradCheck, DetectsSignFlip) {
  for (const auto& tag : all_loss_tags()) {
    const auto c = model_gradcheck<double>(tag, 3, 4, 8, kDefaultFdEpsilon, 1e-6,
                                           fd_rounding_floor(10.0, kDefaultFdEpsilon), true);
    EXPECT_FALSE(c.passed) << tag;
    EXPECT_NEAR(c.report.max_rel_error, 2.0, 1e-4);  // |a - (-a)| / |a|
  }
}

TEST(GradCheck, FrozenEncodersGetZeroGradient) {
  const auto cfg = gradcheck_encoder_config(8);
  std::mt19937_64 rng(2);
  auto params = init_encoders<double>(cfg, 2);
  for_each_param(params, [](const std::string& name, Modality, bool, auto s) {
    if (name.ends_with(".bias"))
      for (double& x : s) x = 0.05;
  });
  const auto in = random_inputs(cfg, 4, rng);
  const auto g = model_loss_grad(loss_from_tag("pairwise"), params, in, FreezeSet{true, true, false});
  for_each_param(g.grads, [&](const std::string& name, Modality m, bool is_scale, auto s) {
    bool any = false;
    for (double x : s) any = any || x != 0.0;
    if (is_scale || m == Modality::point)
      EXPECT_TRUE(any) << name;
    else
      EXPECT_FALSE(any) << name;
  });
  EXPECT_EQ(g.loss(), model_loss(loss_from_tag("pairwise"), params, in));
}

TEST(Oracle, SweepAgreesWithFastPath) {
  for (std::size_t b : {2u, 3u, 4u, 6u})
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      for (const auto& c : oracle_sweep(b, 8, seed, 1e-10))
        EXPECT_TRUE(c.passed) << "b=" << b << " seed=" << seed << " err=" << c.abs_error();
}

TEST(Oracle, MeanReductionAndLimits) {
  const auto x = fixture::random_triplet(5, 4, 8);
  for (Metric m : {Metric::cosine, Metric::l2_mapped}) {
    const TensorLossConfig cfg{m, Flatten::mask, {0.5, 0.2, 0.3}, Reduction::mean};
    EXPECT_NEAR(tensor_loss(x.ft, x.fi, x.fp, cfg, 9.0).total,
                brute_force_loss(x.ft, x.fi, x.fp, m, Flatten::mask, {0.5, 0.2, 0.3}, 9.0, Reduction::mean),
                1e-10);
  }
  const auto one = fixture::random_triplet(1, 4, 8);
  EXPECT_EQ(brute_force_loss(one.ft, one.fi, one.fp, Metric::l2_mapped, Flatten::mask, kEqualThirds, 5.0), 0.0);
  const auto big = fixture::random_triplet(17, 4, 8);
  EXPECT_THROW(brute_force_loss(big.ft, big.fi, big.fp, Metric::cosine, Flatten::nm, kEqualThirds, 1.0), Error);
}
