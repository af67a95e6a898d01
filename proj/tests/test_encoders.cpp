#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace ctp;

namespace {

PointCloudSample cloud_sample(const std::vector<Point3>& pts, std::size_t pad = 0) {
  PointCloudSample s{Matrix<double>(pts.size() + pad, 3), std::vector<bool>(pts.size() + pad, false)};
  for (std::size_t r = 0; r < pts.size(); ++r) {
    for (int a = 0; a < 3; ++a) s.points(r, a) = pts[r][a];
    s.valid[r] = true;
  }
  return s;
}

std::vector<Point3> random_cloud(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Point3> out(n);
  for (auto& p : out) p = {g(rng), g(rng), g(rng)};
  return out;
}

template <typename T>
SetEncoder<T> random_set_encoder(std::uint64_t seed) {
  SetEncoder<T> e{init_mlp<T>({3, 8, 16}, seed), init_mlp<T>({16, 12, 6}, seed + 1)};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto* m : {&e.point_mlp, &e.head})
    for (auto& l : m->layers)
      for (T& b : l.bias) b = static_cast<T>(u(rng));
  return e;
}

}  // namespace

TEST(Mlp, IdentityWeightsPassInputThrough) {
  Mlp<double> m{{Layer<double>{Matrix<double>{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {0, 0, 0}}}};
  const std::vector<double> x{0.5, -2.0, 3.0};
  EXPECT_EQ(mlp_forward(m, std::span<const double>(x)), x);
}

TEST(Mlp, ZeroWeightsGiveBias) {
  Mlp<double> m{{Layer<double>{Matrix<double>(2, 3), {0.25, -4.0}}}};
  const std::vector<double> x{7, 8, 9};
  EXPECT_EQ(mlp_forward(m, std::span<const double>(x)), (std::vector<double>{0.25, -4.0}));
  EXPECT_THROW(mlp_forward(m, std::span<const double>(std::vector<double>{1.0})), Error);
}

TEST(Mlp, InitShapesAndDeterminism) {
  const auto a = init_mlp<double>({8, 16, 32}, 7);
  ASSERT_EQ(a.layers.size(), 2u);
  EXPECT_EQ(a.layers[0].weight.rows(), 16u);
  EXPECT_EQ(a.layers[0].weight.cols(), 8u);
  EXPECT_EQ(a.layers[0].bias.size(), 16u);
  EXPECT_EQ(a.layers[1].weight.rows(), 32u);
  EXPECT_EQ(a.layers[1].weight.cols(), 16u);
  EXPECT_EQ(a.layers[1].bias.size(), 32u);
  EXPECT_EQ(a, init_mlp<double>({8, 16, 32}, 7));
  EXPECT_NE(a, init_mlp<double>({8, 16, 32}, 8));
  EXPECT_THROW(init_mlp<double>({8}, 1), Error);
  EXPECT_THROW(init_mlp<double>({8, 0, 2}, 1), Error);
  const EncoderConfig cfg = fixture::small_encoder(10, 9);
  EXPECT_EQ(init_encoders<float>(cfg, 3), init_encoders<float>(cfg, 3));
  EXPECT_NE(init_encoders<float>(cfg, 3), init_encoders<float>(cfg, 4));
}

TEST(Mlp, HiddenRectifier) {
  Mlp<double> m{{Layer<double>{Matrix<double>{{1}, {-1}}, {0, 0}}, Layer<double>{Matrix<double>{{1, 1}}, {0}}}};
  EXPECT_EQ(mlp_forward(m, std::span<const double>(std::vector<double>{3.0}))[0], 3.0);
  EXPECT_EQ(mlp_forward(m, std::span<const double>(std::vector<double>{-2.0}))[0], 2.0);
}

TEST(SetEncoder, SinglePointIsHeadOfPointMlp) {
  const auto e = random_set_encoder<double>(1);
  const Point3 p{0.3, -1.2, 0.8};
  const auto h = mlp_forward(e.point_mlp, std::span<const double>(p.data(), 3));
  const auto expected = mlp_forward(e.head, std::span<const double>(h));
  EXPECT_EQ(set_encode(e, cloud_sample({p})), expected);
}

TEST(SetEncoder, PermutationInvarianceSingle) {
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto e = random_set_encoder<float>(seed);
    auto pts = random_cloud(9, rng);
    const auto base = set_encode(e, cloud_sample(pts, 3));
    std::shuffle(pts.begin(), pts.end(), rng);
    // padding rows moved to the front, with the mask permuted alongside
    auto s = cloud_sample(pts, 3);
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::rotate(perm.begin(), perm.begin() + 9, perm.end());
    PointCloudSample moved{Matrix<double>(12, 3), std::vector<bool>(12)};
    for (std::size_t r = 0; r < 12; ++r) {
      for (int a = 0; a < 3; ++a) moved.points(r, a) = s.points(perm[r], a);
      moved.valid[r] = s.valid[perm[r]];
    }
    const auto out = set_encode(e, moved);
    for (std::size_t c = 0; c < out.size(); ++c) EXPECT_NEAR(out[c], base[c], 1e-6);
  }
}

TEST(SetEncoder, PaddingIsExactlyNeutral) {
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto e = random_set_encoder<double>(seed);
    const auto pts = random_cloud(5, rng);
    const auto a = cloud_sample(pts), b = cloud_sample(pts, 4);
    EXPECT_EQ(set_encode(e, a), set_encode(e, b));
    SetTrace<double> ta, tb;
    set_encode(e, a, &ta);
    set_encode(e, b, &tb);
    std::vector<double> d_out(e.head.out_dim());
    for (double& x : d_out) x = std::normal_distribution<double>(0.0, 1.0)(rng);
    auto ga = e.zeros_like(), gb = e.zeros_like();
    set_backward(e, ta, std::span<const double>(d_out), ga);
    set_backward(e, tb, std::span<const double>(d_out), gb);
    EXPECT_EQ(ga, gb);
  }
}

TEST(SetEncoder, EmptyCloudIsRejected) {
  const auto e = random_set_encoder<double>(0);
  PointCloudSample none{Matrix<double>(2, 3), {false, false}};
  EXPECT_THROW(set_encode(e, none), Error);
}

TEST(EncodeBatch, UnitRowsAndDuplicates) {
  const auto data = generate_synthetic(fixture::small_synth());
  const auto cfg = fixture::small_encoder(10, 9);
  const auto params = init_encoders<double>(cfg, 1);
  const std::vector<TripletRecord> one{data.train[0]};
  const auto b1 = encode_batch(params, std::span<const TripletRecord>(one), cfg);
  for (const auto* f : {&b1.text, &b1.image, &b1.point}) {
    EXPECT_EQ(f->batch(), 1u);
    EXPECT_EQ(f->dim(), 8u);
    EXPECT_NEAR(norm2(f->row(0)), 1.0, 1e-12);
  }
  const std::vector<TripletRecord> dup{data.train[3], data.train[5], data.train[3]};
  const auto b3 = encode_batch(params, std::span<const TripletRecord>(dup), cfg);
  for (const auto* f : {&b3.text, &b3.image, &b3.point}) {
    EXPECT_TRUE(std::equal(f->row(0).begin(), f->row(0).end(), f->row(2).begin()));
  }
  auto bad = data.train[0];
  bad.text_vec.pop_back();
  const std::vector<TripletRecord> wrong{bad};
  EXPECT_THROW(encode_batch(params, std::span<const TripletRecord>(wrong), cfg), Error);
}

TEST(EncodeBatch, IndependentOfThreadCount) {
  const auto data = generate_synthetic(fixture::small_synth());
  const auto cfg = fixture::small_encoder(10, 9);
  const auto params = init_encoders<double>(cfg, 1);
  const std::span<const TripletRecord> recs(data.train.data(), 16);
  set_num_threads(1);
  const auto a = encode_batch(params, recs, cfg);
  set_num_threads(3);
  const auto b = encode_batch(params, recs, cfg);
  set_num_threads(1);
  EXPECT_EQ(a.text.values, b.text.values);
  EXPECT_EQ(a.point.values, b.point.values);
}

TEST(ModelGradient, FrozenBlocksGetNoGradient) {
  const auto data = generate_synthetic(fixture::small_synth());
  const auto cfg = fixture::small_encoder(10, 9);
  const auto params = init_encoders<double>(cfg, 2);
  const auto in = prepare_batch(std::span<const TripletRecord>(data.train.data(), 6), cfg);
  const auto g = model_loss_grad(loss_from_tag("ctp_mask"), params, in, FreezeSet{false, true, true});
  for_each_param(g.grads, [&](const std::string& name, Modality m, bool is_scale, auto s) {
    if (is_scale || m == Modality::text) return;
    for (double x : s) ASSERT_EQ(x, 0.0) << name;
  });
}
