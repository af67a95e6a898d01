#pragma once

// Small builders shared by the test suites.

#include <random>
#include <vector>

#include "ctp/ctp.hpp"
#include "oracles.hpp"

namespace fixture {

inline ctp::FeatureBatch batch(const std::vector<oracle::Vec>& rows, ctp::Modality mod) {
  return ctp::FeatureBatch::assume_unit(ctp::Matrix<double>::from_rows(rows), mod);
}

struct Triplet {
  std::vector<oracle::Vec> t, i, p;
  ctp::FeatureBatch ft, fi, fp;
};

inline Triplet random_triplet(std::size_t b, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Triplet x;
  x.t = oracle::random_units(b, d, rng);
  x.i = oracle::random_units(b, d, rng);
  x.p = oracle::random_units(b, d, rng);
  x.ft = batch(x.t, ctp::Modality::text);
  x.fi = batch(x.i, ctp::Modality::image);
  x.fp = batch(x.p, ctp::Modality::point);
  return x;
}

inline std::vector<oracle::Vec> permuted(const std::vector<oracle::Vec>& rows,
                                         const std::vector<std::size_t>& perm) {
  std::vector<oracle::Vec> out;
  for (std::size_t n : perm) out.push_back(rows[n]);
  return out;
}

/// Small encoder shapes that keep training tests fast.
inline ctp::EncoderConfig small_encoder(std::size_t text_in, std::size_t image_in) {
  ctp::EncoderConfig e;
  e.text_in = text_in;
  e.image_in = image_in;
  e.embed_dim = 8;
  e.text_hidden = {16};
  e.image_hidden = {16};
  e.point_widths = {8, 16};
  e.head_hidden = {16};
  e.n_points = 12;
  return e;
}

inline ctp::SynthConfig small_synth(std::uint64_t seed = 3) {
  ctp::SynthConfig c;
  c.num_classes = 3;
  c.latent_dim = 6;
  c.text_dim = 10;
  c.image_dim = 9;
  c.points_min = 6;
  c.points_max = 20;
  c.n_train = 120;
  c.n_test = 30;
  c.seed = seed;
  return c;
}

}  // namespace fixture
