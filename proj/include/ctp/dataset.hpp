#pragma once

// Triplet records, the synthetic triplet generator, line-delimited manifest
// I/O and seeded mini-batching.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctp/error.hpp"
#include "ctp/matrix.hpp"
#include "ctp/point_cloud.hpp"

namespace ctp {

/// One aligned (caption, image, point cloud) sample. The text and image
/// modalities are carried as raw input vectors; the caption string rides
/// along for provenance.
struct TripletRecord {
  std::string id;
  std::string class_label;
  std::string caption;
  std::vector<double> text_vec;
  std::vector<double> image_vec;
  std::vector<Point3> points;

  friend bool operator==(const TripletRecord&, const TripletRecord&) = default;
};

/// Zero-noise text input per class, in class order.
struct PrototypeTable {
  std::vector<std::string> classes;
  std::vector<std::vector<double>> text_vecs;

  std::size_t index_of(const std::string& cls) const {
    const auto it = std::find(classes.begin(), classes.end(), cls);
    require(it != classes.end(), Errc::invalid_argument, "class '" + cls + "' not in prototype table");
    return static_cast<std::size_t>(it - classes.begin());
  }
  friend bool operator==(const PrototypeTable&, const PrototypeTable&) = default;
};

struct SynthConfig {
  std::size_t num_classes = 5;
  std::size_t latent_dim = 16;
  std::size_t text_dim = 32;
  std::size_t image_dim = 32;
  double sigma_text = 0.1;
  double sigma_image = 0.1;
  double sigma_point = 0.1;
  std::size_t parts_per_class = 4;  // 3D cluster centers per class shape
  std::size_t points_min = 16;
  std::size_t points_max = 48;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::uint64_t seed = 1;

  void validate() const {
    require(num_classes >= 2, Errc::invalid_argument, "need at least 2 classes");
    require(latent_dim >= 1 && text_dim >= 1 && image_dim >= 1, Errc::invalid_argument,
            "dimensions must be >= 1");
    require(sigma_text >= 0 && sigma_image >= 0 && sigma_point >= 0, Errc::invalid_argument,
            "noise sigmas must be >= 0");
    require(parts_per_class >= 1, Errc::invalid_argument, "parts_per_class must be >= 1");
    require(points_min >= 1 && points_min <= points_max, Errc::invalid_argument,
            "need 1 <= points_min <= points_max");
    require(n_train >= 1 && n_test >= 1, Errc::invalid_argument, "record counts must be >= 1");
  }
};

struct SyntheticData {
  std::vector<TripletRecord> train;
  std::vector<TripletRecord> test;
  PrototypeTable prototypes;
};

inline std::string class_name(std::size_t c) { return "class_" + std::to_string(c); }

/// Draws K unit latent prototypes and fixed linear maps from the latent
/// space into each modality. Records are map(prototype) + Gaussian noise;
/// point clouds scatter jittered points around class-specific 3D part
/// centers. Classes are assigned round-robin, so counts are balanced.
inline SyntheticData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t K = cfg.num_classes, L = cfg.latent_dim;

  auto random_map = [&](std::size_t rows) {
    Matrix<double> m(rows, L);
    const double s = 1.0 / std::sqrt(static_cast<double>(L));
    for (double& x : m.flat()) x = gauss(rng) * s;
    return m;
  };
  auto apply = [&](const Matrix<double>& m, const std::vector<double>& z) {
    std::vector<double> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), std::span<const double>(z));
    return out;
  };

  std::vector<std::vector<double>> protos(K, std::vector<double>(L));
  for (auto& p : protos) {
    double n = 0.0;
    while (n == 0.0) {
      for (double& x : p) x = gauss(rng);
      n = std::sqrt(dot(std::span<const double>(p), std::span<const double>(p)));
    }
    for (double& x : p) x /= n;
  }
  const auto text_map = random_map(cfg.text_dim);
  const auto image_map = random_map(cfg.image_dim);
  std::vector<Matrix<double>> part_maps;
  for (std::size_t m = 0; m < cfg.parts_per_class; ++m) part_maps.push_back(random_map(3));

  SyntheticData data;
  std::vector<std::vector<double>> text_clean(K), image_clean(K);
  std::vector<std::vector<Point3>> centers(K);
  for (std::size_t c = 0; c < K; ++c) {
    text_clean[c] = apply(text_map, protos[c]);
    image_clean[c] = apply(image_map, protos[c]);
    for (const auto& pm : part_maps) {
      const auto v = apply(pm, protos[c]);
      centers[c].push_back({v[0], v[1], v[2]});
    }
    data.prototypes.classes.push_back(class_name(c));
    data.prototypes.text_vecs.push_back(text_clean[c]);
  }

  std::uniform_int_distribution<std::size_t> count_dist(cfg.points_min, cfg.points_max);
  std::uniform_int_distribution<std::size_t> part_dist(0, cfg.parts_per_class - 1);
  auto make = [&](const std::string& split, std::size_t n) {
    std::vector<TripletRecord> out;
    out.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t c = r % K;
      TripletRecord rec;
      std::ostringstream id;
      id << split << '-' << r;
      rec.id = id.str();
      rec.class_label = class_name(c);
      rec.caption = "This is a " + rec.class_label;
      rec.text_vec = text_clean[c];
      for (double& x : rec.text_vec) x += cfg.sigma_text * gauss(rng);
      rec.image_vec = image_clean[c];
      for (double& x : rec.image_vec) x += cfg.sigma_image * gauss(rng);
      const std::size_t m = count_dist(rng);
      for (std::size_t q = 0; q < m; ++q) {
        Point3 p = centers[c][part_dist(rng)];
        for (double& x : p) x += cfg.sigma_point * gauss(rng);
        rec.points.push_back(p);
      }
      out.push_back(std::move(rec));
    }
    return out;
  };
  data.train = make("train", cfg.n_train);
  data.test = make("test", cfg.n_test);
  return data;
}

/// Drops records with fewer than `min_points` points (0 keeps everything).
inline std::vector<TripletRecord> filter_min_points(std::vector<TripletRecord> records,
                                                    std::size_t min_points) {
  std::erase_if(records, [&](const TripletRecord& r) { return r.points.size() < min_points; });
  return records;
}

/// Fraction of records whose raw text vector is closest to its own class
/// prototype. Generator sanity check.
inline double nearest_prototype_accuracy(const std::vector<TripletRecord>& records,
                                         const PrototypeTable& table) {
  if (records.empty()) return 1.0;
  std::size_t hit = 0;
  for (const auto& rec : records) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < table.classes.size(); ++c) {
      double d = 0.0;
      for (std::size_t n = 0; n < rec.text_vec.size(); ++n) {
        const double diff = rec.text_vec[n] - table.text_vecs[c][n];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    hit += table.classes[best] == rec.class_label ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

/// Smallest distance between two class prototypes' text vectors.
inline double min_prototype_gap(const PrototypeTable& table) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < table.text_vecs.size(); ++a)
    for (std::size_t b = a + 1; b < table.text_vecs.size(); ++b) {
      double d = 0.0;
      for (std::size_t n = 0; n < table.text_vecs[a].size(); ++n) {
        const double diff = table.text_vecs[a][n] - table.text_vecs[b][n];
        d += diff * diff;
      }
      gap = std::min(gap, std::sqrt(d));
    }
  return gap;
}

// ---------------------------------------------------------------------------
// Manifest I/O: one JSON object per line with fields id, class, caption,
// text_vec, image_vec, points. Doubles are written in shortest round-trip
// form.

namespace detail {

inline void check_finite(const std::vector<double>& v, const std::string& what) {
  for (double x : v) require(std::isfinite(x), Errc::non_finite, what + " has a non-finite entry");
}

inline std::vector<double> read_vector(const nlohmann::json& j, const char* key) {
  require(j.contains(key), Errc::parse, std::string("missing field '") + key + "'");
  const auto& arr = j.at(key);
  require(arr.is_array() && !arr.empty(), Errc::parse,
          std::string("field '") + key + "' must be a non-empty array");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& x : arr) {
    require(x.is_number(), Errc::parse, std::string("field '") + key + "' must hold numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline std::string read_string(const nlohmann::json& j, const char* key) {
  require(j.contains(key) && j.at(key).is_string(), Errc::parse,
          std::string("missing or non-string field '") + key + "'");
  return j.at(key).get<std::string>();
}

}  // namespace detail

inline nlohmann::json record_to_json(const TripletRecord& r) {
  detail::check_finite(r.text_vec, r.id + " text_vec");
  detail::check_finite(r.image_vec, r.id + " image_vec");
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.points) {
    for (double x : p) require(std::isfinite(x), Errc::non_finite, r.id + " has a non-finite point");
    pts.push_back({p[0], p[1], p[2]});
  }
  return nlohmann::json{{"id", r.id},          {"class", r.class_label},
                        {"caption", r.caption}, {"text_vec", r.text_vec},
                        {"image_vec", r.image_vec}, {"points", std::move(pts)}};
}

inline TripletRecord record_from_json(const nlohmann::json& j) {
  require(j.is_object(), Errc::parse, "record must be a JSON object");
  TripletRecord r;
  r.id = detail::read_string(j, "id");
  r.class_label = detail::read_string(j, "class");
  r.caption = detail::read_string(j, "caption");
  r.text_vec = detail::read_vector(j, "text_vec");
  r.image_vec = detail::read_vector(j, "image_vec");
  require(j.contains("points") && j.at("points").is_array() && !j.at("points").empty(),
          Errc::parse, "field 'points' must be a non-empty array");
  for (const auto& p : j.at("points")) {
    require(p.is_array() && p.size() == 3, Errc::parse, "each point must be [x, y, z]");
    Point3 q{};
    for (std::size_t c = 0; c < 3; ++c) {
      require(p[c].is_number(), Errc::parse, "point coordinates must be numbers");
      q[c] = p[c].get<double>();
    }
    r.points.push_back(q);
  }
  return r;
}

inline void write_manifest(const std::vector<TripletRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::io, "cannot open '" + path + "' for writing");
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  out.flush();
  require(out.good(), Errc::io, "write to '" + path + "' failed");
}

/// Parses a manifest. Any malformed line aborts the whole read with an error
/// naming the line; an empty file yields no records and a warning on stderr.
inline std::vector<TripletRecord> read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open manifest '" + path + "'");
  std::vector<TripletRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::parse, path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(Errc::parse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (records.empty()) std::cerr << "warning: manifest '" << path << "' is empty\n";
  return records;
}

inline nlohmann::json prototypes_to_json(const PrototypeTable& t) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t c = 0; c < t.classes.size(); ++c) {
    detail::check_finite(t.text_vecs[c], t.classes[c]);
    arr.push_back({{"class", t.classes[c]}, {"text_vec", t.text_vecs[c]}});
  }
  return nlohmann::json{{"classes", std::move(arr)}};
}

inline PrototypeTable prototypes_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("classes") && j.at("classes").is_array(), Errc::parse,
          "prototype table needs a 'classes' array");
  PrototypeTable t;
  std::set<std::string> seen;
  for (const auto& entry : j.at("classes")) {
    auto cls = detail::read_string(entry, "class");
    require(seen.insert(cls).second, Errc::parse, "duplicate class '" + cls + "'");
    t.classes.push_back(std::move(cls));
    t.text_vecs.push_back(detail::read_vector(entry, "text_vec"));
  }
  return t;
}

inline void write_prototypes(const PrototypeTable& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::io, "cannot open '" + path + "' for writing");
  out << prototypes_to_json(t).dump(2) << '\n';
  require(out.good(), Errc::io, "write to '" + path + "' failed");
}

inline PrototypeTable read_prototypes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open prototype table '" + path + "'");
  try {
    return prototypes_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

/// Index batches for one epoch: a seeded shuffle cut into chunks of b.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n_records, std::size_t b,
                                                        std::uint64_t seed, bool drop_last) {
  require(b >= 1, Errc::invalid_argument, "batch size must be >= 1");
  std::vector<std::size_t> order(n_records);
  for (std::size_t n = 0; n < n_records; ++n) order[n] = n;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t lo = 0; lo < n_records; lo += b) {
    const std::size_t hi = std::min(n_records, lo + b);
    if (hi - lo < b && drop_last) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return batches;
}

}  // namespace ctp
