#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "ctp/error.hpp"
#include "ctp/matrix.hpp"

namespace ctp {

using Point3 = std::array<double, 3>;

/// Fixed-size point set; rows flagged invalid are zero padding.
struct PointCloudSample {
  Matrix<double> points;    // N x 3
  std::vector<bool> valid;  // N

  std::size_t size() const { return points.rows(); }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (bool v : valid) n += v ? 1 : 0;
    return n;
  }

  void validate() const {
    require(points.cols() == 3, Errc::dimension_mismatch, "points must be N x 3");
    require(valid.size() == points.rows(), Errc::dimension_mismatch,
            "valid mask length differs from point count");
    require(valid_count() >= 1, Errc::degenerate_input, "point cloud has no valid points");
    for (std::size_t r = 0; r < points.rows(); ++r) {
      if (valid[r]) continue;
      for (double x : points.row(r))
        require(x == 0.0, Errc::invalid_argument, "padded rows must be zero");
    }
  }

  friend bool operator==(const PointCloudSample&, const PointCloudSample&) = default;
};

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Farthest point sampling. Starts at `start`, then repeatedly takes the
/// point whose distance to the chosen set is largest; ties go to the
/// smallest index.
inline std::vector<std::size_t> fps(const std::vector<Point3>& points, std::size_t k,
                                    std::size_t start = 0) {
  const std::size_t n = points.size();
  require(k >= 1, Errc::invalid_argument, "fps: k must be at least 1");
  require(k <= n, Errc::out_of_range,
          "fps: k = " + std::to_string(k) + " exceeds point count " + std::to_string(n));
  require(start < n, Errc::out_of_range, "fps: start index out of range");

  std::vector<std::size_t> chosen{start};
  chosen.reserve(k);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  taken[start] = true;
  std::size_t last = start;
  while (chosen.size() < k) {
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t p = 0; p < n; ++p) {
      if (taken[p]) continue;
      min_d2[p] = std::min(min_d2[p], squared_distance(points[p], points[last]));
      if (min_d2[p] > best_d2) {  // strict: earlier index wins ties
        best_d2 = min_d2[p];
        best = p;
      }
    }
    taken[best] = true;
    chosen.push_back(best);
    last = best;
  }
  return chosen;
}

/// Brings a cloud to exactly n_target rows: zero-pads short clouds and
/// downsamples long ones with fps.
inline PointCloudSample pad_or_sample(const std::vector<Point3>& cloud, std::size_t n_target,
                                      std::size_t start = 0) {
  require(!cloud.empty(), Errc::degenerate_input, "pad_or_sample: empty point cloud");
  require(n_target >= 1, Errc::invalid_argument, "pad_or_sample: n_target must be >= 1");
  PointCloudSample out{Matrix<double>(n_target, 3), std::vector<bool>(n_target, false)};
  if (cloud.size() <= n_target) {
    for (std::size_t r = 0; r < cloud.size(); ++r) {
      for (std::size_t c = 0; c < 3; ++c) out.points(r, c) = cloud[r][c];
      out.valid[r] = true;
    }
    return out;
  }
  const auto keep = fps(cloud, n_target, start);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    for (std::size_t c = 0; c < 3; ++c) out.points(r, c) = cloud[keep[r]][c];
    out.valid[r] = true;
  }
  return out;
}

}  // namespace ctp
