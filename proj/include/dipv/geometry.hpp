// Point-cloud containers, SO(3) rotations, normalization, farthest point
// sampling and k-nearest-neighbor graphs.
#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "dipv/core.hpp"

namespace dipv {

// Ordered point set, optionally with c extra 3-vector channels per point
// (stored flat, point-major). Without channels the coordinates act as the
// single geometric channel.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> channels;  // size N * channel_count
  std::size_t channel_count = 0;

  std::size_t size() const { return points.size(); }

  const Vec3& channel(std::size_t point, std::size_t ch) const {
    return channels[point * channel_count + ch];
  }

  // Channels per point as seen by the invariant operators (coordinates
  // stand in when no explicit channels are attached).
  std::size_t effective_channels() const { return channel_count == 0 ? 1 : channel_count; }

  Vec3 channel_or_point(std::size_t point, std::size_t ch) const {
    return channel_count == 0 ? points[point] : channel(point, ch);
  }

  void validate() const {
    if (points.empty()) throw InvalidInput("point cloud must contain at least one point");
    for (const Vec3& p : points)
      if (!is_finite(p)) throw InvalidInput("point cloud contains a non-finite coordinate");
    if (channel_count > 0 && channels.size() != points.size() * channel_count)
      throw InvalidInput("channel storage does not match N * channel_count");
    for (const Vec3& c : channels)
      if (!is_finite(c)) throw InvalidInput("channel contains a non-finite value");
  }
};

// Proper rotation, row-major 3x3.
struct Rotation {
  std::array<double, 9> m = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[3 * r + c]; }
  double& operator()(int r, int c) { return m[3 * r + c]; }

  Vec3 apply(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Rotation transposed() const {
    Rotation t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }

  // this * other, i.e. other acts first
  Rotation compose(const Rotation& other) const {
    Rotation out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += (*this)(r, k) * other(k, c);
        out(r, c) = s;
      }
    return out;
  }

  double determinant() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  // R^T R = I and det = +1, both to 1e-12
  bool is_valid(double tol = 1e-12) const {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += (*this)(k, r) * (*this)(k, c);
        const double expect = (r == c) ? 1.0 : 0.0;
        if (std::abs(s - expect) > tol) return false;
      }
    return std::abs(determinant() - 1.0) <= tol;
  }
};

// Per-point neighbor index lists; the center point never appears in its
// own list.
struct KnnGraph {
  std::vector<std::size_t> neighbor_indices;  // size N * k
  std::size_t k = 0;

  std::size_t size() const { return k == 0 ? 0 : neighbor_indices.size() / k; }

  std::size_t neighbor(std::size_t point, std::size_t j) const {
    return neighbor_indices[point * k + j];
  }
};

// Translate the centroid to the origin, then scale so the farthest point
// sits on the unit sphere. An all-coincident cloud collapses to zeros.
inline PointCloud center_and_scale(const PointCloud& cloud) {
  cloud.validate();
  const std::size_t n = cloud.size();
  Vec3 centroid{0, 0, 0};
  for (const Vec3& p : cloud.points) centroid += p;
  centroid *= 1.0 / static_cast<double>(n);

  PointCloud out = cloud;
  double max_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.points[i] = cloud.points[i] - centroid;
    max_norm = std::max(max_norm, norm(out.points[i]));
  }
  if (max_norm < 1e-300) {
    for (Vec3& p : out.points) p = {0, 0, 0};
    return out;
  }
  const double inv = 1.0 / max_norm;
  for (Vec3& p : out.points) p *= inv;
  return out;
}

inline Rotation rotation_z(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Rotation r;
  r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
  return r;
}

inline Rotation random_rotation_z(Rng& rng) { return rotation_z(rng.uniform(0.0, 2.0 * kPi)); }

inline Rotation random_rotation_z(RngSeed seed) {
  Rng rng(seed);
  return random_rotation_z(rng);
}

inline Rotation rotation_from_quaternion(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n < 1e-300) throw InvalidInput("zero quaternion");
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  Rotation r;
  r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
         2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  return r;
}

// Haar-uniform rotation via a normalized 4-gaussian quaternion.
inline Rotation random_rotation_so3(Rng& rng) {
  double q[4];
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& v : q) {
      v = rng.gaussian();
      n2 += v * v;
    }
  } while (n2 < 1e-12);
  return rotation_from_quaternion(q[0], q[1], q[2], q[3]);
}

inline Rotation random_rotation_so3(RngSeed seed) {
  Rng rng(seed);
  return random_rotation_so3(rng);
}

inline PointCloud apply_rotation(const PointCloud& cloud, const Rotation& rot) {
  PointCloud out = cloud;
  for (Vec3& p : out.points) p = rot.apply(p);
  for (Vec3& c : out.channels) c = rot.apply(c);
  return out;
}

// Greedy max-min subset of m points. The first pick is a seeded uniform
// draw; later picks maximize the distance to the chosen set, ties going
// to the lowest index.
inline PointCloud farthest_point_sample(const PointCloud& cloud, std::size_t m, Rng& rng) {
  cloud.validate();
  const std::size_t n = cloud.size();
  if (m < 1 || m > n) throw InvalidInput("farthest_point_sample: need 1 <= m <= N");

  std::vector<std::size_t> chosen;
  chosen.reserve(m);
  std::vector<double> min_dist2(n, std::numeric_limits<double>::infinity());

  std::size_t current = rng.index(n);
  chosen.push_back(current);
  for (std::size_t step = 1; step < m; ++step) {
    std::size_t best = 0;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d2 = norm_squared(cloud.points[i] - cloud.points[current]);
      if (d2 < min_dist2[i]) min_dist2[i] = d2;
      if (min_dist2[i] > best_d2) {
        best_d2 = min_dist2[i];
        best = i;
      }
    }
    current = best;
    chosen.push_back(current);
  }

  PointCloud out;
  out.channel_count = cloud.channel_count;
  out.points.reserve(m);
  for (std::size_t idx : chosen) {
    out.points.push_back(cloud.points[idx]);
    for (std::size_t ch = 0; ch < cloud.channel_count; ++ch)
      out.channels.push_back(cloud.channel(idx, ch));
  }
  return out;
}

inline PointCloud farthest_point_sample(const PointCloud& cloud, std::size_t m, RngSeed seed) {
  Rng rng(seed);
  return farthest_point_sample(cloud, m, rng);
}

// Exhaustive KNN; ties break on the lower index so the result is a pure
// function of the distance matrix.
inline KnnGraph build_knn(const PointCloud& cloud, std::size_t k) {
  cloud.validate();
  const std::size_t n = cloud.size();
  if (k < 1 || k >= n) throw InvalidInput("build_knn: need 1 <= k < N");

  KnnGraph graph;
  graph.k = k;
  graph.neighbor_indices.assign(n * k, 0);

  std::vector<std::pair<double, std::size_t>> cand(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cand[w++] = {norm_squared(cloud.points[i] - cloud.points[j]), j};
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) graph.neighbor_indices[i * k + j] = cand[j].second;
  }
  return graph;
}

}  // namespace dipv
