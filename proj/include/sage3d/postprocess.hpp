#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sage3d/geometry.hpp"

namespace sage3d {

class Model;

struct Candidate {
  Vec3 position;
  double prob;
};

struct Corner {
  Vec3 position;
  double confidence;
  std::size_t support;
};

struct CornerSet {
  std::vector<Corner> corners;

  std::size_t size() const { return corners.size(); }
};

struct PostprocessConfig {
  double tau = 0.3;
  double eps = 0.05;
  std::size_t min_pts = 1;
};

inline constexpr int kNoise = -1;

// Points with prob strictly above tau, moved by their predicted offsets.
std::vector<Candidate> select_candidates(std::span<const double> probs, std::span<const Vec3> offsets,
                                         std::span<const Vec3> coords, double tau);

// Cluster id per point (kNoise for noise). Neighbourhoods are closed balls of
// radius eps that include the point itself; ids are ordered by each cluster's
// lowest member index.
std::vector<int> dbscan(std::span<const Vec3> points, double eps, std::size_t min_pts);

// Unweighted mean position, max member prob, member count per cluster.
CornerSet cluster_centroids(std::span<const Candidate> candidates, std::span<const int> ids);

struct Detection {
  CornerSet corners;
  std::vector<double> probs;  // per input point
  std::vector<Vec3> offsets;  // per input point
  PointCloud input;           // the points the predictions refer to
};

Detection detect(const Model& model, const PointCloud& cloud, const PostprocessConfig& cfg,
                 std::uint64_t seed);

CornerSet detect_corners(const Model& model, const PointCloud& cloud, const PostprocessConfig& cfg,
                         std::uint64_t seed);

}  // namespace sage3d
