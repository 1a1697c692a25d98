#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sage3d/kernels.hpp"

namespace sage3d {

inline constexpr std::size_t kAttrWidth = 5;
using Attrs = std::array<double, kAttrWidth>;

// XYZ in the normalized frame plus RGBA + intensity, each in [0, 1].
struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<Attrs> attrs;

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }
  // Throws InvalidArgument on mismatched widths or non-finite values.
  void validate() const;
  PointCloud select(std::span<const std::size_t> indices) const;
};

struct Wireframe {
  std::vector<Vec3> vertices;

  std::size_t size() const { return vertices.size(); }
};

// Q×K neighbour table, row-major; distances ascend along each row.
struct NeighborIndex {
  std::size_t queries = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;
  std::vector<double> distances;

  std::size_t index(std::size_t q, std::size_t j) const { return indices[q * k + j]; }
  double distance(std::size_t q, std::size_t j) const { return distances[q * k + j]; }
};

struct LabelSet {
  std::vector<double> soft;          // exp(-d / d_thresh)
  std::vector<double> nearest_dist;  // distance to the closest vertex
  std::vector<Vec3> offsets;         // closest vertex minus point
  std::vector<std::uint8_t> mask;    // nearest_dist <= d_thresh

  std::size_t size() const { return soft.size(); }
};

// Max-min sampling: first index is `start`, each next index maximizes the
// distance to the selected set, lowest index on ties.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m,
                                               std::size_t start = 0);

// Exact k nearest neighbours; ties go to the lowest source index.
NeighborIndex knn(std::span<const Vec3> queries, std::span<const Vec3> source, std::size_t k);

// n points without replacement when the cloud is large enough. Smaller clouds
// keep every point once and are padded with draws with replacement.
std::vector<std::size_t> random_subsample_indices(std::size_t cloud_size, std::size_t n,
                                                  std::uint64_t seed);
PointCloud random_subsample(const PointCloud& cloud, std::size_t n, std::uint64_t seed);

LabelSet make_labels(std::span<const Vec3> coords, const Wireframe& wf, double d_thresh);

struct Normalization {
  Vec3 center{0.0, 0.0, 0.0};
  double scale = 1.0;
};

// Zero-mean coordinates scaled so the largest |coordinate| is 1. The same
// transform is applied to `wf` when given.
Normalization normalize(PointCloud& cloud, Wireframe* wf = nullptr);

// ---------------------------------------------------------------------------
// Synthetic roofs

enum class RoofFamily { FlatBox, Gable, Hip };

std::string to_string(RoofFamily family);
RoofFamily parse_roof_family(const std::string& name);

struct RoofSpec {
  RoofFamily family = RoofFamily::Gable;
  double length = 2.0;       // footprint along x
  double width = 1.2;        // footprint along y
  double wall_height = 0.8;
  double roof_height = 0.5;  // ridge rise; unused for flat-box
  std::size_t points = 256;
  double noise = 0.0;        // Gaussian jitter, normalized units
  bool walls = true;         // walls and ground corners included
};

// Area-uniform samples on the roof (and wall) faces of the solid, jittered,
// normalized; the wireframe holds the exact corners in the same frame.
std::pair<PointCloud, Wireframe> synth_roof(const RoofSpec& spec, std::uint64_t seed);

// Draws footprint and heights for one roof of the given family.
RoofSpec random_roof_spec(RoofFamily family, std::size_t points, double noise, bool walls,
                          std::uint64_t seed);

}  // namespace sage3d
