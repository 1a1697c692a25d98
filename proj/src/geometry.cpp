#include "sage3d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sage3d/errors.hpp"
#include "sage3d/random.hpp"

namespace sage3d {

void PointCloud::validate() const {
  if (attrs.size() != coords.size()) {
    throw InvalidArgument("point cloud has " + std::to_string(coords.size()) + " coordinates but " +
                          std::to_string(attrs.size()) + " attribute rows");
  }
  for (std::size_t i = 0; i < coords.size(); ++i) {
    for (double v : coords[i]) {
      if (!std::isfinite(v)) throw InvalidArgument("non-finite coordinate at point " + std::to_string(i));
    }
    for (double v : attrs[i]) {
      if (!std::isfinite(v)) throw InvalidArgument("non-finite attribute at point " + std::to_string(i));
    }
  }
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
  PointCloud out;
  out.coords.reserve(indices.size());
  out.attrs.reserve(indices.size());
  for (std::size_t i : indices) {
    out.coords.push_back(coords.at(i));
    out.attrs.push_back(attrs.at(i));
  }
  return out;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m,
                                               std::size_t start) {
  if (points.empty()) throw InvalidArgument("farthest_point_sample: empty cloud");
  if (m == 0 || m > points.size()) {
    throw InvalidArgument("farthest_point_sample: m=" + std::to_string(m) + " outside [1, " +
                          std::to_string(points.size()) + "]");
  }
  if (start >= points.size()) throw InvalidArgument("farthest_point_sample: start out of range");
  return kernels::parallel::farthest_point_sample(points, m, start);
}

NeighborIndex knn(std::span<const Vec3> queries, std::span<const Vec3> source, std::size_t k) {
  if (k == 0 || k > source.size()) {
    throw InvalidArgument("knn: K=" + std::to_string(k) + " with " + std::to_string(source.size()) +
                          " source points");
  }
  NeighborIndex out;
  out.queries = queries.size();
  out.k = k;
  out.indices.resize(queries.size() * k);
  out.distances.resize(queries.size() * k);
  kernels::parallel::knn(queries, source, k, out.indices.data(), out.distances.data());
  return out;
}

std::vector<std::size_t> random_subsample_indices(std::size_t cloud_size, std::size_t n,
                                                  std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("random_subsample: n must be positive");
  if (cloud_size == 0) throw InvalidArgument("random_subsample: empty cloud");
  Rng rng(seed);
  std::vector<std::size_t> order(cloud_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t distinct = std::min(n, cloud_size);
  // Partial Fisher-Yates: the first `distinct` slots are a uniform draw.
  for (std::size_t i = 0; i < distinct; ++i) {
    const std::size_t j = i + uniform_index(rng, cloud_size - i);
    std::swap(order[i], order[j]);
  }
  order.resize(distinct);
  while (order.size() < n) order.push_back(uniform_index(rng, cloud_size));
  return order;
}

PointCloud random_subsample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
  const auto idx = random_subsample_indices(cloud.size(), n, seed);
  return cloud.select(idx);
}

LabelSet make_labels(std::span<const Vec3> coords, const Wireframe& wf, double d_thresh) {
  if (wf.vertices.empty()) throw InvalidArgument("make_labels: empty wireframe");
  if (!(d_thresh > 0.0)) throw InvalidArgument("make_labels: d_thresh must be positive");
  LabelSet out;
  const std::size_t n = coords.size();
  out.soft.resize(n);
  out.nearest_dist.resize(n);
  out.offsets.resize(n);
  out.mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_v = 0;
    for (std::size_t v = 0; v < wf.vertices.size(); ++v) {
      const double d2 = kernels::squared_distance(coords[i], wf.vertices[v]);
      if (d2 < best) {
        best = d2;
        best_v = v;
      }
    }
    const double d = std::sqrt(best);
    const Vec3& vert = wf.vertices[best_v];
    out.nearest_dist[i] = d;
    out.soft[i] = std::exp(-d / d_thresh);
    out.offsets[i] = {vert[0] - coords[i][0], vert[1] - coords[i][1], vert[2] - coords[i][2]};
    out.mask[i] = d <= d_thresh ? 1 : 0;
  }
  return out;
}

Normalization normalize(PointCloud& cloud, Wireframe* wf) {
  if (cloud.empty()) throw InvalidArgument("normalize: empty cloud");
  Normalization t;
  for (const auto& p : cloud.coords) {
    for (int a = 0; a < 3; ++a) t.center[a] += p[a];
  }
  for (int a = 0; a < 3; ++a) t.center[a] /= static_cast<double>(cloud.size());
  double extent = 0.0;
  for (const auto& p : cloud.coords) {
    for (int a = 0; a < 3; ++a) extent = std::max(extent, std::abs(p[a] - t.center[a]));
  }
  t.scale = extent > 0.0 ? extent : 1.0;
  auto apply = [&t](Vec3& p) {
    for (int a = 0; a < 3; ++a) p[a] = (p[a] - t.center[a]) / t.scale;
  };
  for (auto& p : cloud.coords) apply(p);
  if (wf != nullptr) {
    for (auto& v : wf->vertices) apply(v);
  }
  return t;
}

}  // namespace sage3d
