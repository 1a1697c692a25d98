#include "sage3d/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "sage3d/errors.hpp"
#include "sage3d/network.hpp"

namespace sage3d {

std::vector<Candidate> select_candidates(std::span<const double> probs, std::span<const Vec3> offsets,
                                         std::span<const Vec3> coords, double tau) {
  if (probs.size() != coords.size() || offsets.size() != coords.size()) {
    throw InvalidArgument("select_candidates: probs, offsets and coords differ in length");
  }
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!(probs[i] > tau)) continue;
    const Vec3& p = coords[i];
    const Vec3& o = offsets[i];
    out.push_back({{p[0] + o[0], p[1] + o[1], p[2] + o[2]}, probs[i]});
  }
  return out;
}

std::vector<int> dbscan(std::span<const Vec3> points, double eps, std::size_t min_pts) {
  if (!(eps > 0.0)) throw InvalidArgument("dbscan: eps must be positive");
  if (min_pts == 0) throw InvalidArgument("dbscan: min_pts must be positive");
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> neighbours(n);
#pragma omp parallel for schedule(dynamic, 16) if (n >= 256)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      // Compared as a distance: eps * eps can round across the boundary.
      if (std::sqrt(kernels::squared_distance(points[i], points[j])) <= eps) neighbours[i].push_back(j);
    }
  }

  constexpr int kUnvisited = -2;
  std::vector<int> label(n, kUnvisited);
  int next = 0;
  std::deque<std::size_t> frontier;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    if (neighbours[i].size() < min_pts) {
      label[i] = kNoise;
      continue;
    }
    const int id = next++;
    label[i] = id;
    frontier.assign(neighbours[i].begin(), neighbours[i].end());
    while (!frontier.empty()) {
      const std::size_t j = frontier.front();
      frontier.pop_front();
      if (label[j] == kNoise) label[j] = id;  // border point
      if (label[j] != kUnvisited) continue;
      label[j] = id;
      if (neighbours[j].size() >= min_pts) {
        frontier.insert(frontier.end(), neighbours[j].begin(), neighbours[j].end());
      }
    }
  }

  // Border points can give a later cluster a lower member than an earlier
  // one; renumber by lowest member index.
  std::vector<int> remap(static_cast<std::size_t>(next), -1);
  int ordered = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] < 0) continue;
    int& r = remap[static_cast<std::size_t>(label[i])];
    if (r < 0) r = ordered++;
    label[i] = r;
  }
  return label;
}

CornerSet cluster_centroids(std::span<const Candidate> candidates, std::span<const int> ids) {
  if (candidates.size() != ids.size()) {
    throw InvalidArgument("cluster_centroids: one cluster id per candidate expected");
  }
  int clusters = 0;
  for (int id : ids) clusters = std::max(clusters, id + 1);
  CornerSet out;
  out.corners.assign(static_cast<std::size_t>(clusters), Corner{{0.0, 0.0, 0.0}, 0.0, 0});
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (ids[i] < 0) continue;
    Corner& c = out.corners[static_cast<std::size_t>(ids[i])];
    for (int a = 0; a < 3; ++a) c.position[a] += candidates[i].position[a];
    c.confidence = std::max(c.confidence, candidates[i].prob);
    ++c.support;
  }
  for (Corner& c : out.corners) {
    for (int a = 0; a < 3; ++a) c.position[a] /= static_cast<double>(c.support);
  }
  return out;
}

Detection detect(const Model& model, const PointCloud& cloud, const PostprocessConfig& cfg,
                 std::uint64_t seed) {
  ForwardOptions opts;
  opts.mode = Mode::Inference;
  opts.seed = seed;
  const ForwardResult fwd = model.forward(cloud, nullptr, opts);
  Detection out;
  const ag::Tensor probs = ag::sigmoid(fwd.logits);
  out.probs.assign(probs.values().begin(), probs.values().end());
  const auto off = fwd.offsets.values();
  out.offsets.resize(fwd.offsets.rows());
  for (std::size_t i = 0; i < out.offsets.size(); ++i) {
    out.offsets[i] = {off[3 * i], off[3 * i + 1], off[3 * i + 2]};
  }
  out.input = fwd.input;
  const auto candidates = select_candidates(out.probs, out.offsets, out.input.coords, cfg.tau);
  std::vector<Vec3> positions;
  positions.reserve(candidates.size());
  for (const auto& c : candidates) positions.push_back(c.position);
  const auto ids = dbscan(positions, cfg.eps, cfg.min_pts);
  out.corners = cluster_centroids(candidates, ids);
  return out;
}

CornerSet detect_corners(const Model& model, const PointCloud& cloud, const PostprocessConfig& cfg,
                         std::uint64_t seed) {
  return detect(model, cloud, cfg, seed).corners;
}

}  // namespace sage3d
