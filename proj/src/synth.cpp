#include <algorithm>
#include <cmath>

#include "sage3d/errors.hpp"
#include "sage3d/geometry.hpp"
#include "sage3d/random.hpp"

namespace sage3d {

namespace {

struct Triangle {
  Vec3 a, b, c;
  bool wall;
  std::size_t face;
};

Vec3 minus(const Vec3& p, const Vec3& q) { return {p[0] - q[0], p[1] - q[1], p[2] - q[2]}; }

Vec3 cross(const Vec3& u, const Vec3& v) {
  return {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
}

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

void add_quad(std::vector<Triangle>& tris, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
              bool wall, std::size_t face) {
  tris.push_back({a, b, c, wall, face});
  tris.push_back({a, c, d, wall, face});
}

void validate(const RoofSpec& s) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(s.length) || !positive(s.width) || !positive(s.wall_height)) {
    throw InvalidArgument("synth_roof: footprint and wall height must be positive");
  }
  if (s.family != RoofFamily::FlatBox && !positive(s.roof_height)) {
    throw InvalidArgument("synth_roof: roof height must be positive for pitched roofs");
  }
  if (s.points == 0) throw InvalidArgument("synth_roof: point count must be positive");
  if (!std::isfinite(s.noise) || s.noise < 0.0) throw InvalidArgument("synth_roof: noise must be >= 0");
  if (s.family == RoofFamily::Hip && !(s.length > s.width)) {
    throw InvalidArgument("synth_roof: hip roofs need length > width");
  }
}

}  // namespace

std::string to_string(RoofFamily family) {
  switch (family) {
    case RoofFamily::FlatBox: return "flat-box";
    case RoofFamily::Gable: return "gable";
    case RoofFamily::Hip: return "hip";
  }
  return "?";
}

RoofFamily parse_roof_family(const std::string& name) {
  if (name == "flat-box" || name == "flat") return RoofFamily::FlatBox;
  if (name == "gable") return RoofFamily::Gable;
  if (name == "hip") return RoofFamily::Hip;
  throw InvalidArgument("unknown roof family '" + name + "' (expected flat-box, gable or hip)");
}

std::pair<PointCloud, Wireframe> synth_roof(const RoofSpec& spec, std::uint64_t seed) {
  validate(spec);
  const double hl = spec.length / 2.0;
  const double hw = spec.width / 2.0;
  const double h = spec.wall_height;
  const double top = h + spec.roof_height;
  const std::array<Vec3, 4> ground{{{-hl, -hw, 0.0}, {hl, -hw, 0.0}, {hl, hw, 0.0}, {-hl, hw, 0.0}}};
  const std::array<Vec3, 4> eave{{{-hl, -hw, h}, {hl, -hw, h}, {hl, hw, h}, {-hl, hw, h}}};

  Wireframe wf;
  std::vector<Triangle> tris;
  if (spec.walls) {
    wf.vertices.insert(wf.vertices.end(), ground.begin(), ground.end());
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t j = (i + 1) % 4;
      add_quad(tris, ground[i], ground[j], eave[j], eave[i], true, i);
    }
  }
  wf.vertices.insert(wf.vertices.end(), eave.begin(), eave.end());

  switch (spec.family) {
    case RoofFamily::FlatBox:
      add_quad(tris, eave[0], eave[1], eave[2], eave[3], false, 4);
      break;
    case RoofFamily::Gable:
    case RoofFamily::Hip: {
      const double inset = spec.family == RoofFamily::Hip ? hw : 0.0;
      const Vec3 r0{-hl + inset, 0.0, top};
      const Vec3 r1{hl - inset, 0.0, top};
      wf.vertices.push_back(r0);
      wf.vertices.push_back(r1);
      add_quad(tris, eave[0], eave[1], r1, r0, false, 4);
      add_quad(tris, eave[2], eave[3], r0, r1, false, 5);
      // Gable ends are vertical wall triangles; hip ends are roof slopes.
      const bool ends_are_walls = spec.family == RoofFamily::Gable;
      if (!ends_are_walls || spec.walls) {
        tris.push_back({eave[3], eave[0], r0, ends_are_walls, 6});
        tris.push_back({eave[1], eave[2], r1, ends_are_walls, 7});
      }
      break;
    }
  }

  std::vector<double> cumulative;
  double area = 0.0;
  for (const auto& t : tris) {
    area += 0.5 * norm(cross(minus(t.b, t.a), minus(t.c, t.a)));
    cumulative.push_back(area);
  }

  Rng rng(seed);
  PointCloud cloud;
  cloud.coords.reserve(spec.points);
  cloud.attrs.reserve(spec.points);
  for (std::size_t i = 0; i < spec.points; ++i) {
    const double pick = uniform01(rng) * area;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const Triangle& t = tris[std::min<std::size_t>(it - cumulative.begin(), tris.size() - 1)];
    double u = uniform01(rng);
    double v = uniform01(rng);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = t.a[a] + u * (t.b[a] - t.a[a]) + v * (t.c[a] - t.a[a]);
    cloud.coords.push_back(p);

    const Vec3 n = cross(minus(t.b, t.a), minus(t.c, t.a));
    const double nz = std::abs(n[2]) / norm(n);
    const double shade = 0.04 * static_cast<double>(t.face);
    Attrs at = t.wall ? Attrs{0.80 - shade, 0.78 - shade, 0.72, 1.0, 0.0}
                      : Attrs{0.55 + shade, 0.25 + shade, 0.20, 1.0, 0.0};
    at[4] = 0.2 + 0.6 * nz + 0.05 * uniform01(rng);
    for (double& c : at) c = std::clamp(c, 0.0, 1.0);
    cloud.attrs.push_back(at);
  }

  if (spec.noise > 0.0) {
    // Jitter is expressed in normalized units, so scale it by the clean extent.
    PointCloud clean = cloud;
    const double extent = normalize(clean).scale;
    for (auto& p : cloud.coords) {
      for (int a = 0; a < 3; ++a) p[a] += spec.noise * extent * standard_normal(rng);
    }
  }
  normalize(cloud, &wf);
  return {std::move(cloud), std::move(wf)};
}

RoofSpec random_roof_spec(RoofFamily family, std::size_t points, double noise, bool walls,
                          std::uint64_t seed) {
  Rng rng(seed);
  RoofSpec s;
  s.family = family;
  s.points = points;
  s.noise = noise;
  s.walls = walls;
  s.length = uniform(rng, 1.5, 3.0);
  s.width = uniform(rng, 1.0, std::min(2.0, 0.8 * s.length));
  s.wall_height = uniform(rng, 0.5, 1.2);
  s.roof_height = family == RoofFamily::FlatBox ? 0.0 : uniform(rng, 0.3, 0.8);
  return s;
}

}  // namespace sage3d
