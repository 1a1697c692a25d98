#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sage3d/errors.hpp"
#include "sage3d/geometry.hpp"

using namespace sage3d;

namespace {

void check_normalized(const PointCloud& c) {
  double mx = 0.0;
  for (int a = 0; a < 3; ++a) {
    double s = 0.0;
    for (const auto& p : c.coords) {
      s += p[a];
      mx = std::max(mx, std::abs(p[a]));
    }
    CHECK(std::abs(s / static_cast<double>(c.size())) <= 1e-7);
  }
  CHECK(mx <= 1.0 + 1e-12);
  for (const auto& a : c.attrs) {
    for (double v : a) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

}  // namespace

TEST_CASE("flat box corners and faces") {
  RoofSpec spec;
  spec.family = RoofFamily::FlatBox;
  spec.points = 300;
  const auto [cloud, wf] = synth_roof(spec, 11);
  CHECK(wf.size() == 8);
  CHECK(cloud.size() == 300);
  check_normalized(cloud);

  Vec3 lo = wf.vertices[0], hi = wf.vertices[0];
  for (const auto& v : wf.vertices) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  }
  for (const auto& p : cloud.coords) {
    bool on_face = false;
    for (int a = 0; a < 3; ++a) {
      CHECK(p[a] >= lo[a] - 1e-9);
      CHECK(p[a] <= hi[a] + 1e-9);
      // Walls and the roof; the box has no floor.
      on_face = on_face || std::abs(p[a] - hi[a]) <= 1e-9 || (a < 2 && std::abs(p[a] - lo[a]) <= 1e-9);
    }
    CHECK(on_face);
  }
}

TEST_CASE("vertex counts per family") {
  RoofSpec spec;
  spec.family = RoofFamily::Gable;
  CHECK(synth_roof(spec, 1).second.size() == 10);
  spec.family = RoofFamily::Hip;
  CHECK(synth_roof(spec, 1).second.size() == 10);
  spec.walls = false;
  CHECK(synth_roof(spec, 1).second.size() == 6);
  spec.family = RoofFamily::Gable;
  CHECK(synth_roof(spec, 1).second.size() == 6);
  spec.family = RoofFamily::FlatBox;
  CHECK(synth_roof(spec, 1).second.size() == 4);
}

TEST_CASE("synth is deterministic and normalized with noise") {
  RoofSpec spec;
  spec.family = RoofFamily::Hip;
  spec.noise = 0.01;
  const auto a = synth_roof(spec, 5);
  const auto b = synth_roof(spec, 5);
  CHECK(a.first.coords == b.first.coords);
  CHECK(a.first.attrs == b.first.attrs);
  CHECK(a.second.vertices == b.second.vertices);
  check_normalized(a.first);
  const auto c = synth_roof(spec, 6);
  CHECK(a.first.coords != c.first.coords);
}

TEST_CASE("synth validation") {
  RoofSpec spec;
  spec.length = 0.0;
  CHECK_THROWS_AS(synth_roof(spec, 1), InvalidArgument);
  spec = RoofSpec{};
  spec.points = 0;
  CHECK_THROWS_AS(synth_roof(spec, 1), InvalidArgument);
  spec = RoofSpec{};
  spec.noise = -1;
  CHECK_THROWS_AS(synth_roof(spec, 1), InvalidArgument);
}

TEST_CASE("random roof specs stay in range") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    for (RoofFamily f : {RoofFamily::FlatBox, RoofFamily::Gable, RoofFamily::Hip}) {
      const RoofSpec r = random_roof_spec(f, 64, 0.01, true, s);
      CHECK(r.family == f);
      CHECK(r.length >= 1.5);
      CHECK(r.length <= 3.0);
      CHECK(r.width >= 1.0);
      CHECK(r.width < r.length);
      CHECK_NOTHROW(synth_roof(r, s));
    }
  }
}

TEST_CASE("roof family names") {
  CHECK(parse_roof_family("flat-box") == RoofFamily::FlatBox);
  CHECK(parse_roof_family(to_string(RoofFamily::Hip)) == RoofFamily::Hip);
  CHECK_THROWS_AS(parse_roof_family("dome"), InvalidArgument);
}
