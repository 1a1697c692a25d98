#include <doctest.h>

#include <cmath>

#include "sage3d/errors.hpp"
#include "sage3d/loss.hpp"
#include "sage3d/optim.hpp"
#include "sage3d/random.hpp"

using namespace sage3d;
using ag::Tensor;

namespace {

LabelSet labels_at(std::vector<double> dist, double d_thresh = 0.05) {
  LabelSet l;
  for (double d : dist) {
    l.nearest_dist.push_back(d);
    l.soft.push_back(std::exp(-d / d_thresh));
    l.mask.push_back(d <= d_thresh ? 1 : 0);
    l.offsets.push_back({d, -0.5 * d, 0.25});
  }
  return l;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// Focal term for one point, written out by hand.
double focal_by_hand(double z, double y, bool positive, double w, const LossConfig& c) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  const double pt = positive ? p : 1.0 - p;
  const double bce = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  return w * c.alpha * std::pow(1.0 - pt, c.gamma) * bce;
}

}  // namespace

TEST_CASE("proximity weight range") {
  const LossConfig c;
  CHECK(proximity_weight(0.0, c) == 3.0);
  CHECK(proximity_weight(1e6, c) == doctest::Approx(1.0));
  double prev = 4.0;
  for (double d = 0.0; d < 1.0; d += 0.01) {
    const double w = proximity_weight(d, c);
    CHECK(w >= 1.0);
    CHECK(w <= 3.0);
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("focal loss reference value") {
  const LossConfig c;
  const LabelSet l = labels_at({0.0});
  const Tensor z = Tensor::constant({1, 1}, {logit(0.9)});
  const double v = focal_distance_loss(z, l, c).item();
  CHECK(std::abs(v - 7.90e-4) <= 1e-6);
  CHECK(v == doctest::Approx(3 * 0.25 * 0.01 * -std::log(0.9)).epsilon(1e-12));
}

TEST_CASE("focal loss matches a hand evaluation") {
  const LossConfig c;
  Rng rng(1);
  std::vector<double> d, z;
  for (int i = 0; i < 40; ++i) {
    d.push_back(uniform(rng, 0.0, 0.2));
    z.push_back(uniform(rng, -6, 6));
  }
  const LabelSet l = labels_at(d);
  double expect = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    expect += focal_by_hand(z[i], l.soft[i], l.mask[i], proximity_weight(d[i], c), c);
  }
  expect /= static_cast<double>(d.size());
  CHECK(focal_distance_loss(Tensor::constant({40, 1}, z), l, c).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("focal loss limits and monotonicity") {
  const LossConfig c;
  const LabelSet pos = labels_at({0.0});
  CHECK(focal_distance_loss(Tensor::constant({1, 1}, {30.0}), pos, c).item() < 1e-20);
  double prev = 1e9;
  for (double p = 0.05; p < 1.0; p += 0.05) {
    const double v = focal_distance_loss(Tensor::constant({1, 1}, {logit(p)}), pos, c).item();
    CHECK(v >= 0.0);
    CHECK(v < prev);
    prev = v;
  }
  const LabelSet neg = labels_at({0.3});
  for (double z = -8; z < 8; z += 0.5) CHECK(focal_distance_loss(Tensor::constant({1, 1}, {z}), neg, c).item() >= 0.0);
  CHECK_NOTHROW(focal_distance_loss(Tensor::constant({1, 1}, {-700.0}), pos, c));
}

TEST_CASE("focal loss errors") {
  const LossConfig c;
  const LabelSet l = labels_at({0.0, 0.1});
  CHECK_THROWS_AS(focal_distance_loss(Tensor::constant({1, 1}, {0.0}), l, c), InvalidArgument);
  CHECK_THROWS_AS(focal_distance_loss(Tensor::constant({2, 1}, {0.0, std::nan("")}), l, c), NumericError);
  LossConfig bad;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("offset loss values") {
  const LossConfig c;
  LabelSet l = labels_at({0.0});
  l.offsets[0] = {0, 0, 0};
  CHECK(offset_loss(Tensor::constant({1, 3}, {0, 0, 0}), l, c).item() == 0.0);
  CHECK(offset_loss(Tensor::constant({1, 3}, {0.5, 0, 0}), l, c).item() == doctest::Approx(0.125));
  CHECK(offset_loss(Tensor::constant({1, 3}, {0, -2.0, 0}), l, c).item() == doctest::Approx(1.5));
  const LabelSet none = labels_at({0.2, 0.3});
  CHECK(offset_loss(Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6}), none, c).item() == 0.0);
}

TEST_CASE("unmasked offsets do not affect the loss") {
  const LossConfig c;
  Rng rng(2);
  std::vector<double> d, off, z;
  for (int i = 0; i < 30; ++i) {
    d.push_back(uniform(rng, 0.0, 0.12));
    z.push_back(uniform(rng, -3, 3));
    for (int a = 0; a < 3; ++a) off.push_back(uniform(rng, -1, 1));
  }
  const LabelSet l = labels_at(d);
  const double base = total_loss(Tensor::constant({30, 1}, z), Tensor::constant({30, 3}, off), l, c).item();
  for (int i = 0; i < 30; ++i) {
    if (l.mask[static_cast<std::size_t>(i)]) continue;
    for (int a = 0; a < 3; ++a) off[static_cast<std::size_t>(3 * i + a)] += uniform(rng, -100, 100);
  }
  CHECK(total_loss(Tensor::constant({30, 1}, z), Tensor::constant({30, 3}, off), l, c).item() == base);
}

TEST_CASE("total loss is the sum of its terms") {
  const LossConfig c;
  const LabelSet l = labels_at({0.0, 0.02, 0.3});
  const Tensor z = Tensor::constant({3, 1}, {0.5, -1.0, 2.0});
  const Tensor o = Tensor::constant({3, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
  CHECK(total_loss(z, o, l, c).item() ==
        focal_distance_loss(z, l, c).item() + offset_loss(o, l, c).item());
}

TEST_CASE("loss gradients") {
  const LossConfig c;
  Rng rng(3);
  std::vector<double> d, zs, os;
  for (int i = 0; i < 12; ++i) {
    d.push_back(uniform(rng, 0.0, 0.1));
    zs.push_back(uniform(rng, -3, 3));
    for (int a = 0; a < 3; ++a) os.push_back(uniform(rng, -2, 2));
  }
  const LabelSet l = labels_at(d);
  const Tensor z = Tensor::parameter({12, 1}, zs);
  const Tensor o = Tensor::parameter({12, 3}, os);
  CHECK(grad_check([&] { return total_loss(z, o, l, c); }, {z, o}) <= 1e-4);
}

TEST_CASE("smooth L1 is C1 at the transition") {
  for (double delta : {1.0, 0.3}) {
    const double h = 1e-7;
    auto f = [&](double e) { return ag::smooth_l1(Tensor::constant({1}, {e}), delta).item(); };
    const double left = (f(delta) - f(delta - h)) / h;
    const double right = (f(delta + h) - f(delta)) / h;
    CHECK(std::abs(left - right) <= 1e-6);
    CHECK(std::abs(right - 1.0) <= 1e-6);
  }
}
