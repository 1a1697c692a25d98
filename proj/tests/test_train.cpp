#include <doctest.h>

#include <cmath>
#include <set>

#include "sage3d/errors.hpp"
#include "sage3d/loss.hpp"
#include "sage3d/train.hpp"

using namespace sage3d;

namespace {

TrainConfig tiny_config() {
  TrainConfig t;
  t.model = ModelConfig::tiny();
  t.data.flat_box = 3;
  t.data.gable = 3;
  t.data.hip = 4;
  t.data.points = 32;
  t.epochs = 2;
  t.batch = 4;
  t.eval_every = 1;
  t.seed = 3;
  return t;
}

double mean_loss(const Model& m, std::span<const Sample> samples, const LossConfig& cfg) {
  double total = 0.0;
  for (const Sample& s : samples) {
    ForwardOptions o;
    o.mode = Mode::Train;
    o.seed = 99;
    const ForwardResult r = m.forward(s.cloud, &s.wireframe, o);
    total += total_loss(r.logits, r.offsets, *r.levels[0].labels, cfg).item();
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace

TEST_CASE("dataset generation") {
  DatasetSpec spec;
  spec.flat_box = 2;
  spec.gable = 1;
  spec.hip = 3;
  spec.points = 40;
  const auto a = make_dataset(spec, 5);
  REQUIRE(a.size() == 6);
  CHECK(a[0].id == "000000");
  CHECK(a[5].id == "000005");
  CHECK(a[0].family == RoofFamily::FlatBox);
  CHECK(a[2].family == RoofFamily::Gable);
  CHECK(a[5].family == RoofFamily::Hip);
  CHECK(a[3].cloud.size() == 40);
  const auto b = make_dataset(spec, 5);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].cloud.coords == b[i].cloud.coords);
  CHECK(make_dataset(spec, 6)[0].cloud.coords != a[0].cloud.coords);
  CHECK_THROWS_AS(make_dataset(DatasetSpec{0, 0, 0}, 1), InvalidArgument);
}

TEST_CASE("holdout split") {
  DatasetSpec spec;
  spec.flat_box = 4;
  spec.gable = 3;
  spec.hip = 3;
  spec.points = 8;
  const auto split = split_dataset(make_dataset(spec, 1), 0.2, 7);
  CHECK(split.train.size() == 8);
  CHECK(split.holdout.size() == 2);
  std::set<std::string> ids;
  for (const auto& s : split.train) ids.insert(s.id);
  for (const auto& s : split.holdout) ids.insert(s.id);
  CHECK(ids.size() == 10);
  const auto again = split_dataset(make_dataset(spec, 1), 0.2, 7);
  CHECK(again.holdout[0].id == split.holdout[0].id);
  CHECK_THROWS_AS(split_dataset({}, 1.0, 1), InvalidArgument);
}

TEST_CASE("training is bitwise reproducible") {
  const TrainConfig cfg = tiny_config();
  const TrainResult a = train(cfg);
  const TrainResult b = train(cfg);
  REQUIRE(a.log.size() == 2);
  REQUIRE(b.log.size() == 2);
  CHECK(!a.numeric_failure);
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(format_epoch(a.log[e]) == format_epoch(b.log[e]));
    CHECK(a.log[e].holdout.has_value());
  }
  for (std::size_t p = 0; p < a.model.parameters().size(); ++p) {
    const auto va = a.model.parameters().entries()[p].tensor.values();
    const auto vb = b.model.parameters().entries()[p].tensor.values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin()));
  }
}

TEST_CASE("one epoch lowers the training loss") {
  TrainConfig cfg = tiny_config();
  cfg.data = DatasetSpec{1, 2, 1, 32, 0.01, true};
  cfg.epochs = 1;
  cfg.batch = 1;
  const auto samples = make_dataset(cfg.data, 11);
  const double before = mean_loss(initial_model(cfg), samples, cfg.loss);
  const TrainResult r = train(cfg, samples, {});
  const double after = mean_loss(r.model, samples, cfg.loss);
  CHECK(after < before);
  CHECK(r.log.size() == 1);
  CHECK(!r.log[0].holdout.has_value());
}

TEST_CASE("epoch log format") {
  EpochLog e;
  e.epoch = 3;
  e.loss = 0.5;
  e.lr = 0.001;
  CHECK(format_epoch(e) == "3,0.5,0.001");
  MetricReport r;
  r.cf1 = 80;
  r.aco = 0.04;
  e.holdout = r;
  CHECK(format_epoch(e) == "3,0.5,0.001,80,0.04");
}

TEST_CASE("divergence stops the run cleanly") {
  TrainConfig cfg = tiny_config();
  cfg.schedule.max_lr = 1e300;
  cfg.schedule.initial_div = 1.0;
  cfg.epochs = 3;
  const TrainResult r = train(cfg);
  CHECK(r.numeric_failure.has_value());
  CHECK(r.log.size() < 3);
  for (const auto& e : r.model.parameters().entries()) {
    for (double v : e.tensor.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("ablation variants are cumulative") {
  const auto v = ablation_variants(ModelConfig::tiny());
  REQUIRE(v.size() == 4);
  CHECK(!v[0].second.point_transformer);
  CHECK(!v[0].second.cgnn_sa2);
  CHECK(v[1].second.cgnn_sa2);
  CHECK(!v[1].second.point_transformer);
  CHECK(v[2].second.point_transformer);
  CHECK(!v[2].second.sa4_guided);
  CHECK(v[3].second.sa4_guided);
}

TEST_CASE("ablation table") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  const std::vector<std::uint64_t> seeds{1};
  const auto rows = ablate(cfg, seeds);
  REQUIRE(rows.size() == 4);
  const std::string table = format_ablation(rows);
  CHECK(table.rfind("architecture,cp,cr,f1\npointnet2,", 0) == 0);
  std::size_t lines = 0;
  for (char ch : table) lines += ch == '\n';
  CHECK(lines == 5);
  CHECK(format_ablation(ablate(cfg, seeds)) == table);
}
