#include <doctest.h>

#include <string>

#include "sage3d/config.hpp"
#include "sage3d/errors.hpp"
#include "sage3d/train.hpp"

using namespace sage3d;

TEST_CASE("defaults map onto the desk configuration") {
  const Config c = Config::defaults();
  const TrainConfig t = train_config_from(c);
  CHECK(t.epochs == 30);
  CHECK(t.batch == 8);
  CHECK(t.data.total() == 200);
  CHECK(t.data.points == 256);
  CHECK(t.data.noise == 0.01);
  CHECK(t.model.level_sizes() == std::array<std::size_t, 5>{256, 64, 32, 16, 4});
  CHECK(t.model.msg_k == std::vector<std::size_t>{16, 32});
  CHECK(t.schedule.max_lr == 0.01);
  CHECK(t.adamw.weight_decay == 0.01);
  CHECK(t.loss.alpha == 0.25);
  CHECK(t.post.tau == 0.3);
  CHECK(t.match_threshold == 0.1);
  CHECK(t.holdout == 0.2);
}

TEST_CASE("file syntax with comments and overrides") {
  Config c = Config::defaults();
  c.merge_text("# desk run\n\ntrain.epochs = 3   # short\n  model.widths=8, 8,16,16\n", "test.cfg");
  c.apply_override("loss.gamma=1.5");
  CHECK(c.get_count("train.epochs") == 3);
  CHECK(c.get_counts("model.widths") == std::vector<std::size_t>{8, 8, 16, 16});
  CHECK(c.get_real("loss.gamma") == 1.5);
}

TEST_CASE("unknown keys list the valid ones") {
  Config c = Config::defaults();
  try {
    c.apply_override("train.epoch=3");
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("train.epoch'") != std::string::npos);
    CHECK(msg.find("train.epochs") != std::string::npos);
    CHECK(msg.find("loss.d_thresh") != std::string::npos);
  }
  try {
    c.merge_text("seed = 1\nbogus = 2\n", "x.cfg");
    FAIL("expected an error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(c.merge_text("no equals sign\n", "x.cfg"), ParseError);
  CHECK_THROWS_AS(c.apply_override("seed"), InvalidArgument);
}

TEST_CASE("typed getters validate") {
  Config c = Config::defaults();
  c.set("train.epochs", "three");
  CHECK_THROWS_AS(c.get_count("train.epochs"), InvalidArgument);
  c.set("data.walls", "maybe");
  CHECK_THROWS_AS(c.get_bool("data.walls"), InvalidArgument);
  c.set("loss.alpha", "inf");
  CHECK_THROWS_AS(c.get_real("loss.alpha"), InvalidArgument);
  c.set("model.widths", "8,,8");
  CHECK_THROWS_AS(c.get_counts("model.widths"), InvalidArgument);
}

TEST_CASE("train config validation") {
  Config c = Config::defaults();
  c.set("train.batch", "0");
  CHECK_THROWS_AS(train_config_from(c), InvalidArgument);
  c = Config::defaults();
  c.set("model.factors", "4,2,2");
  CHECK_THROWS_AS(train_config_from(c), InvalidArgument);
  c = Config::defaults();
  c.set("train.holdout", "1");
  CHECK_THROWS_AS(train_config_from(c), InvalidArgument);
}

TEST_CASE("dump round trips") {
  Config c = Config::defaults();
  c.apply_override("seed=42");
  Config d = Config::defaults();
  d.merge_text(c.dump(), "effective.cfg");
  CHECK(d.dump() == c.dump());
  CHECK(d.get_u64("seed") == 42);
}
