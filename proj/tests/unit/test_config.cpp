#include <doctest.h>

#include "recovermark/config.hpp"

using namespace recovermark;

TEST_CASE("config parsing") {
  const RunConfig c = parse_config(
      "# toy run\n"
      "epochs = 12\n"
      "learning_rate = 1e-3   # faster\n"
      "final_learning_rate = 1e-5\n"
      "seed = 42\n"
      "distortion_order = jpeg, regen, lowpass\n"
      "cumulative = false\n"
      "localization_channels = max\n"
      "tamper = constant_fill\n"
      "attack.mild = noise:0.01\n"
      "attack.combo = jpeg:75;lowpass:1.0\n"
      "plugin.lattice = /opt/lattice\n");
  CHECK(c.train.epochs == 12);
  CHECK(c.train.learning_rate == 1e-3);
  CHECK(c.train.final_learning_rate == 1e-5);
  CHECK(c.train.seed == 42);
  CHECK(c.eval.seed == 42);
  CHECK(c.train.distortion_order ==
        std::vector<DistortionKind>{DistortionKind::Jpeg, DistortionKind::Regeneration, DistortionKind::LowPass});
  CHECK_FALSE(c.train.cumulative);
  CHECK(c.eval.localization.max_over_channels);
  CHECK(c.eval.tamper == TamperKind::ConstantFill);
  const auto attacks = c.attack_list();
  REQUIRE(attacks.size() == 2);
  CHECK(attacks[0].name == "mild");
  CHECK(attacks[1].chain.size() == 2);
  CHECK(c.attack_context(nullptr).plugins.at("lattice").executable == "/opt/lattice");
}

TEST_CASE("config defaults and digest") {
  const RunConfig d = parse_config("");
  CHECK(d.train.epochs == 200);
  CHECK(d.train.batch_size == 8);
  CHECK(d.train.learning_rate == 2e-4);
  CHECK(d.train.final_learning_rate == 0.0);
  CHECK(d.attack_list().size() == default_attacks().size());
  CHECK(parse_config("").digest() == d.digest());
  CHECK(parse_config("epochs = 200").digest() == d.digest());
  CHECK(parse_config("epochs = 201").digest() != d.digest());
  CHECK(parse_config(d.canonical()).canonical() == d.canonical());
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("epochs = 1\nepochs = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("final_learning_rate = 0.01\n"), ConfigError);  // above learning_rate
  CHECK_THROWS_AS(parse_config("cumulative = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("distortion_order = blur\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("attack.x = jpeg:500\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("capacity_fractions = 0.1, 1.2\n"), ConfigError);
  try {
    parse_config("foo = 1\nbar = 2\n");
    FAIL("unknown keys accepted");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("foo") != std::string::npos);
    CHECK(msg.find("bar") != std::string::npos);
  }
}
