#include <doctest.h>

#include <string>

#include "inatlas/config.hpp"
#include "inatlas/errors.hpp"

using namespace inatlas;

TEST_CASE("empty text yields the profile defaults") {
  const auto cfg = config::parse_config("", "desk");
  CHECK(cfg.train.lr_network == doctest::Approx(1e-4));
  CHECK(cfg.train.lr_latent == doctest::Approx(5e-4));
  CHECK(cfg.train.lr_rigid == doctest::Approx(7.5e-3));
  CHECK(cfg.train.batch_coords == 4096);
  CHECK(cfg.model.hidden_width == 128);
  CHECK(cfg.model.hidden_layers == 3);
  CHECK(cfg.adapt.epochs == 10);
  CHECK(cfg.adapt.holdout_fraction == doctest::Approx(0.10));
  CHECK(cfg.atlas.sigma_weeks == doctest::Approx(0.5));

  const auto paper = config::parse_config("", "paper");
  CHECK(paper.model.hidden_width == 1024);
  CHECK(paper.model.hidden_layers == 5);
  CHECK(paper.model.latent_channels == 256);
  CHECK(paper.train.batch_coords == 25000);
  CHECK(paper.train.epochs == 1);
  CHECK(paper.model.modulated_layers == std::vector<int>{1, 3, 5});
}

TEST_CASE("overrides propagate") {
  const std::string text = R"(
seed = 99

[atlas]
sigma_weeks = 0.25

[model]
latent_channels = 16
conditions = lv_fraction, cc_acc

[train]
epochs = 3
precision = double
)";
  const auto cfg = config::parse_config(text, "desk");
  CHECK(cfg.seed == 99);
  CHECK(cfg.atlas.sigma_weeks == doctest::Approx(0.25));
  CHECK(cfg.model.latent_channels == 16);
  CHECK(cfg.model.condition_names == std::vector<std::string>{"lv_fraction", "cc_acc"});
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.double_precision);
}

TEST_CASE("unknown keys are rejected by name") {
  try {
    (void)config::parse_config("[model]\nlatnet_dim = 4\n", "desk");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("latnet_dim") != std::string::npos);
  }
}

TEST_CASE("duplicate keys are parse errors with the line number") {
  try {
    (void)config::parse_config("[train]\nepochs = 1\nepochs = 2\n", "desk");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("malformed lines carry their line number") {
  try {
    (void)config::parse_config("[train]\nthis is not a key value pair\n", "desk");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("unknown sections and bad values are rejected") {
  CHECK_THROWS_AS((void)config::parse_config("[nonsense]\nx = 1\n", "desk"), ConfigError);
  CHECK_THROWS_AS((void)config::parse_config("[train]\nepochs = banana\n", "desk"), ConfigError);
  CHECK_THROWS_AS((void)config::parse_config("", "laptop"), ConfigError);
}

TEST_CASE("config snapshot round-trips") {
  auto cfg = config::default_config("desk");
  cfg.seed = 1234;
  cfg.model.condition_names = {"lv_fraction"};
  cfg.atlas.sigma_weeks = 0.3;
  const auto text = config::to_text(cfg);
  const auto back = config::parse_config(text, "desk");
  CHECK(back.seed == 1234);
  CHECK(back.model.condition_names == cfg.model.condition_names);
  CHECK(back.atlas.sigma_weeks == doctest::Approx(0.3));
  CHECK(back.train.batch_coords == cfg.train.batch_coords);
}
