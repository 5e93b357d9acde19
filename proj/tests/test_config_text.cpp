#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <string>
#include <vector>

#include "doctest.h"
#include "msdcnn/config_text.hpp"
#include "msdcnn/errors.hpp"

using namespace msdcnn;

TEST_CASE("key=value parsing handles comments, blanks and CRLF") {
  const KeyValueText kv = KeyValueText::parse(
      "# header comment\n"
      "alpha=1\n"
      "\n"
      "  beta = two words \r\n"
      "   # indented comment\n"
      "gamma=\n");
  CHECK(kv.has("alpha"));
  CHECK(kv.get_int("alpha") == 1);
  CHECK(kv.get_string("beta") == "two words");
  CHECK(kv.get_string("gamma").empty());
  CHECK_FALSE(kv.has("delta"));

  CHECK_THROWS_AS(KeyValueText::parse("no equals sign\n"), FormatError);
  CHECK_THROWS_AS(KeyValueText::parse("=value\n"), FormatError);
}

TEST_CASE("serialization keeps insertion order and round-trips") {
  KeyValueText kv;
  kv.set("zebra", "1");
  kv.set("apple", "2");
  kv.set("zebra", "3");  // reassignment keeps the original position
  CHECK(kv.serialize() == "zebra=3\napple=2\n");

  const KeyValueText back = KeyValueText::parse(kv.serialize());
  CHECK(back.get_int("zebra") == 3);
  CHECK(back.get_int("apple") == 2);
}

TEST_CASE("typed getters validate their values") {
  const KeyValueText kv = KeyValueText::parse(
      "count=42\n"
      "rate=0.25\n"
      "neg=-7\n"
      "yes=true\n"
      "no=0\n"
      "word=hello\n");
  CHECK(kv.get_int("count") == 42);
  CHECK(kv.get_int("neg") == -7);
  CHECK(kv.get_double("rate") == 0.25);
  CHECK(kv.get_double("count") == 42.0);
  CHECK(kv.get_bool("yes"));
  CHECK_FALSE(kv.get_bool("no"));

  CHECK_THROWS_AS(kv.get_string("missing"), FormatError);
  CHECK_THROWS_AS(kv.get_int("word"), FormatError);
  CHECK_THROWS_AS(kv.get_int("rate"), FormatError);
  CHECK_THROWS_AS(kv.get_double("word"), FormatError);
  CHECK_THROWS_AS(kv.get_bool("word"), FormatError);
}

TEST_CASE("layer pattern words encode one letter per layer") {
  const std::vector<std::vector<LayerKind>> two = {
      {LayerKind::dilated, LayerKind::normal, LayerKind::dilated,
       LayerKind::normal},
      {LayerKind::dilated, LayerKind::normal, LayerKind::dilated,
       LayerKind::normal}};
  CHECK(patterns_to_string(two) == "dndn,dndn");
  CHECK(patterns_from_string("dndn,dndn") == two);

  const std::vector<std::vector<LayerKind>> uneven = {
      {LayerKind::normal}, {LayerKind::dilated, LayerKind::dilated}};
  CHECK(patterns_from_string(patterns_to_string(uneven)) == uneven);

  CHECK(patterns_from_string("").empty());
  CHECK_THROWS_AS(patterns_from_string("dxd"), FormatError);
}

TEST_CASE("learning-rate phase lists round-trip") {
  const std::vector<LrPhase> phases = {
      {1, 50, 1e-3}, {51, 80, 1e-4}, {81, 100, 1e-5}};
  const std::string text = lr_phases_to_string(phases);
  CHECK(text == "1-50:0.001,51-80:0.0001,81-100:1e-05");

  const std::vector<LrPhase> back = lr_phases_from_string(text);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].first_epoch == phases[i].first_epoch);
    CHECK(back[i].last_epoch == phases[i].last_epoch);
    CHECK(back[i].rate == phases[i].rate);
  }

  CHECK_THROWS_AS(lr_phases_from_string("1:0.001"), FormatError);
  CHECK_THROWS_AS(lr_phases_from_string("1-50"), FormatError);
  CHECK_THROWS_AS(lr_phases_from_string("a-b:c"), FormatError);
}

TEST_CASE("network config survives a text round trip exactly") {
  NetworkConfig config;
  config.measurement_rate = 0.1;  // not representable in short decimal
  config.block_size = 16;
  config.mfe_channels = 3;
  config.layers_per_channel = 4;
  config.filters_per_layer = 32;
  config.fusion_filters = 32;
  config.head_kernel = 3;

  KeyValueText kv;
  write_network_config(kv, config);
  const NetworkConfig back =
      read_network_config(KeyValueText::parse(kv.serialize()));
  CHECK(back.measurement_rate == config.measurement_rate);
  CHECK(back.block_size == config.block_size);
  CHECK(back.mfe_channels == config.mfe_channels);
  CHECK(back.layers_per_channel == config.layers_per_channel);
  CHECK(back.filters_per_layer == config.filters_per_layer);
  CHECK(back.fusion_filters == config.fusion_filters);
  CHECK(back.head_kernel == config.head_kernel);
  // The written patterns equal the effective defaults for three channels.
  CHECK(patterns_to_string(back.effective_patterns()) == "dndn,dndn,dndn");

  // Missing keys keep defaults.
  const NetworkConfig sparse =
      read_network_config(KeyValueText::parse("mfe_channels=1\n"));
  CHECK(sparse.mfe_channels == 1);
  CHECK(sparse.block_size == NetworkConfig{}.block_size);
  CHECK(sparse.measurement_rate == NetworkConfig{}.measurement_rate);
}

TEST_CASE("train plan survives a text round trip") {
  TrainPlan plan;
  plan.epochs = 100;
  plan.batch_size = 16;
  plan.patch_size = 64;
  plan.seed = 1234567;
  plan.augmentation_enabled = false;
  plan.patches_per_epoch = 320;

  KeyValueText kv;
  write_train_plan(kv, plan);
  const TrainPlan back = read_train_plan(KeyValueText::parse(kv.serialize()));
  CHECK(back.epochs == plan.epochs);
  CHECK(back.batch_size == plan.batch_size);
  CHECK(back.patch_size == plan.patch_size);
  CHECK(back.seed == plan.seed);
  CHECK(back.augmentation_enabled == plan.augmentation_enabled);
  CHECK(back.patches_per_epoch == plan.patches_per_epoch);
  REQUIRE(back.lr_phases.size() == 3);
  CHECK(back.lr_phases[0].rate == 1e-3);
  CHECK(back.lr_phases[2].last_epoch == 100);
  back.validate();
}

TEST_CASE("overriding epochs alone rescales the default schedule") {
  // 20 epochs compress the 50/30/20 split to 10/6/4.
  const TrainPlan twenty = read_train_plan(KeyValueText::parse("epochs=20\n"));
  twenty.validate();
  REQUIRE(twenty.lr_phases.size() == 3);
  CHECK(twenty.lr_phases[0].first_epoch == 1);
  CHECK(twenty.lr_phases[0].last_epoch == 10);
  CHECK(twenty.lr_phases[0].rate == 1e-3);
  CHECK(twenty.lr_phases[1].first_epoch == 11);
  CHECK(twenty.lr_phases[1].last_epoch == 16);
  CHECK(twenty.lr_phases[1].rate == 1e-4);
  CHECK(twenty.lr_phases[2].first_epoch == 17);
  CHECK(twenty.lr_phases[2].last_epoch == 20);
  CHECK(twenty.lr_phases[2].rate == 1e-5);

  // A single epoch still yields a valid one-phase schedule.
  const TrainPlan one = read_train_plan(KeyValueText::parse("epochs=1\n"));
  one.validate();
  CHECK(lr_at_epoch(one, 1) == 1e-3);

  // An explicit schedule wins over the proportional re-split.
  const TrainPlan explicit_plan = read_train_plan(
      KeyValueText::parse("epochs=4\nlr_phases=1-4:0.5\n"));
  explicit_plan.validate();
  REQUIRE(explicit_plan.lr_phases.size() == 1);
  CHECK(explicit_plan.lr_phases[0].rate == 0.5);
}
