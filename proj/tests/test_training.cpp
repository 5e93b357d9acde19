#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "msdcnn/config_text.hpp"
#include "msdcnn/data_io.hpp"
#include "msdcnn/errors.hpp"
#include "msdcnn/network.hpp"
#include "msdcnn/rng.hpp"
#include "msdcnn/training.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace msdcnn;
using testsupport::ScopedTempDir;
using testsupport::synthetic_image;

namespace {

DatasetManifest write_dataset(const ScopedTempDir& dir,
                              const std::vector<std::pair<std::string, Dims4>>&
                                  images,
                              const std::string& manifest_lines) {
  std::uint64_t seed = 100;
  for (const auto& [name, dims] : images) {
    save_grayscale(dir.file(name), synthetic_image(dims.h, dims.w, seed++));
  }
  std::ofstream out(dir.file("set.tsv"));
  out << manifest_lines;
  out.close();
  return load_manifest(dir.file("set.tsv"));
}

NetworkConfig tiny_config() {
  NetworkConfig config;
  config.block_size = 8;
  config.measurement_rate = 0.25;
  config.mfe_channels = 1;
  config.layers_per_channel = 2;
  config.filters_per_layer = 8;
  config.fusion_filters = 8;
  return config;
}

const Tensor* find_tensor(const Checkpoint& ckpt, const std::string& name) {
  for (const NamedTensor& t : ckpt.tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

}  // namespace

TEST_CASE("the learning-rate schedule steps down at phase boundaries") {
  const TrainPlan plan;  // 1-50:1e-3, 51-80:1e-4, 81-100:1e-5
  CHECK(lr_at_epoch(plan, 1) == 1e-3);
  CHECK(lr_at_epoch(plan, 50) == 1e-3);
  CHECK(lr_at_epoch(plan, 51) == 1e-4);
  CHECK(lr_at_epoch(plan, 80) == 1e-4);
  CHECK(lr_at_epoch(plan, 81) == 1e-5);
  CHECK(lr_at_epoch(plan, 100) == 1e-5);
  CHECK_THROWS_AS(lr_at_epoch(plan, 0), UsageError);
  CHECK_THROWS_AS(lr_at_epoch(plan, 101), UsageError);

  // Summing the schedule recovers the 50/30/20 epoch split.
  double total = 0.0;
  for (int e = 1; e <= 100; ++e) total += lr_at_epoch(plan, e);
  CHECK(total == doctest::Approx(50 * 1e-3 + 30 * 1e-4 + 20 * 1e-5)
                     .epsilon(1e-12));
}

TEST_CASE("train plan validation rejects broken schedules") {
  TrainPlan plan;
  plan.validate();  // defaults are coherent

  TrainPlan gap = plan;
  gap.lr_phases = {{1, 50, 1e-3}, {52, 100, 1e-4}};
  CHECK_THROWS_AS(gap.validate(), UsageError);

  TrainPlan overlap = plan;
  overlap.lr_phases = {{1, 50, 1e-3}, {50, 100, 1e-4}};
  CHECK_THROWS_AS(overlap.validate(), UsageError);

  TrainPlan late_start = plan;
  late_start.lr_phases = {{2, 100, 1e-3}};
  CHECK_THROWS_AS(late_start.validate(), UsageError);

  TrainPlan short_cover = plan;
  short_cover.lr_phases = {{1, 50, 1e-3}};
  CHECK_THROWS_AS(short_cover.validate(), UsageError);

  TrainPlan zero_rate = plan;
  zero_rate.lr_phases = {{1, 100, 0.0}};
  CHECK_THROWS_AS(zero_rate.validate(), UsageError);

  TrainPlan no_phases = plan;
  no_phases.lr_phases.clear();
  CHECK_THROWS_AS(no_phases.validate(), UsageError);

  TrainPlan bad_batch = plan;
  bad_batch.batch_size = 0;
  CHECK_THROWS_AS(bad_batch.validate(), UsageError);

  TrainPlan bad_budget = plan;
  bad_budget.patches_per_epoch = 0;
  CHECK_THROWS_AS(bad_budget.validate(), UsageError);
}

TEST_CASE("weight initialization is deterministic with variance 2/fan_in") {
  const Dims4 shape{1, 1, 200, 500};
  const Tensor a = he_init(shape, 288, 9);
  const Tensor b = he_init(shape, 288, 9);
  CHECK(a.data == b.data);
  const Tensor c = he_init(shape, 288, 10);
  CHECK(a.data != c.data);

  double mean = 0.0;
  for (double v : a.data) mean += v;
  mean /= static_cast<double>(a.data.size());
  double var = 0.0;
  for (double v : a.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(a.data.size());
  CHECK(std::abs(mean) < 2e-3);
  CHECK(std::abs(var - 2.0 / 288.0) < 5e-4);

  CHECK_THROWS_AS(he_init(shape, 0, 1), UsageError);
}

TEST_CASE("the first optimizer step matches the closed form") {
  Tensor w(Dims4{1, 1, 1, 2}, {1.0, -3.0});
  std::vector<NamedParam> params{{"w", &w}};
  AdamState state = AdamState::init(params);
  CHECK(state.t == 0);
  REQUIRE(state.m.size() == 1);
  CHECK(state.m[0].dims == w.dims);

  const Tensor grad(Dims4{1, 1, 1, 2}, {1.0, 2.0});
  const double lr = 0.01;
  adam_step(params, {grad}, state, lr);
  CHECK(state.t == 1);

  // With zero state, bias correction makes m_hat = g and v_hat = g*g, so the
  // step is lr * g / (|g| + eps) regardless of the gradient's magnitude.
  CHECK(w.data[0] ==
        doctest::Approx(1.0 - lr * 1.0 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(w.data[1] ==
        doctest::Approx(-3.0 - lr * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("optimizer trajectories match an element-wise reference") {
  Tensor w(Dims4{1, 1, 1, 3}, {0.5, -0.25, 2.0});
  std::vector<NamedParam> params{{"w", &w}};
  AdamState state = AdamState::init(params);

  std::vector<double> ref = w.data;
  std::vector<double> m(3, 0.0), v(3, 0.0);
  Rng rng(21);
  const double lr = 3e-3;
  for (int t = 1; t <= 7; ++t) {
    Tensor grad(w.dims);
    for (double& g : grad.data) g = rng.next_double() * 2.0 - 1.0;

    for (std::size_t k = 0; k < 3; ++k) {
      m[k] = 0.9 * m[k] + 0.1 * grad.data[k];
      v[k] = 0.999 * v[k] + 0.001 * grad.data[k] * grad.data[k];
      const double m_hat = m[k] / (1.0 - std::pow(0.9, t));
      const double v_hat = v[k] / (1.0 - std::pow(0.999, t));
      ref[k] -= lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    }

    adam_step(params, {grad}, state, lr);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(w.data[k] == doctest::Approx(ref[k]).epsilon(1e-12));
    }
  }
  CHECK(state.t == 7);
}

TEST_CASE("a zero gradient leaves parameters untouched") {
  Tensor w(Dims4{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  std::vector<NamedParam> params{{"w", &w}};
  AdamState state = AdamState::init(params);
  const Tensor zero(w.dims);
  adam_step(params, {zero}, state, 0.1);
  CHECK(w.data == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(state.t == 1);
}

TEST_CASE("a non-finite gradient aborts the step before any update") {
  Tensor a(Dims4{1, 1, 1, 2}, {1.0, 2.0});
  Tensor b(Dims4{1, 1, 1, 2}, {3.0, 4.0});
  std::vector<NamedParam> params{{"alpha", &a}, {"beta", &b}};
  AdamState state = AdamState::init(params);

  const Tensor good(a.dims, {0.5, 0.5});
  Tensor bad(b.dims, {0.5, std::nan("")});
  CHECK_THROWS_WITH_AS(adam_step(params, {good, bad}, state, 0.01),
                       doctest::Contains("beta"), NumericError);
  // Even the parameter whose gradient was fine stays untouched.
  CHECK(a.data == std::vector<double>{1.0, 2.0});
  CHECK(b.data == std::vector<double>{3.0, 4.0});
  CHECK(state.t == 0);
  CHECK(state.m[0].data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("optimizer input validation") {
  Tensor w(Dims4{1, 1, 1, 2}, {1.0, 2.0});
  std::vector<NamedParam> params{{"w", &w}};
  AdamState state = AdamState::init(params);
  const Tensor grad(w.dims, {0.1, 0.1});

  CHECK_THROWS_AS(adam_step(params, {grad}, state, 0.0), UsageError);
  CHECK_THROWS_AS(adam_step(params, {grad}, state, -1.0), UsageError);
  CHECK_THROWS_AS(adam_step(params, {}, state, 0.01), UsageError);

  const Tensor wrong(Dims4{1, 1, 2, 1}, {0.1, 0.1});
  CHECK_THROWS_WITH_AS(adam_step(params, {wrong}, state, 0.01),
                       doctest::Contains("w"), DimensionError);
  CHECK(state.t == 0);
}

TEST_CASE("patch augmentation realizes the dihedral group of the square") {
  Tensor patch(Dims4{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(augment(patch, Augment::none).data ==
        std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(augment(patch, Augment::rot90).data ==
        std::vector<double>{2.0, 4.0, 1.0, 3.0});
  CHECK(augment(patch, Augment::rot180).data ==
        std::vector<double>{4.0, 3.0, 2.0, 1.0});
  CHECK(augment(patch, Augment::flip_h).data ==
        std::vector<double>{2.0, 1.0, 4.0, 3.0});

  // On a patch with distinct entries the eight transforms are all distinct,
  // each is a pixel permutation, and the subgroup laws hold.
  Tensor grid(Dims4{1, 1, 4, 4});
  std::iota(grid.data.begin(), grid.data.end(), 0.0);
  std::vector<std::vector<double>> seen;
  for (int k = 0; k < kAugmentCount; ++k) {
    const Tensor out = augment(grid, static_cast<Augment>(k));
    CHECK(out.dims == grid.dims);
    std::vector<double> sorted = out.data;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> expected(16);
    std::iota(expected.begin(), expected.end(), 0.0);
    CHECK(sorted == expected);
    for (const std::vector<double>& prior : seen) CHECK(out.data != prior);
    seen.push_back(out.data);
  }

  Tensor four_turns = grid;
  for (int i = 0; i < 4; ++i) four_turns = augment(four_turns, Augment::rot90);
  CHECK(four_turns.data == grid.data);
  CHECK(augment(augment(grid, Augment::flip_h), Augment::flip_h).data ==
        grid.data);
  CHECK(augment(augment(grid, Augment::flip_h), Augment::rot90).data ==
        augment(grid, Augment::flip_h_rot90).data);

  // Rotating a non-square tensor swaps its spatial dims.
  Tensor wide(Dims4{1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(augment(wide, Augment::rot90).dims == Dims4{1, 1, 3, 2});
}

TEST_CASE("patch sampling is deterministic and count-independent") {
  ScopedTempDir dir;
  const DatasetManifest manifest = write_dataset(
      dir, {{"a.pgm", {1, 1, 24, 24}}, {"b.pgm", {1, 1, 16, 20}}},
      "train\ta.pgm\ntrain\tb.pgm\n");

  PatchSampler sampler(manifest, 8);
  CHECK(sampler.usable_images() == 2);

  const Tensor five = sampler.sample(8, 5, 77, true);
  CHECK(five.dims == Dims4{5, 1, 8, 8});
  for (double v : five.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // Same call, same bytes; patch k does not depend on the batch size.
  const Tensor again = sampler.sample(8, 5, 77, true);
  CHECK(five.data == again.data);
  const Tensor three = sampler.sample(8, 3, 77, true);
  CHECK(std::equal(three.data.begin(), three.data.end(), five.data.begin()));

  const Tensor other_seed = sampler.sample(8, 5, 78, true);
  CHECK(other_seed.data != five.data);

  // With augmentation off the same seed yields the raw crops.
  const Tensor raw = sampler.sample(8, 5, 77, false);
  CHECK(raw.data != five.data);

  // The one-shot wrapper agrees with an explicitly built sampler.
  const Tensor wrapped = sample_patches(manifest, 8, 5, 77, true);
  CHECK(wrapped.data == five.data);
}

TEST_CASE("patch sampling rejects unusable inputs") {
  ScopedTempDir dir;
  const DatasetManifest manifest = write_dataset(
      dir, {{"big.pgm", {1, 1, 24, 24}}, {"tiny.pgm", {1, 1, 4, 4}}},
      "train\tbig.pgm\ntrain\ttiny.pgm\n");

  // The too-small image is skipped at load time with a warning.
  PatchSampler sampler(manifest, 8);
  CHECK(sampler.usable_images() == 1);

  // Asking for patches bigger than the retained images is an error.
  CHECK_THROWS_AS(sampler.sample(32, 1, 1, false), UsageError);
  CHECK_THROWS_AS(sampler.sample(0, 1, 1, false), UsageError);
  CHECK_THROWS_AS(sampler.sample(8, 0, 1, false), UsageError);

  CHECK_THROWS_AS(PatchSampler(manifest, 100), UsageError);
  CHECK_THROWS_AS(PatchSampler(DatasetManifest{}, 8), UsageError);
  CHECK_THROWS_AS(PatchSampler(manifest, 0), UsageError);
}

TEST_CASE("a short training run records history and updates every stage") {
  ScopedTempDir dir;
  const DatasetManifest manifest = write_dataset(
      dir, {{"train.pgm", {1, 1, 32, 32}}, {"val.pgm", {1, 1, 32, 32}}},
      "train\ttrain.pgm\nval\tval.pgm\n");

  const NetworkConfig config = tiny_config();
  TrainPlan plan;
  plan.epochs = 2;
  plan.lr_phases = {{1, 2, 1e-3}};
  plan.batch_size = 4;
  plan.patch_size = 16;
  plan.patches_per_epoch = 8;  // two steps per epoch
  plan.seed = 31;

  const TrainResult result = train(config, plan, manifest, manifest);
  CHECK_FALSE(result.aborted_on_non_finite);
  REQUIRE(result.history.records.size() == 2);
  CHECK(result.history.records[0].epoch == 1);
  CHECK(result.history.records[1].epoch == 2);
  for (const EpochRecord& r : result.history.records) {
    CHECK(r.lr == 1e-3);
    CHECK(std::isfinite(r.train_loss));
    CHECK(r.train_loss > 0.0);
    CHECK(std::isfinite(r.val_psnr));
    CHECK(r.val_psnr > 0.0);
    CHECK(r.val_ssim > -1.0);
    CHECK(r.val_ssim <= 1.0);
    CHECK(r.wall_seconds >= 0.0);
  }

  CHECK(result.checkpoint.epoch == 2);
  CHECK(result.checkpoint.seed == 31);

  // Joint training moves the measurement kernels, not just the decoder.
  const Network fresh = build_network(config, plan.seed);
  const Tensor* trained = find_tensor(result.checkpoint, "measurement.weight");
  REQUIRE(trained != nullptr);
  REQUIRE(trained->dims == fresh.measurement_weight.dims);
  bool moved = false;
  for (std::size_t i = 0; i < trained->data.size(); ++i) {
    if (trained->data[i] !=
        static_cast<double>(static_cast<float>(fresh.measurement_weight.data[i]))) {
      moved = true;
      break;
    }
  }
  CHECK(moved);

  // The log is one tab-separated line per epoch.
  std::ostringstream log;
  result.history.write_log(log);
  const std::string text = log.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.rfind("1\t0.001\t", 0) == 0);
}

TEST_CASE("training on one image reduces the loss") {
  ScopedTempDir dir;
  const DatasetManifest manifest = write_dataset(
      dir, {{"only.pgm", {1, 1, 32, 32}}}, "train\tonly.pgm\n");

  TrainPlan plan;
  plan.epochs = 30;
  plan.lr_phases = {{1, 30, 1e-3}};
  plan.batch_size = 4;
  plan.patch_size = 16;
  plan.patches_per_epoch = 4;  // one step per epoch
  plan.seed = 8;
  plan.augmentation_enabled = false;

  const TrainResult result = train(tiny_config(), plan, manifest, manifest);
  REQUIRE(result.history.records.size() == 30);
  const auto& records = result.history.records;
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 5; ++i) {
    early += records[static_cast<std::size_t>(i)].train_loss;
    late += records[records.size() - 5 + static_cast<std::size_t>(i)].train_loss;
  }
  CHECK(late < early);
}

TEST_CASE("training validates geometry and aborts on numeric blowup") {
  ScopedTempDir dir;
  const DatasetManifest manifest = write_dataset(
      dir, {{"img.pgm", {1, 1, 32, 32}}}, "train\timg.pgm\n");

  TrainPlan plan;
  plan.epochs = 1;
  plan.lr_phases = {{1, 1, 1e-3}};
  plan.batch_size = 2;
  plan.patch_size = 12;  // not a multiple of block_size 8
  plan.patches_per_epoch = 4;
  CHECK_THROWS_AS(train(tiny_config(), plan, manifest, manifest),
                  GeometryError);

  plan.patch_size = 16;
  CHECK_THROWS_AS(train(tiny_config(), plan, manifest, DatasetManifest{}),
                  UsageError);

  // An absurd learning rate overflows the activations; training stops and
  // hands back the last good checkpoint instead of a poisoned one.
  plan.lr_phases = {{1, 1, 1e80}};
  const TrainResult result = train(tiny_config(), plan, manifest, manifest);
  CHECK(result.aborted_on_non_finite);
  CHECK(result.checkpoint.epoch == 0);
  CHECK(result.history.records.empty());
  for (const NamedTensor& t : result.checkpoint.tensors) {
    CHECK(t.value.all_finite());
  }
}
