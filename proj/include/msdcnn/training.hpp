#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "msdcnn/data_io.hpp"
#include "msdcnn/network.hpp"
#include "msdcnn/tensor.hpp"

namespace msdcnn {

struct LrPhase {
  int first_epoch = 1;
  int last_epoch = 1;
  double rate = 1e-3;
};

struct TrainPlan {
  int epochs = 100;
  // Defaults follow the three-phase schedule 1e-3 / 1e-4 / 1e-5.
  std::vector<LrPhase> lr_phases = {
      {1, 50, 1e-3}, {51, 80, 1e-4}, {81, 100, 1e-5}};
  int batch_size = 64;
  int patch_size = 96;  // must be a multiple of the network block size
  std::uint64_t seed = 0;
  bool augmentation_enabled = true;
  // One epoch consumes this many sampled patches.
  int patches_per_epoch = 6400;

  // Phases must be contiguous, non-overlapping, and cover 1..epochs.
  void validate() const;
};

double lr_at_epoch(const TrainPlan& plan, int epoch);

// Zero-mean normal entries with variance 2/fan_in; deterministic per seed.
Tensor he_init(const Dims4& shape, std::int64_t fan_in, std::uint64_t seed);

struct AdamState {
  std::vector<Tensor> m;  // first moments, aligned with the parameter list
  std::vector<Tensor> v;  // second moments
  std::int64_t t = 0;     // global step counter
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(const std::vector<NamedParam>& params);
};

// One bias-corrected Adam update over the whole parameter list; increments
// state.t by exactly 1.  A non-finite gradient aborts the step (no tensor is
// touched) with a diagnostic naming the parameter.
void adam_step(std::vector<NamedParam>& params,
               const std::vector<Tensor>& grads, AdamState& state, double lr);

// The dihedral group of a square patch: rotations and horizontal-flip
// compositions, eight elements including identity.
enum class Augment {
  none,
  rot90,
  rot180,
  rot270,
  flip_h,
  flip_h_rot90,
  flip_h_rot180,
  flip_h_rot270,
};
inline constexpr int kAugmentCount = 8;

// Exact pixel permutation; rotations require square spatial dims.
Tensor augment(const Tensor& image, Augment transform);

// Loads the train split of a manifest once and serves random crops.
class PatchSampler {
 public:
  PatchSampler(const DatasetManifest& manifest, int min_size);

  // `count` patches as one (count, 1, patch, patch) tensor.  Deterministic
  // per seed: patch k of seed s never depends on count or earlier calls.
  Tensor sample(int patch_size, int count, std::uint64_t seed,
                bool augmentation) const;

  std::size_t usable_images() const { return images_.size(); }

 private:
  std::vector<Tensor> images_;
};

// Convenience one-shot wrapper over PatchSampler.
Tensor sample_patches(const DatasetManifest& manifest, int patch_size,
                      int count, std::uint64_t seed,
                      bool augmentation = true);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double val_ssim = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  // One tab-separated line per epoch: epoch, lr, loss, val_psnr, val_ssim.
  void write_log(std::ostream& out) const;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
  // True when a non-finite loss aborted training; the checkpoint is then the
  // last one taken after a completed epoch (or the initial state).
  bool aborted_on_non_finite = false;
};

// Joint end-to-end training of measurement and reconstruction.  Evaluates
// validation PSNR/SSIM after every epoch; returns the final-epoch
// checkpoint.  Progress lines go to `log` when non-null (stderr in the CLI).
TrainResult train(const NetworkConfig& config, const TrainPlan& plan,
                  const DatasetManifest& train_manifest,
                  const DatasetManifest& val_manifest,
                  std::ostream* log = nullptr);

}  // namespace msdcnn
