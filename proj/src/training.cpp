#include "msdcnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <ostream>

#include "msdcnn/metrics.hpp"
#include "msdcnn/rng.hpp"

namespace msdcnn {

void TrainPlan::validate() const {
  if (epochs < 1) throw UsageError("train plan: epochs must be >= 1");
  if (batch_size < 1) throw UsageError("train plan: batch_size must be >= 1");
  if (patch_size < 1) throw UsageError("train plan: patch_size must be >= 1");
  if (patches_per_epoch < 1) {
    throw UsageError("train plan: patches_per_epoch must be >= 1");
  }
  if (lr_phases.empty()) throw UsageError("train plan: no learning-rate phases");
  int expected_start = 1;
  for (const LrPhase& phase : lr_phases) {
    if (phase.first_epoch != expected_start) {
      throw UsageError("train plan: phases must be contiguous from epoch 1; "
                       "phase starts at " +
                       std::to_string(phase.first_epoch) + ", expected " +
                       std::to_string(expected_start));
    }
    if (phase.last_epoch < phase.first_epoch) {
      throw UsageError("train plan: phase range " +
                       std::to_string(phase.first_epoch) + "-" +
                       std::to_string(phase.last_epoch) + " is empty");
    }
    if (!(phase.rate > 0.0)) {
      throw UsageError("train plan: learning rates must be positive");
    }
    expected_start = phase.last_epoch + 1;
  }
  if (expected_start != epochs + 1) {
    throw UsageError("train plan: phases cover 1-" +
                     std::to_string(expected_start - 1) + " but epochs = " +
                     std::to_string(epochs));
  }
}

double lr_at_epoch(const TrainPlan& plan, int epoch) {
  if (epoch < 1 || epoch > plan.epochs) {
    throw UsageError("lr_at_epoch: epoch " + std::to_string(epoch) +
                     " outside 1-" + std::to_string(plan.epochs));
  }
  for (const LrPhase& phase : plan.lr_phases) {
    if (epoch >= phase.first_epoch && epoch <= phase.last_epoch) {
      return phase.rate;
    }
  }
  throw UsageError("lr_at_epoch: no phase covers epoch " +
                   std::to_string(epoch));
}

Tensor he_init(const Dims4& shape, std::int64_t fan_in, std::uint64_t seed) {
  if (fan_in < 1) throw UsageError("he_init: fan_in must be >= 1");
  Tensor t(shape);
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.next_normal() * stddev;
  return t;
}

AdamState AdamState::init(const std::vector<NamedParam>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const NamedParam& p : params) {
    state.m.emplace_back(p.tensor->dims);
    state.v.emplace_back(p.tensor->dims);
  }
  return state;
}

void adam_step(std::vector<NamedParam>& params,
               const std::vector<Tensor>& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw UsageError("adam_step: lr must be positive");
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw UsageError("adam_step: parameter/gradient/state counts differ");
  }
  // Validate everything before touching any tensor, so a bad gradient aborts
  // the whole step cleanly.
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(grads[i].dims == params[i].tensor->dims)) {
      throw DimensionError("adam_step: gradient for '" + params[i].name +
                           "' has dims " + to_string(grads[i].dims) +
                           ", parameter has " +
                           to_string(params[i].tensor->dims));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: non-finite gradient for parameter '" +
                         params[i].name + "'");
    }
  }

  state.t += 1;
  const double bc1 =
      1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 =
      1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    const Tensor& g = grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      m.data[k] = state.beta1 * m.data[k] + (1.0 - state.beta1) * g.data[k];
      v.data[k] =
          state.beta2 * v.data[k] + (1.0 - state.beta2) * g.data[k] * g.data[k];
      const double m_hat = m.data[k] / bc1;
      const double v_hat = v.data[k] / bc2;
      p.data[k] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

namespace {

Tensor flip_horizontal(const Tensor& in) {
  Tensor out(in.dims);
  for (std::int64_t b = 0; b < in.dims.n; ++b) {
    for (std::int64_t c = 0; c < in.dims.c; ++c) {
      for (std::int64_t y = 0; y < in.dims.h; ++y) {
        for (std::int64_t x = 0; x < in.dims.w; ++x) {
          out.at(b, c, y, x) = in.at(b, c, y, in.dims.w - 1 - x);
        }
      }
    }
  }
  return out;
}

// 90 degrees counterclockwise; spatial dims swap.
Tensor rotate90(const Tensor& in) {
  Tensor out(Dims4{in.dims.n, in.dims.c, in.dims.w, in.dims.h});
  for (std::int64_t b = 0; b < in.dims.n; ++b) {
    for (std::int64_t c = 0; c < in.dims.c; ++c) {
      for (std::int64_t y = 0; y < out.dims.h; ++y) {
        for (std::int64_t x = 0; x < out.dims.w; ++x) {
          out.at(b, c, y, x) = in.at(b, c, x, in.dims.w - 1 - y);
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor augment(const Tensor& image, Augment transform) {
  switch (transform) {
    case Augment::none:
      return image;
    case Augment::rot90:
      return rotate90(image);
    case Augment::rot180:
      return rotate90(rotate90(image));
    case Augment::rot270:
      return rotate90(rotate90(rotate90(image)));
    case Augment::flip_h:
      return flip_horizontal(image);
    case Augment::flip_h_rot90:
      return rotate90(flip_horizontal(image));
    case Augment::flip_h_rot180:
      return rotate90(rotate90(flip_horizontal(image)));
    case Augment::flip_h_rot270:
      return rotate90(rotate90(rotate90(flip_horizontal(image))));
  }
  throw UsageError("augment: unknown transform");
}

PatchSampler::PatchSampler(const DatasetManifest& manifest, int min_size) {
  if (min_size < 1) throw UsageError("patch sampler: min_size must be >= 1");
  std::vector<ManifestEntry> entries = manifest.split(Split::train);
  if (entries.empty()) entries = manifest.entries;
  if (entries.empty()) {
    throw UsageError("patch sampler: manifest has no entries");
  }
  for (const ManifestEntry& entry : entries) {
    Tensor image = load_grayscale(entry.path);
    if (image.dims.h < min_size || image.dims.w < min_size) {
      std::cerr << "warning: skipping " << entry.path.string() << " ("
                << image.dims.h << "x" << image.dims.w
                << " is smaller than patch size " << min_size << ")\n";
      continue;
    }
    images_.push_back(std::move(image));
  }
  if (images_.empty()) {
    throw UsageError("patch sampler: no image is at least " +
                     std::to_string(min_size) + "x" + std::to_string(min_size));
  }
}

Tensor PatchSampler::sample(int patch_size, int count, std::uint64_t seed,
                            bool augmentation) const {
  if (patch_size < 1 || count < 1) {
    throw UsageError("patch sampler: patch_size and count must be >= 1");
  }
  for (const Tensor& image : images_) {
    if (image.dims.h < patch_size || image.dims.w < patch_size) {
      throw UsageError("patch sampler: an image is smaller than patch size " +
                       std::to_string(patch_size));
    }
  }
  Tensor batch(Dims4{count, 1, patch_size, patch_size});
  for (int k = 0; k < count; ++k) {
    // One independent stream per patch index: batches are reproducible and
    // patch k never depends on count.
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    const Tensor& image =
        images_[static_cast<std::size_t>(rng.next_below(images_.size()))];
    const std::int64_t y0 = static_cast<std::int64_t>(
        rng.next_below(static_cast<std::uint64_t>(image.dims.h - patch_size + 1)));
    const std::int64_t x0 = static_cast<std::int64_t>(
        rng.next_below(static_cast<std::uint64_t>(image.dims.w - patch_size + 1)));
    Tensor patch(Dims4{1, 1, patch_size, patch_size});
    for (std::int64_t y = 0; y < patch_size; ++y) {
      for (std::int64_t x = 0; x < patch_size; ++x) {
        patch.at(0, 0, y, x) = image.at(0, 0, y0 + y, x0 + x);
      }
    }
    if (augmentation) {
      patch = augment(
          patch, static_cast<Augment>(rng.next_below(kAugmentCount)));
    }
    std::copy(patch.data.begin(), patch.data.end(),
              batch.data.begin() +
                  static_cast<std::int64_t>(k) * patch_size * patch_size);
  }
  return batch;
}

Tensor sample_patches(const DatasetManifest& manifest, int patch_size,
                      int count, std::uint64_t seed, bool augmentation) {
  PatchSampler sampler(manifest, patch_size);
  return sampler.sample(patch_size, count, seed, augmentation);
}

void TrainHistory::write_log(std::ostream& out) const {
  for (const EpochRecord& r : records) {
    out << r.epoch << '\t' << r.lr << '\t' << std::setprecision(10)
        << r.train_loss << '\t' << std::setprecision(6) << r.val_psnr << '\t'
        << r.val_ssim << '\n';
  }
}

namespace {

Tensor scaled_255(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data) v *= 255.0;
  return out;
}

}  // namespace

TrainResult train(const NetworkConfig& config, const TrainPlan& plan,
                  const DatasetManifest& train_manifest,
                  const DatasetManifest& val_manifest, std::ostream* log) {
  config.validate();
  plan.validate();
  if (plan.patch_size % config.block_size != 0) {
    throw GeometryError("train: patch_size " + std::to_string(plan.patch_size) +
                        " is not a multiple of block_size " +
                        std::to_string(config.block_size));
  }

  PatchSampler sampler(train_manifest, plan.patch_size);

  std::vector<ManifestEntry> val_entries = val_manifest.split(Split::val);
  if (val_entries.empty()) val_entries = val_manifest.entries;
  if (val_entries.empty()) {
    throw UsageError("train: validation manifest has no entries");
  }
  std::vector<Tensor> val_images;
  val_images.reserve(val_entries.size());
  for (const ManifestEntry& entry : val_entries) {
    val_images.push_back(load_grayscale(entry.path));
  }

  Network net = build_network(config, plan.seed);
  std::vector<NamedParam> params = parameters(net);
  AdamState state = AdamState::init(params);

  const int steps_per_epoch =
      std::max(1, plan.patches_per_epoch / plan.batch_size);

  TrainResult result;
  result.checkpoint = Checkpoint::from_network(net, 0, plan.seed);
  std::uint64_t step_index = 0;
  for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(plan, epoch);
    double loss_sum = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      const Tensor batch = sampler.sample(plan.patch_size, plan.batch_size,
                                          derive_seed(plan.seed, step_index),
                                          plan.augmentation_enabled);
      ++step_index;
      NetForwardCache cache = forward_train(net, batch);
      MseResult loss = mse_loss(cache.output, batch);
      if (!std::isfinite(loss.loss)) {
        if (log) {
          *log << "train: non-finite loss at epoch " << epoch << " step "
               << s + 1 << "; stopping with the epoch-"
               << result.checkpoint.epoch << " checkpoint\n";
        }
        result.aborted_on_non_finite = true;
        return result;
      }
      loss_sum += loss.loss;
      const std::vector<Tensor> grads = backward(net, cache, loss.grad_pred);
      adam_step(params, grads, state, lr);
    }

    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const Tensor& image : val_images) {
      const Tensor rec = reconstruct_image(net, image);
      psnr_sum += psnr(scaled_255(rec), scaled_255(image));
      ssim_sum += ssim(scaled_255(rec), scaled_255(image));
    }

    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    record.train_loss = loss_sum / steps_per_epoch;
    record.val_psnr = psnr_sum / static_cast<double>(val_images.size());
    record.val_ssim = ssim_sum / static_cast<double>(val_images.size());
    record.wall_seconds = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - epoch_start)
                              .count();
    result.history.records.push_back(record);
    if (log) {
      *log << "epoch " << epoch << "/" << plan.epochs << " lr " << lr
           << " loss " << record.train_loss << " val_psnr " << record.val_psnr
           << " val_ssim " << record.val_ssim << "\n";
    }
    result.checkpoint = Checkpoint::from_network(net, epoch, plan.seed);
  }
  return result;
}

}  // namespace msdcnn
