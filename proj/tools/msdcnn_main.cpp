#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "msdcnn/config_text.hpp"
#include "msdcnn/data_io.hpp"
#include "msdcnn/errors.hpp"
#include "msdcnn/metrics.hpp"
#include "msdcnn/network.hpp"
#include "msdcnn/training.hpp"
#include "verify_suites.hpp"

namespace {

using namespace msdcnn;

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Echo the exact settings a command is about to act on; flags have already
// been folded in at this point.
void echo_config(const NetworkConfig& config, const TrainPlan* plan) {
  KeyValueText kv;
  write_network_config(kv, config);
  if (plan) write_train_plan(kv, *plan);
  std::istringstream lines(kv.serialize());
  std::cerr << "effective configuration:\n";
  for (std::string line; std::getline(lines, line);) {
    std::cerr << "  " << line << "\n";
  }
}

Tensor scaled_255(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data) v *= 255.0;
  return out;
}

struct TrainArgs {
  std::string config_path;
  std::string train_manifest;
  std::string val_manifest;
  std::string out = "model.ckpt";
  std::string history_path;
  std::optional<double> mr;
  std::optional<int> channels;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

int cmd_train(const TrainArgs& args) {
  KeyValueText kv;
  if (!args.config_path.empty()) {
    kv = KeyValueText::parse(read_text_file(args.config_path));
  }
  if (args.mr) kv.set("measurement_rate", format_double(*args.mr));
  if (args.channels) kv.set("mfe_channels", std::to_string(*args.channels));
  if (args.seed) kv.set("seed", std::to_string(*args.seed));
  if (args.epochs) kv.set("epochs", std::to_string(*args.epochs));

  const NetworkConfig config = read_network_config(kv);
  const TrainPlan plan = read_train_plan(kv);
  echo_config(config, &plan);

  const DatasetManifest train_manifest = load_manifest(args.train_manifest);
  const DatasetManifest val_manifest =
      args.val_manifest.empty() ? train_manifest
                                : load_manifest(args.val_manifest);

  const TrainResult result =
      train(config, plan, train_manifest, val_manifest, &std::cerr);
  if (result.aborted_on_non_finite) {
    std::cerr << "warning: training aborted on a non-finite loss; saving the "
                 "epoch-"
              << result.checkpoint.epoch << " checkpoint\n";
  }

  save_checkpoint(result.checkpoint, args.out);
  std::cerr << "checkpoint written to " << args.out << "\n";

  const std::string history_path = args.history_path.empty()
                                       ? args.out + ".history.tsv"
                                       : args.history_path;
  std::ofstream history(history_path, std::ios::binary);
  if (!history) throw IoError("cannot write history log: " + history_path);
  result.history.write_log(history);
  std::cerr << "history written to " << history_path << "\n";
  return 0;
}

struct ReconstructArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
};

int cmd_reconstruct(const ReconstructArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  std::cerr << "checkpoint: epoch " << ckpt.epoch << ", seed " << ckpt.seed
            << "\n";
  echo_config(ckpt.config, nullptr);

  const Network net = ckpt.to_network();
  const Tensor image = load_grayscale(args.input);
  const Tensor reconstruction = reconstruct_image(net, image);
  save_grayscale(args.out, reconstruction);

  std::cerr << "input " << image.dims.h << "x" << image.dims.w
            << ", psnr_vs_input_db="
            << psnr(scaled_255(reconstruction), scaled_255(image)) << "\n";
  std::cerr << "reconstruction written to " << args.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
};

int cmd_eval(const EvalArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  std::cerr << "checkpoint: epoch " << ckpt.epoch << ", seed " << ckpt.seed
            << "\n";
  echo_config(ckpt.config, nullptr);

  const Network net = ckpt.to_network();
  const DatasetManifest manifest = load_manifest(args.manifest);
  std::vector<ManifestEntry> entries = manifest.split(Split::test);
  if (entries.empty()) entries = manifest.entries;
  if (entries.empty()) throw UsageError("eval: manifest has no entries");

  QualityReport report;
  for (const ManifestEntry& entry : entries) {
    const Tensor image = load_grayscale(entry.path);
    const auto start = std::chrono::steady_clock::now();
    const Tensor reconstruction = reconstruct_image(net, image);
    const double millis = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - start)
                              .count();
    QualityRow row;
    row.name = entry.name;
    row.mr = ckpt.config.measurement_rate;
    row.psnr_db = psnr(scaled_255(reconstruction), scaled_255(image));
    row.ssim_value = ssim(scaled_255(reconstruction), scaled_255(image));
    row.millis = millis;
    report.rows.push_back(row);
    std::cerr << "evaluated " << entry.name << "\n";
  }
  report.serialize(std::cout);
  return 0;
}

struct CountArgs {
  int channels = 2;
  std::string pattern = "alternating";
  std::string scope = "mfe";
};

int cmd_count_params(const CountArgs& args) {
  NetworkConfig config;
  config.mfe_channels = args.channels;

  PatternPreset preset;
  if (args.pattern == "alternating") {
    preset = PatternPreset::alternating;
  } else if (args.pattern == "dilated") {
    preset = PatternPreset::dilated;
  } else if (args.pattern == "conv") {
    preset = PatternPreset::conv;
  } else {
    throw UsageError("unknown pattern '" + args.pattern +
                     "' (expected alternating, dilated, or conv)");
  }
  config.channel_patterns =
      make_patterns(preset, config.mfe_channels, config.layers_per_channel);

  CountScope scope;
  if (args.scope == "mfe") {
    scope = CountScope::mfe_only;
  } else if (args.scope == "full") {
    scope = CountScope::full;
  } else {
    throw UsageError("unknown scope '" + args.scope +
                     "' (expected mfe or full)");
  }

  echo_config(config, nullptr);
  std::cout << count_parameters(config, scope) << "\n";
  return 0;
}

int cmd_verify(bool inject_fault) {
  std::cerr << "running oracle suites" << (inject_fault ? " (fault injected)" : "")
            << "\n";
  verify::VerifyOptions options;
  options.inject_fault = inject_fault;
  return verify::run_all(options, std::cout) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training churns through multi-megabyte tensors every step.  Keeping them
  // on the heap instead of per-allocation mmap lets freed blocks be reused
  // with their pages still warm, which removes a page-fault storm per step.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Compressed-sensing image toolkit: learned block measurement "
               "with multi-scale dilated reconstruction"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Train measurement + reconstruction jointly");
  train_cmd->add_option("--config", train_args.config_path,
                        "Key=value config file");
  train_cmd->add_option("--train-manifest", train_args.train_manifest,
                        "Dataset manifest for training patches")
      ->required();
  train_cmd->add_option("--val-manifest", train_args.val_manifest,
                        "Dataset manifest for validation (default: training "
                        "manifest)");
  train_cmd->add_option("--out", train_args.out, "Checkpoint output path");
  train_cmd->add_option("--history", train_args.history_path,
                        "History log path (default: <out>.history.tsv)");
  train_cmd->add_option("--mr", train_args.mr, "Measurement rate override");
  train_cmd->add_option("--channels", train_args.channels,
                        "MFE channel-count override");
  train_cmd->add_option("--seed", train_args.seed, "Seed override");
  train_cmd->add_option("--epochs", train_args.epochs, "Epoch-count override");

  ReconstructArgs rec_args;
  CLI::App* rec_cmd =
      app.add_subcommand("reconstruct", "Reconstruct one image from a checkpoint");
  rec_cmd->add_option("--checkpoint", rec_args.checkpoint, "Trained checkpoint")
      ->required();
  rec_cmd->add_option("--input", rec_args.input, "Input image (PGM/PPM)")
      ->required();
  rec_cmd->add_option("--out", rec_args.out, "Output image path (PGM)")
      ->required();

  EvalArgs eval_args;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint over a manifest");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Trained checkpoint")
      ->required();
  eval_cmd->add_option("--manifest", eval_args.manifest, "Dataset manifest")
      ->required();

  CountArgs count_args;
  CLI::App* count_cmd =
      app.add_subcommand("count-params", "Print a configuration's parameter count");
  count_cmd->add_option("--channels", count_args.channels,
                        "Number of MFE channels");
  count_cmd->add_option("--pattern", count_args.pattern,
                        "Layer pattern: alternating, dilated, or conv");
  count_cmd->add_option("--scope", count_args.scope,
                        "Count scope: mfe (weights only) or full");

  bool inject_fault = false;
  CLI::App* verify_cmd =
      app.add_subcommand("verify", "Run the built-in oracle suites");
  verify_cmd->add_flag("--inject-fault", inject_fault,
                       "Corrupt one gradient to prove the suites can fail")
      ->group("");  // hidden: a test fixture, not an operator feature

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (rec_cmd->parsed()) return cmd_reconstruct(rec_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (count_cmd->parsed()) return cmd_count_params(count_args);
    if (verify_cmd->parsed()) return cmd_verify(inject_fault);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;  // unreachable with require_subcommand(1)
}
