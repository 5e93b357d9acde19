#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msdcnn/network.hpp"
#include "msdcnn/tensor.hpp"

namespace msdcnn {

enum class Split { train, val, test };

std::string to_string(Split s);

struct ManifestEntry {
  Split split = Split::train;
  std::filesystem::path path;  // resolved against the manifest's directory
  std::string name;            // file stem, for reports
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(Split s) const;
};

// Manifest file: UTF-8 text, one `<split>\t<relative-path>` per line.
// Every referenced file must exist at load time.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Binary PGM (P5) or PPM (P6).  Grayscale is read directly; color converts
// through luminance before scaling to [0,1].
Tensor load_grayscale(const std::filesystem::path& path);

// 8-bit binary PGM; values clamped to [0,1] then quantized.
void save_grayscale(const std::filesystem::path& path, const Tensor& image);

struct PadResult {
  Tensor padded;
  Dims4 original_dims;
};

// Reflect-pad right/bottom up to the next multiple of block; the companion
// crop_to undoes it exactly.
PadResult pad_to_multiple(const Tensor& image, int block);
Tensor crop_to(const Tensor& image, const Dims4& original_dims);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::uint32_t version = 1;
  NetworkConfig config;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::vector<NamedTensor> tensors;

  static Checkpoint from_network(const Network& net, int epoch,
                                 std::uint64_t seed);
  Network to_network() const;
};

// Byte layout (little-endian): magic "MSDC", version u32, config text
// (u32 length + UTF-8 key=value lines), tensor count u32, then per tensor:
// name (u16 length + UTF-8), rank u8, dims u32 each, payload f32 row-major.
// Writes are atomic (temp file + rename).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace msdcnn
