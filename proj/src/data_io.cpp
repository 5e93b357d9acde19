#include "msdcnn/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "msdcnn/config_text.hpp"

namespace msdcnn {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<ManifestEntry> DatasetManifest::split(Split s) const {
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : entries) {
    if (e.split == s) out.push_back(e);
  }
  return out;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());

  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();

  std::map<std::string, Split> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("manifest " + path.string() + " line " +
                        std::to_string(line_no) +
                        ": expected '<split>\\t<relative-path>'");
    }
    const std::string split_token = line.substr(0, tab);
    const std::string rel = line.substr(tab + 1);
    ManifestEntry entry;
    if (split_token == "train") {
      entry.split = Split::train;
    } else if (split_token == "val") {
      entry.split = Split::val;
    } else if (split_token == "test") {
      entry.split = Split::test;
    } else {
      throw FormatError("manifest " + path.string() + " line " +
                        std::to_string(line_no) + ": unknown split '" +
                        split_token + "'");
    }
    entry.path = manifest.base_dir / rel;
    entry.name = entry.path.stem().string();
    if (!std::filesystem::exists(entry.path)) {
      throw IoError("manifest entry does not exist: " + entry.path.string());
    }
    const auto key = entry.path.lexically_normal().string();
    const auto it = seen.find(key);
    if (it != seen.end() && it->second != entry.split) {
      throw FormatError("manifest " + path.string() + ": " + key +
                        " appears in more than one split");
    }
    seen.emplace(key, entry.split);
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(const std::vector<unsigned char>& bytes,
                       std::size_t& pos, const std::string& context) {
  while (pos < bytes.size()) {
    const unsigned char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(c)) {
      ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) {
    token.push_back(static_cast<char>(bytes[pos++]));
  }
  if (token.empty()) {
    throw TruncationError(context + ": header ended early");
  }
  return token;
}

std::int64_t parse_dim(const std::string& token, const std::string& context) {
  std::int64_t v = 0;
  for (char ch : token) {
    if (ch < '0' || ch > '9') {
      throw FormatError(context + ": bad header number '" + token + "'");
    }
    v = v * 10 + (ch - '0');
  }
  if (v <= 0) throw FormatError(context + ": non-positive header number");
  return v;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

Tensor load_grayscale(const std::filesystem::path& path) {
  const std::string context = "image " + path.string();
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  if (bytes.size() < 2) throw TruncationError(context + ": too short");

  std::size_t pos = 0;
  const std::string magic = next_token(bytes, pos, context);
  if (magic != "P5" && magic != "P6") {
    throw FormatError(context + ": unsupported format '" + magic +
                      "' (binary PGM P5 or PPM P6 required)");
  }
  const bool color = magic == "P6";
  const std::int64_t w = parse_dim(next_token(bytes, pos, context), context);
  const std::int64_t h = parse_dim(next_token(bytes, pos, context), context);
  const std::int64_t maxval =
      parse_dim(next_token(bytes, pos, context), context);
  if (maxval > 255) {
    throw FormatError(context + ": 16-bit samples unsupported (maxval " +
                      std::to_string(maxval) + ")");
  }
  ++pos;  // exactly one whitespace byte separates header and payload

  const std::int64_t samples = w * h * (color ? 3 : 1);
  if (static_cast<std::int64_t>(bytes.size()) - static_cast<std::int64_t>(pos) <
      samples) {
    throw TruncationError(context + ": payload has " +
                          std::to_string(bytes.size() - pos) + " bytes, needs " +
                          std::to_string(samples));
  }

  Tensor image(Dims4{1, 1, h, w});
  const double inv = 1.0 / static_cast<double>(maxval);
  if (!color) {
    for (std::int64_t i = 0; i < w * h; ++i) {
      image.data[static_cast<std::size_t>(i)] =
          static_cast<double>(bytes[pos + static_cast<std::size_t>(i)]) * inv;
    }
  } else {
    // Luminance on the 0..255 scale, then normalized to [0,1].
    for (std::int64_t i = 0; i < w * h; ++i) {
      const double r = bytes[pos + static_cast<std::size_t>(3 * i)] * inv * 255.0;
      const double g =
          bytes[pos + static_cast<std::size_t>(3 * i + 1)] * inv * 255.0;
      const double b =
          bytes[pos + static_cast<std::size_t>(3 * i + 2)] * inv * 255.0;
      const double y = (65.481 * r + 128.553 * g + 24.966 * b) / 255.0 + 16.0;
      image.data[static_cast<std::size_t>(i)] = y / 255.0;
    }
  }
  return image;
}

void save_grayscale(const std::filesystem::path& path, const Tensor& image) {
  if (image.dims.n != 1 || image.dims.c != 1) {
    throw UsageError("save_grayscale: expects a (1, 1, H, W) tensor, got " +
                     to_string(image.dims));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path.string());
  out << "P5\n" << image.dims.w << " " << image.dims.h << "\n255\n";
  for (double v : image.data) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(
        static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

// Edge-inclusive reflection of index i into [0, n).
std::int64_t fold_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  i %= 2 * n;
  return i < n ? i : 2 * n - 1 - i;
}

}  // namespace

PadResult pad_to_multiple(const Tensor& image, int block) {
  if (block < 1) throw UsageError("pad_to_multiple: block must be >= 1");
  const Dims4 d = image.dims;
  const std::int64_t h = (d.h + block - 1) / block * block;
  const std::int64_t w = (d.w + block - 1) / block * block;
  PadResult result;
  result.original_dims = d;
  if (h == d.h && w == d.w) {
    result.padded = image;
    return result;
  }
  result.padded = Tensor(Dims4{d.n, d.c, h, w});
  for (std::int64_t b = 0; b < d.n; ++b) {
    for (std::int64_t c = 0; c < d.c; ++c) {
      for (std::int64_t y = 0; y < h; ++y) {
        const std::int64_t sy = fold_index(y, d.h);
        for (std::int64_t x = 0; x < w; ++x) {
          result.padded.at(b, c, y, x) = image.at(b, c, sy, fold_index(x, d.w));
        }
      }
    }
  }
  return result;
}

Tensor crop_to(const Tensor& image, const Dims4& original_dims) {
  if (image.dims.n != original_dims.n || image.dims.c != original_dims.c) {
    throw DimensionError("crop_to: batch/channel axes differ, " +
                         to_string(image.dims) + " vs " +
                         to_string(original_dims));
  }
  if (original_dims.h > image.dims.h || original_dims.w > image.dims.w) {
    throw UsageError("crop_to: target " + to_string(original_dims) +
                     " exceeds image " + to_string(image.dims));
  }
  if (original_dims == image.dims) return image;
  Tensor out(original_dims);
  for (std::int64_t b = 0; b < original_dims.n; ++b) {
    for (std::int64_t c = 0; c < original_dims.c; ++c) {
      for (std::int64_t y = 0; y < original_dims.h; ++y) {
        std::memcpy(out.data.data() + out.index(b, c, y, 0),
                    image.data.data() + image.index(b, c, y, 0),
                    static_cast<std::size_t>(original_dims.w) * sizeof(double));
      }
    }
  }
  return out;
}

Checkpoint Checkpoint::from_network(const Network& net, int epoch,
                                    std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.config = net.config;
  ckpt.epoch = epoch;
  ckpt.seed = seed;
  Network copy = net;  // parameters() needs mutable access
  for (const NamedParam& p : parameters(copy)) {
    ckpt.tensors.push_back({p.name, *p.tensor});
  }
  return ckpt;
}

Network Checkpoint::to_network() const {
  Network net = build_network_zeros(config);
  std::map<std::string, bool> filled;
  for (const NamedParam& p : parameters(net)) filled[p.name] = false;

  auto params = parameters(net);
  for (const NamedTensor& t : tensors) {
    auto it = std::find_if(params.begin(), params.end(),
                           [&](const NamedParam& p) { return p.name == t.name; });
    if (it == params.end()) {
      throw FormatError("checkpoint: unexpected tensor '" + t.name + "'");
    }
    if (filled[t.name]) {
      throw FormatError("checkpoint: tensor '" + t.name + "' appears twice");
    }
    if (!(it->tensor->dims == t.value.dims)) {
      throw DimensionError("checkpoint: tensor '" + t.name + "' has dims " +
                           to_string(t.value.dims) + ", config implies " +
                           to_string(it->tensor->dims));
    }
    *it->tensor = t.value;
    filled[t.name] = true;
  }
  for (const auto& [name, ok] : filled) {
    if (!ok) throw FormatError("checkpoint: missing tensor '" + name + "'");
  }
  return net;
}

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;
  std::string context;

  void need(std::size_t count, const char* what) const {
    if (pos + count > bytes.size()) {
      throw TruncationError(context + ": truncated while reading " +
                            std::string(what));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes[pos]) |
                      static_cast<std::uint16_t>(bytes[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(bytes[pos + static_cast<std::size_t>(i)])
           << (8 * i);
    }
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t len, const char* what) {
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    return s;
  }
};

std::string checkpoint_config_text(const Checkpoint& ckpt) {
  KeyValueText kv;
  write_network_config(kv, ckpt.config);
  kv.set("epoch", std::to_string(ckpt.epoch));
  kv.set("seed", std::to_string(ckpt.seed));
  return kv.serialize();
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& path) {
  std::string blob;
  blob += "MSDC";
  put_u32(blob, ckpt.version);

  const std::string config_text = checkpoint_config_text(ckpt);
  put_u32(blob, static_cast<std::uint32_t>(config_text.size()));
  blob += config_text;

  put_u32(blob, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    if (t.name.size() > 0xFFFF) {
      throw UsageError("checkpoint: tensor name too long");
    }
    put_u16(blob, static_cast<std::uint16_t>(t.name.size()));
    blob += t.name;
    blob.push_back(4);  // rank
    put_u32(blob, static_cast<std::uint32_t>(t.value.dims.n));
    put_u32(blob, static_cast<std::uint32_t>(t.value.dims.c));
    put_u32(blob, static_cast<std::uint32_t>(t.value.dims.h));
    put_u32(blob, static_cast<std::uint32_t>(t.value.dims.w));
    for (double v : t.value.data) put_f32(blob, static_cast<float>(v));
  }

  // Atomic write: temp file in the same directory, then rename over.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("cannot move checkpoint into place: " + path.string() +
                  " (" + ec.message() + ")");
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  ByteReader r{bytes, 0, "checkpoint " + path.string()};

  const std::string magic = r.str(4, "magic");
  if (magic != "MSDC") {
    throw FormatError(r.context + ": bad magic");
  }
  Checkpoint ckpt;
  ckpt.version = r.u32("version");
  if (ckpt.version != 1) {
    throw VersionError(r.context + ": unsupported format version " +
                       std::to_string(ckpt.version));
  }

  const std::uint32_t config_len = r.u32("config length");
  const std::string config_text = r.str(config_len, "config text");
  const KeyValueText kv = KeyValueText::parse(config_text);
  ckpt.config = read_network_config(kv);
  ckpt.epoch = static_cast<int>(kv.get_int("epoch"));
  ckpt.seed = static_cast<std::uint64_t>(kv.get_int("seed"));

  const std::uint32_t tensor_count = r.u32("tensor count");
  ckpt.tensors.reserve(tensor_count);
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    const std::uint16_t name_len = r.u16("tensor name length");
    NamedTensor t;
    t.name = r.str(name_len, "tensor name");
    const std::uint8_t rank = r.u8("tensor rank");
    if (rank != 4) {
      throw FormatError(r.context + ": tensor '" + t.name +
                        "' has unsupported rank " + std::to_string(rank));
    }
    Dims4 dims;
    dims.n = r.u32("dim");
    dims.c = r.u32("dim");
    dims.h = r.u32("dim");
    dims.w = r.u32("dim");
    std::vector<double> values(static_cast<std::size_t>(dims.count()));
    for (double& v : values) v = static_cast<double>(r.f32("tensor payload"));
    t.value = Tensor(dims, std::move(values));
    ckpt.tensors.push_back(std::move(t));
  }

  // Cross-check dims against the embedded config up front, so corrupt files
  // fail here rather than at first use.
  const auto expected = parameter_shapes(ckpt.config);
  if (expected.size() != ckpt.tensors.size()) {
    throw FormatError(r.context + ": config implies " +
                      std::to_string(expected.size()) + " tensors, file has " +
                      std::to_string(ckpt.tensors.size()));
  }
  for (const auto& [name, dims] : expected) {
    const auto it = std::find_if(
        ckpt.tensors.begin(), ckpt.tensors.end(),
        [&](const NamedTensor& t) { return t.name == name; });
    if (it == ckpt.tensors.end()) {
      throw FormatError(r.context + ": missing tensor '" + name + "'");
    }
    if (!(it->value.dims == dims)) {
      throw DimensionError(r.context + ": tensor '" + name + "' has dims " +
                           to_string(it->value.dims) + ", config implies " +
                           to_string(dims));
    }
  }
  return ckpt;
}

}  // namespace msdcnn
