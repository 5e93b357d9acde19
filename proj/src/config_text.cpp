#include "msdcnn/config_text.hpp"

#include <algorithm>
#include <sstream>

namespace msdcnn {

KeyValueText KeyValueText::parse(const std::string& text) {
  KeyValueText kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // Trim leading whitespace, allow comments and blank lines.
    const std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    if (line[start] == '#') continue;
    const std::size_t eq = line.find('=', start);
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(line_no) +
                        ": expected 'key=value', got '" + line + "'");
    }
    auto trim = [](std::string s) {
      const std::size_t a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const std::size_t b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(start, eq - start));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw FormatError("config line " + std::to_string(line_no) +
                        ": empty key");
    }
    kv.set(key, value);
  }
  return kv;
}

void KeyValueText::set(const std::string& key, const std::string& value) {
  if (values_.count(key) == 0) order_.push_back(key);
  values_[key] = value;
}

std::string KeyValueText::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw FormatError("config: missing key '" + key + "'");
  }
  return it->second;
}

std::int64_t KeyValueText::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const std::int64_t n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw FormatError("config: key '" + key + "' has non-integer value '" + v +
                      "'");
  }
}

double KeyValueText::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw FormatError("config: key '" + key + "' has non-numeric value '" + v +
                      "'");
  }
}

bool KeyValueText::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("config: key '" + key + "' has non-boolean value '" + v +
                    "'");
}

std::string KeyValueText::serialize() const {
  std::string out;
  for (const std::string& key : order_) {
    out += key;
    out += '=';
    out += values_.at(key);
    out += '\n';
  }
  return out;
}

std::string patterns_to_string(const std::vector<std::vector<LayerKind>>& p) {
  std::string out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) out += ',';
    for (LayerKind kind : p[i]) {
      out += kind == LayerKind::dilated ? 'd' : 'n';
    }
  }
  return out;
}

std::vector<std::vector<LayerKind>> patterns_from_string(const std::string& s) {
  std::vector<std::vector<LayerKind>> out;
  if (s.empty()) return out;
  std::istringstream in(s);
  std::string word;
  while (std::getline(in, word, ',')) {
    std::vector<LayerKind> pattern;
    for (char ch : word) {
      if (ch == 'd') {
        pattern.push_back(LayerKind::dilated);
      } else if (ch == 'n') {
        pattern.push_back(LayerKind::normal);
      } else {
        throw FormatError(std::string("channel_patterns: unknown layer kind '") +
                          ch + "' (use 'd' or 'n')");
      }
    }
    out.push_back(std::move(pattern));
  }
  return out;
}

std::string lr_phases_to_string(const std::vector<LrPhase>& phases) {
  std::ostringstream out;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    if (i) out << ',';
    out << phases[i].first_epoch << '-' << phases[i].last_epoch << ':'
        << phases[i].rate;
  }
  return out.str();
}

std::vector<LrPhase> lr_phases_from_string(const std::string& s) {
  std::vector<LrPhase> out;
  std::istringstream in(s);
  std::string word;
  while (std::getline(in, word, ',')) {
    const std::size_t dash = word.find('-');
    const std::size_t colon = word.find(':', dash == std::string::npos ? 0 : dash);
    if (dash == std::string::npos || colon == std::string::npos) {
      throw FormatError("lr_phases: expected 'first-last:rate', got '" + word +
                        "'");
    }
    try {
      LrPhase phase;
      phase.first_epoch = std::stoi(word.substr(0, dash));
      phase.last_epoch = std::stoi(word.substr(dash + 1, colon - dash - 1));
      phase.rate = std::stod(word.substr(colon + 1));
      out.push_back(phase);
    } catch (const std::exception&) {
      throw FormatError("lr_phases: malformed phase '" + word + "'");
    }
  }
  return out;
}

void write_network_config(KeyValueText& kv, const NetworkConfig& config) {
  std::ostringstream mr;
  mr.precision(17);
  mr << config.measurement_rate;
  kv.set("measurement_rate", mr.str());
  kv.set("block_size", std::to_string(config.block_size));
  kv.set("mfe_channels", std::to_string(config.mfe_channels));
  kv.set("layers_per_channel", std::to_string(config.layers_per_channel));
  kv.set("filters_per_layer", std::to_string(config.filters_per_layer));
  kv.set("channel_patterns",
         patterns_to_string(config.effective_patterns()));
  kv.set("fusion_filters", std::to_string(config.fusion_filters));
  kv.set("head_kernel", std::to_string(config.head_kernel));
}

NetworkConfig read_network_config(const KeyValueText& kv) {
  NetworkConfig config;
  if (kv.has("measurement_rate")) {
    config.measurement_rate = kv.get_double("measurement_rate");
  }
  if (kv.has("block_size")) {
    config.block_size = static_cast<int>(kv.get_int("block_size"));
  }
  if (kv.has("mfe_channels")) {
    config.mfe_channels = static_cast<int>(kv.get_int("mfe_channels"));
  }
  if (kv.has("layers_per_channel")) {
    config.layers_per_channel =
        static_cast<int>(kv.get_int("layers_per_channel"));
  }
  if (kv.has("filters_per_layer")) {
    config.filters_per_layer =
        static_cast<int>(kv.get_int("filters_per_layer"));
  }
  if (kv.has("channel_patterns")) {
    config.channel_patterns =
        patterns_from_string(kv.get_string("channel_patterns"));
  }
  if (kv.has("fusion_filters")) {
    config.fusion_filters = static_cast<int>(kv.get_int("fusion_filters"));
  }
  if (kv.has("head_kernel")) {
    config.head_kernel = static_cast<int>(kv.get_int("head_kernel"));
  }
  return config;
}

void write_train_plan(KeyValueText& kv, const TrainPlan& plan) {
  kv.set("epochs", std::to_string(plan.epochs));
  kv.set("lr_phases", lr_phases_to_string(plan.lr_phases));
  kv.set("batch_size", std::to_string(plan.batch_size));
  kv.set("patch_size", std::to_string(plan.patch_size));
  kv.set("seed", std::to_string(plan.seed));
  kv.set("augmentation_enabled", plan.augmentation_enabled ? "true" : "false");
  kv.set("patches_per_epoch", std::to_string(plan.patches_per_epoch));
}

TrainPlan read_train_plan(const KeyValueText& kv, TrainPlan base) {
  TrainPlan plan = base;
  bool epochs_changed = false;
  if (kv.has("epochs")) {
    plan.epochs = static_cast<int>(kv.get_int("epochs"));
    epochs_changed = true;
  }
  if (kv.has("lr_phases")) {
    plan.lr_phases = lr_phases_from_string(kv.get_string("lr_phases"));
  } else if (epochs_changed) {
    // A changed epoch count without an explicit schedule compresses the
    // default three-phase split proportionally (50% / 30% / 20%).
    const int e = plan.epochs;
    const int p1 = std::max(1, e * 50 / 100);
    const int p2 = std::max(p1, e * 80 / 100);
    plan.lr_phases.clear();
    plan.lr_phases.push_back({1, p1, 1e-3});
    if (p2 > p1) plan.lr_phases.push_back({p1 + 1, p2, 1e-4});
    if (e > p2) plan.lr_phases.push_back({p2 + 1, e, 1e-5});
  }
  if (kv.has("batch_size")) {
    plan.batch_size = static_cast<int>(kv.get_int("batch_size"));
  }
  if (kv.has("patch_size")) {
    plan.patch_size = static_cast<int>(kv.get_int("patch_size"));
  }
  if (kv.has("seed")) {
    plan.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  }
  if (kv.has("augmentation_enabled")) {
    plan.augmentation_enabled = kv.get_bool("augmentation_enabled");
  }
  if (kv.has("patches_per_epoch")) {
    plan.patches_per_epoch =
        static_cast<int>(kv.get_int("patches_per_epoch"));
  }
  return plan;
}

}  // namespace msdcnn
