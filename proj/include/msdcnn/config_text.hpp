#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "msdcnn/network.hpp"
#include "msdcnn/training.hpp"

namespace msdcnn {

// Structured key=value text: one `key=value` per line, '#' starts a comment,
// blank lines ignored.  Keys mirror NetworkConfig/TrainPlan field names
// exactly; this is both the CLI config-file format and the config block
// embedded in checkpoints.
class KeyValueText {
 public:
  KeyValueText() = default;
  static KeyValueText parse(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Keys in insertion order, one `key=value` line each.
  std::string serialize() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

// channel_patterns <-> "dndn,dndn" (one 'd'/'n' word per channel).
std::string patterns_to_string(const std::vector<std::vector<LayerKind>>& p);
std::vector<std::vector<LayerKind>> patterns_from_string(const std::string& s);

// lr_phases <-> "1-50:0.001,51-80:0.0001,81-100:0.00001".
std::string lr_phases_to_string(const std::vector<LrPhase>& phases);
std::vector<LrPhase> lr_phases_from_string(const std::string& s);

void write_network_config(KeyValueText& kv, const NetworkConfig& config);
NetworkConfig read_network_config(const KeyValueText& kv);

void write_train_plan(KeyValueText& kv, const TrainPlan& plan);
// Reads fields present in `kv` on top of `base` (missing keys keep defaults).
TrainPlan read_train_plan(const KeyValueText& kv, TrainPlan base = {});

}  // namespace msdcnn
