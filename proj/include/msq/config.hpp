// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat key=value namespace over every tunable, with
// built-in presets. Precedence is preset < config file < command-line.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "msq/data.hpp"
#include "msq/decoder.hpp"
#include "msq/masking.hpp"
#include "msq/model.hpp"
#include "msq/optim.hpp"

namespace msq {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t steps = 2000;
  LrSchedule lr{0.006, 200};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;
  std::size_t checkpoint_interval = 500;  // 0 disables intermediate checkpoints
  bool transfer_decoder = false;          // joint init also copies the TTS decoder
  double adapt_lr_divisor = 5.0;
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  MaskPolicy mask;
  GenerateOptions gen;
  bool gen_prenet_dropout = true;
  CorpusOptions data;

  static RunConfig desk();
  static RunConfig paper();
  static RunConfig from_preset(const std::string& name);

  /// Sets one key from its text form; throws ConfigError for unknown keys
  /// and malformed values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// Sorted key=value map of every key.
  std::map<std::string, std::string> snapshot() const;
  /// Applies every entry of `kv`; unknown keys throw.
  void apply(const std::map<std::string, std::string>& kv);
  void validate() const;

  ToySpec toy_spec() const;
};

/// Parses "key=value" lines; '#' starts a comment, blank lines are skipped.
std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin);
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);
std::string format_kv_text(const std::map<std::string, std::string>& kv);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Builds a config: preset (explicit, else the file's "preset" key, else
/// desk), then the file, then `overrides` in order.
RunConfig load_config(const std::string& preset, const std::filesystem::path& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace msq
