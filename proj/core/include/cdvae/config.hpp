#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdvae/data_io.hpp"
#include "cdvae/diagnostics.hpp"
#include "cdvae/training.hpp"

namespace cdvae {

enum class DataSource { kSynthetic, kIdx };

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  bool downsample = false;
  std::size_t train_count = 0;  // 0 keeps every item
  std::size_t test_count = 0;
  std::size_t synth_test_count = 200;
  std::string cache;  // synthetic cache file; empty disables caching
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;
  SyntheticSpec synth;
  EvalOptions eval;
  std::uint64_t eval_seed = 7;
  std::string output_dir = "out";
};

/// Strict `section.key = value` text. Blank lines and lines starting with '#'
/// are ignored. Unknown or repeated keys and malformed values throw ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Applies one `key=value` override.
void apply_override(RunConfig& cfg, const std::string& assignment);
/// Canonical text of every key; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace cdvae
