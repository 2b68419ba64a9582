#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "aaf/model.hpp"
#include "aaf/synthdata.hpp"
#include "aaf/training.hpp"

namespace aaf {

struct TrainingSection {
  std::string stage = "base";  // default for `aaf train` without --stage
  AggregationMethod method = AggregationMethod::AAF;
  bool mta = false;
  LRSchedule schedule{.init_lr = 5e-5, .peak_lr = 5e-3};  // desk scale, see README
  std::size_t batch = 32;
  std::size_t base_steps = 1500;
  std::size_t adapter_steps = 1000;
  std::size_t compose_steps = 1000;
  std::size_t eval_every = 50;
  std::size_t patience = 5;
  std::size_t dev_subset = 64;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3};  // matrix and ablation runs
};

/// Everything a run depends on. The model section plus the tasks section
/// determine parameter shapes and data, and form the config hash.
struct Config {
  ModelConfig model;  // d_in and vocab are taken from `tasks`
  BenchmarkConfig tasks{.seed = 7};
  TrainingSection training;

  ModelConfig model_config() const;
  /// Step budget and optimizer settings for one stage; `seed` overrides
  /// training.seed.
  TrainConfig train_config(Stage stage, bool base_pretraining, std::uint64_t seed) const;
};

/// Parses YAML. Unknown sections or keys and ill-typed values are config
/// errors of the form "<source>:<line>:<col>: ...".
Config parse_config(std::string_view text, std::string_view source = "config");
Config load_config(const std::filesystem::path& path);

/// Canonical YAML of the whole config with every default spelled out.
std::string dump_config(const Config& config);
/// FNV-1a-64 of the canonical model and tasks sections.
std::uint64_t config_hash(const Config& config);
std::string hash_hex(std::uint64_t hash);

}  // namespace aaf
