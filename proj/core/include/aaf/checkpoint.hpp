#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aaf/model.hpp"

namespace aaf {

// Binary layout, all integers and reals little-endian:
//   "AAF1"  u16 version  u64 config_hash
//   u16 stamp_len  stamp bytes           (freeze stage, e.g. "compose:aaf,mta")
//   u32 entry_count
//   entry: u16 name_len  name  u8 ndim  u32 dims[ndim]  f64 values[prod(dims)]

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::string stamp;
  std::vector<CheckpointEntry> entries;

  /// Every registry parameter of `model`, in registry order.
  static Checkpoint from_model(const AsrModel& model, std::uint64_t config_hash, std::string stamp);
  const CheckpointEntry* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds a model: adapters and fusion are inferred from entry names, and
/// every parameter must appear exactly once with the expected shape.
AsrModel restore_model(const Checkpoint& ckpt, const ModelConfig& config);

}  // namespace aaf
