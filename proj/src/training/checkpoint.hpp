#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "training/trainer.hpp"

namespace boxprompt::training {

// Binary layout, all integers and floats little-endian:
//   "BXPRCKPT"                      8-byte magic
//   u32 version
//   u32 n, n bytes                  JSON block {"student": ..., "epoch": e, "seed": s}
//   u64 step
//   u32 count, then per parameter:  u32 name length, name, u32 rank, u64 dims[rank], u64 offset
//   u64 total, f32 values[total]    parameters concatenated in name-index order
//   u8 has_moments                  1 when followed by first then second moments (same layout)
//   u32 K, u32 C, u8 frozen, f32 prototypes[K*C], u64 usage[K]
inline constexpr char kCheckpointMagic[9] = "BXPRCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const TrainState& state, bool include_moments = true);
TrainState deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path, bool include_moments = true);
// Throws a Format error on bad magic, version mismatch, truncation, trailing
// bytes, or any shape that disagrees with the stored config.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace boxprompt::training
