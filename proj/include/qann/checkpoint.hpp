#pragma once

// Versioned checkpoint container. Layout (all integers little-endian):
//
//   8 bytes   magic "QANNCKPT"
//   u32       format version (1)
//   u64       header length H
//   H bytes   UTF-8 JSON header: config, dims, vocab, counters, schedule,
//             optimizer scalars and the ordered tensor table
//             [{"name": ..., "shape": [...]}, ...]
//   payload   float64 little-endian row-major values of every tensor in
//             table order: params/*, then adam_m/*, then adam_v/*
//
// See docs/checkpoint_format.md.

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "qann/trainer.hpp"

namespace qann {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::ordered_json config_to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
TrainConfig config_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& checkpoint, std::ostream& out);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qann
