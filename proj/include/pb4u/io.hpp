#pragma once

#include <cstdint>
#include <string>

#include "pb4u/network.hpp"
#include "pb4u/scene.hpp"
#include "pb4u/train.hpp"

namespace pb4u {

inline constexpr char kCheckpointMagic[8] = {'P', 'B', '4', 'U', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic, u32 version, u64 header length, JSON header, f32 payload,
// u32 CRC32 of the payload. All integers and floats little-endian. Header
// keys are sorted, so equal models give equal bytes.
std::string serialize_checkpoint(const Model& model);
Model parse_checkpoint(const std::string& bytes);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
// Additionally requires the stored network configuration to equal `expected`.
Model load_checkpoint(const std::string& path, const NetworkConfig& expected);

// Scene files. Unknown keys are rejected at every level (format-error).
std::string scene_to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const std::string& text);
void save_scene(const SceneSpec& spec, const std::string& path);
SceneSpec load_scene(const std::string& path);

// Training configuration. `scenes` entries are scene file paths (relative to
// the config file), inline scene objects, or {"preset": name, "grid": n}.
TrainConfig train_config_from_json(const std::string& text, const std::string& base_dir);
TrainConfig load_train_config(const std::string& path);

// Shortest decimal form that parses back to the same double.
std::string format_number(double value);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace pb4u
