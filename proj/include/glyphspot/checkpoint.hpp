#pragma once

#include <filesystem>
#include <string>

#include "glyphspot/autodiff.hpp"
#include "glyphspot/detector.hpp"
#include "json.hpp"

namespace glyphspot {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// File layout (little endian): "GSLT", u16 version, u32 length + config JSON,
/// then per parameter u16 length + name, u8 rank, u32 dims, f32 values, and a
/// CRC32 of all preceding bytes.
struct Checkpoint {
  nlohmann::json config;  // {"model": ModelConfig, ...metadata}
  ParameterSet<float> params;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws DataError on a bad magic, version, CRC or truncated payload.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

Checkpoint make_checkpoint(const Detector<float>& model, const nlohmann::json& metadata = nlohmann::json::object());
Detector<float> detector_from_checkpoint(const Checkpoint& ckpt);

}  // namespace glyphspot
