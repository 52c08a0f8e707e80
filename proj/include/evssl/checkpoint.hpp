#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "evssl/numerics/params.hpp"

namespace evssl::ckpt {

/// Tensor groups ("model", "ema", "adam_m", ...) plus free-form JSON metadata.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, num::ParamStore> groups;
};

inline constexpr std::uint32_t kFormatVersion = 1;

/// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);

std::string encode(const Checkpoint& ckpt);
/// Throws IoError on a bad magic, unsupported version, truncation or
/// checksum mismatch.
Checkpoint decode(const std::string& bytes);

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

}  // namespace evssl::ckpt
