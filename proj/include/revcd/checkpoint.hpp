#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "revcd/rng.hpp"
#include "revcd/tensor.hpp"

namespace revcd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  nlohmann::json config;  // echo of the run configuration
  std::vector<NamedTensor> tensors;
  RngState rng;
  std::int64_t step = 0;
  // Free-form scalars (e.g. optimizer step count).
  nlohmann::json extra = nlohmann::json::object();

  const Tensor<float>& at(std::string_view name) const;
  bool contains(std::string_view name) const;
};

// Layout: "RVCDCKPT", u32 version, u64 header length, JSON header, then
// float32 little-endian payloads at the offsets the header lists.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");

// Atomic: writes a temp file, then renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace revcd
