#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace revcd::io {

// Little-endian encode/decode, independent of host byte order.
void append_u32(std::string& out, std::uint32_t v);
void append_u64(std::string& out, std::uint64_t v);
void append_f32(std::string& out, float v);
std::uint32_t read_u32(const unsigned char* p);
std::uint64_t read_u64(const unsigned char* p);
float read_f32(const unsigned char* p);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

std::vector<float> decode_f32(const std::string& bytes, const std::filesystem::path& source);
std::vector<std::uint32_t> decode_u32(const std::string& bytes, const std::filesystem::path& source);
std::string encode_f32(std::span<const float> values);
std::string encode_u32(std::span<const std::uint32_t> values);

}  // namespace revcd::io
