#include "revcd/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "revcd/error.hpp"

namespace revcd::io {

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, float v) { append_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t read_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t read_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

float read_f32(const unsigned char* p) { return std::bit_cast<float>(read_u32(p)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string());
  }
}

std::vector<float> decode_f32(const std::string& bytes, const std::filesystem::path& source) {
  if (bytes.size() % 4 != 0)
    throw IoError(source.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_f32(p + 4 * i);
  return out;
}

std::vector<std::uint32_t> decode_u32(const std::string& bytes, const std::filesystem::path& source) {
  if (bytes.size() % 4 != 0)
    throw IoError(source.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 4");
  std::vector<std::uint32_t> out(bytes.size() / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_u32(p + 4 * i);
  return out;
}

std::string encode_f32(std::span<const float> values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (float v : values) append_f32(out, v);
  return out;
}

std::string encode_u32(std::span<const std::uint32_t> values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (auto v : values) append_u32(out, v);
  return out;
}

}  // namespace revcd::io
