#include "revcd/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include "revcd/binary_io.hpp"
#include "revcd/error.hpp"

namespace revcd {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'R', 'V', 'C', 'D', 'C', 'K', 'P', 'T'};
}

const Tensor<float>& Checkpoint::at(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw ValidationError("checkpoint has no tensor named " + std::string(name));
}

bool Checkpoint::contains(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json header;
  header["config"] = ckpt.config;
  header["rng"] = {{"seed", ckpt.rng.seed}, {"counter", ckpt.rng.counter}};
  header["step"] = ckpt.step;
  header["extra"] = ckpt.extra;
  json entries = json::array();
  std::set<std::string> names;
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (!names.insert(t.name).second) throw ValidationError("duplicate checkpoint tensor name " + t.name);
    const std::uint64_t bytes = 4 * t.value.size();
    entries.push_back({{"name", t.name}, {"dims", t.value.dims()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  header["tensors"] = entries;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  io::append_u32(out, kCheckpointVersion);
  io::append_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& t : ckpt.tensors) out += io::encode_f32(t.value.data());
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError(source + ": not a checkpoint (bad magic)");
  const auto version = io::read_u32(p + 8);
  if (version != kCheckpointVersion)
    throw IoError(source + ": checkpoint version " + std::to_string(version) + ", this build reads version " +
                  std::to_string(kCheckpointVersion));
  const auto header_len = io::read_u64(p + 12);
  if (header_len > bytes.size() - 20) throw IoError(source + ": truncated header");

  json header;
  try {
    header = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw IoError(source + ": corrupt header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = header.at("config");
    ckpt.rng.seed = header.at("rng").at("seed").get<std::uint64_t>();
    ckpt.rng.counter = header.at("rng").at("counter").get<std::uint64_t>();
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.extra = header.value("extra", json::object());
    const std::size_t payload = 20 + header_len;
    const std::uint64_t available = bytes.size() - payload;
    std::uint64_t expected_end = 0;
    for (const auto& e : header.at("tensors")) {
      auto dims = e.at("dims").get<Dims>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("bytes").get<std::uint64_t>();
      if (dims.empty() || nbytes != 4 * dims_product(dims))
        throw IoError(source + ": tensor " + e.at("name").get<std::string>() + " has inconsistent dims/bytes");
      if (offset + nbytes > available) throw IoError(source + ": truncated payload");
      std::vector<float> values(nbytes / 4);
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = io::read_f32(p + payload + offset + 4 * i);
      ckpt.tensors.push_back({e.at("name").get<std::string>(), Tensor<float>(std::move(dims), std::move(values))});
      expected_end = std::max(expected_end, offset + nbytes);
    }
    if (expected_end != available) throw IoError(source + ": payload size does not match header");
  } catch (const json::exception& e) {
    throw IoError(source + ": corrupt header: " + e.what());
  } catch (const ShapeError& e) {
    throw IoError(source + ": corrupt tensor: " + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(io::read_file(path), path.string());
}

}  // namespace revcd
