#include "coop/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "coop/errors.hpp"

namespace coop {

namespace {

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string CheckpointFile::serialize() const {
  nlohmann::json m = meta;
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : arrays) {
    std::size_t n = 1;
    for (auto d : a.shape) n *= d;
    if (n != a.values.size()) throw ContractError("checkpoint: array '" + a.name + "' shape mismatch");
    index.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", n}});
    offset += n;
  }
  m["arrays"] = index;
  const std::string js = m.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_le(out, kCheckpointVersion, 4);
  put_le(out, js.size(), 8);
  out += js;
  out.reserve(out.size() + offset * 8);
  for (const auto& a : arrays)
    for (double v : a.values) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  return out;
}

CheckpointFile CheckpointFile::deserialize(const std::string& bytes) {
  constexpr std::size_t header = sizeof kCheckpointMagic + 4 + 8;
  if (bytes.size() < header || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw FileError("checkpoint: bad magic");
  }
  const auto version = get_le(bytes, 8, 4);
  if (version != kCheckpointVersion) {
    throw FileError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto len = get_le(bytes, 12, 8);
  if (bytes.size() < header + len) throw FileError("checkpoint: truncated metadata");
  CheckpointFile ck;
  try {
    ck.meta = nlohmann::json::parse(bytes.substr(header, len));
  } catch (const nlohmann::json::exception& e) {
    throw FileError(std::string("checkpoint: metadata: ") + e.what());
  }
  const std::size_t payload = header + len;
  const auto index = ck.meta.at("arrays");
  ck.meta.erase("arrays");
  for (const auto& e : index) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<std::vector<std::size_t>>();
    const auto off = e.at("offset").get<std::size_t>();
    const auto n = e.at("count").get<std::size_t>();
    if (payload + (off + n) * 8 > bytes.size()) throw FileError("checkpoint: truncated payload");
    a.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      a.values[i] = std::bit_cast<double>(get_le(bytes, payload + (off + i) * 8, 8));
    }
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

void CheckpointFile::save(const std::string& path) const {
  const std::string bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FileError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FileError("write failed for '" + path + "'");
}

CheckpointFile CheckpointFile::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

const NamedArray& CheckpointFile::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw FileError("checkpoint: missing array '" + name + "'");
}

}  // namespace coop
