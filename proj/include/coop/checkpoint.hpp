#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace coop {

inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'O', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

/// Binary container: magic, u32 version, u64 metadata length, metadata JSON,
/// then every array's values as little-endian float64 in listed order. The
/// metadata gains an "arrays" index of {name, shape, offset, count}.
struct CheckpointFile {
  nlohmann::json meta;
  std::vector<NamedArray> arrays;

  std::string serialize() const;
  static CheckpointFile deserialize(const std::string& bytes);

  void save(const std::string& path) const;
  static CheckpointFile load(const std::string& path);

  const NamedArray& array(const std::string& name) const;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace coop
