#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coop/tensor.hpp"

namespace coop {

enum class DataKind { Spirals, Blobs, Rings };

const char* to_string(DataKind k);
DataKind parse_data_kind(const std::string& s);

/// Labelled samples stored row-major; `sample_shape` is {D} or {C, H, W}.
struct Dataset {
  Shape sample_shape;
  std::vector<double> features;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return shape_numel(sample_shape); }
  void validate() const;

  /// Rows `indices` stacked into a [B x sample_shape...] tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Tensor all_features() const;
};

struct DataSpec {
  DataKind kind = DataKind::Spirals;
  std::size_t n = 2000;
  std::size_t classes = 3;
  double noise = -1.0;  // < 0 selects the per-kind default
  std::uint64_t seed = 7;
  std::size_t grid = 0;  // > 0 rasterizes to a 1 x grid x grid image

  double effective_noise() const;
};

/// Sample i has label i % classes. Spirals: one arm per class; blobs:
/// Gaussian clusters on a circle; rings: concentric annuli.
Dataset gen_data(const DataSpec& spec);

/// Renders 2-D points as Gaussian bumps on a grid x grid single-channel
/// image covering [-extent, extent]^2.
Dataset rasterize(const Dataset& points, std::size_t grid, double extent = 1.25);

/// CSV with header label,f0,f1,... (vector data only).
void save_csv(const Dataset& d, const std::string& path);
Dataset load_csv(const std::string& path);

/// Raw little-endian float32 features at `path` plus `path + ".json"` sidecar.
void save_grid(const Dataset& d, const std::string& path);
Dataset load_grid(const std::string& path);

/// Dispatch on extension: ".csv" -> CSV, anything else -> grid.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace coop
