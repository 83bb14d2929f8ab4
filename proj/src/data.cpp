#include "coop/data.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "coop/errors.hpp"
#include "coop/random.hpp"

namespace coop {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(path, mode);
  if (!f) throw FileError("cannot open '" + path + "' for writing");
  return f;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream f(path, mode);
  if (!f) throw FileError("cannot open '" + path + "'");
  return f;
}

}  // namespace

const char* to_string(DataKind k) {
  switch (k) {
    case DataKind::Spirals:
      return "spirals";
    case DataKind::Blobs:
      return "blobs";
    case DataKind::Rings:
      return "rings";
  }
  return "?";
}

DataKind parse_data_kind(const std::string& s) {
  if (s == "spirals") return DataKind::Spirals;
  if (s == "blobs") return DataKind::Blobs;
  if (s == "rings") return DataKind::Rings;
  throw ConfigError("data.kind: expected spirals|blobs|rings, got '" + s + "'");
}

void Dataset::validate() const {
  if (labels.empty()) throw ContractError("dataset: no samples");
  if (sample_shape.empty()) throw ContractError("dataset: missing sample shape");
  if (features.size() != labels.size() * sample_numel()) {
    throw ContractError("dataset: feature count does not match labels x sample size");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ContractError("dataset: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
  }
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t d = sample_numel();
  std::vector<double> out;
  out.reserve(indices.size() * d);
  for (auto i : indices) {
    if (i >= size()) throw IndexError("dataset: sample index out of range");
    out.insert(out.end(), features.begin() + i * d, features.begin() + (i + 1) * d);
  }
  Shape s{indices.size()};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(s), std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Tensor Dataset::all_features() const {
  Shape s{size()};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(s), features);
}

double DataSpec::effective_noise() const {
  if (noise >= 0.0) return noise;
  switch (kind) {
    case DataKind::Spirals:
      return 0.2;
    case DataKind::Blobs:
      return 0.3;
    case DataKind::Rings:
      return 0.05;
  }
  return 0.0;
}

Dataset gen_data(const DataSpec& spec) {
  if (spec.n < 1) throw ParameterError("gen_data: n must be >= 1");
  if (spec.classes < 2) throw ParameterError("gen_data: classes must be >= 2");
  const double noise = spec.effective_noise();
  const double k = static_cast<double>(spec.classes);
  const std::size_t per_class = (spec.n + spec.classes - 1) / spec.classes;
  Rng rng(spec.seed);

  Dataset d;
  d.sample_shape = {2};
  d.num_classes = spec.classes;
  d.features.reserve(spec.n * 2);
  d.labels.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t c = i % spec.classes;
    const double t = (static_cast<double>(i / spec.classes) + 0.5) / static_cast<double>(per_class);
    const double base = 2.0 * std::numbers::pi * static_cast<double>(c) / k;
    double x = 0.0, y = 0.0;
    switch (spec.kind) {
      case DataKind::Spirals: {
        const double theta = base + 4.0 * t + noise * rng.normal();
        x = t * std::sin(theta);
        y = t * std::cos(theta);
        break;
      }
      case DataKind::Blobs: {
        x = 2.0 * std::cos(base) + noise * rng.normal();
        y = 2.0 * std::sin(base) + noise * rng.normal();
        break;
      }
      case DataKind::Rings: {
        const double radius = (static_cast<double>(c) + 1.0) / k + noise * rng.normal();
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        x = radius * std::cos(angle);
        y = radius * std::sin(angle);
        break;
      }
    }
    d.features.push_back(x);
    d.features.push_back(y);
    d.labels.push_back(static_cast<int>(c));
  }
  if (spec.grid > 0) {
    const double extent = spec.kind == DataKind::Blobs ? 3.0 : 1.25;
    return rasterize(d, spec.grid, extent);
  }
  return d;
}

Dataset rasterize(const Dataset& points, std::size_t grid, double extent) {
  if (points.sample_shape != Shape{2}) throw DimensionError("rasterize: expects 2-D points");
  if (grid < 2) throw ParameterError("rasterize: grid must be >= 2");
  const double step = 2.0 * extent / static_cast<double>(grid - 1);
  const double sigma = 1.5 * step;
  Dataset out;
  out.sample_shape = {1, grid, grid};
  out.num_classes = points.num_classes;
  out.labels = points.labels;
  out.split = points.split;
  out.features.reserve(points.size() * grid * grid);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double px = points.features[2 * i], py = points.features[2 * i + 1];
    for (std::size_t r = 0; r < grid; ++r) {
      const double gy = extent - step * static_cast<double>(r);
      for (std::size_t c = 0; c < grid; ++c) {
        const double gx = -extent + step * static_cast<double>(c);
        const double d2 = (gx - px) * (gx - px) + (gy - py) * (gy - py);
        out.features.push_back(std::exp(-d2 / (2.0 * sigma * sigma)));
      }
    }
  }
  return out;
}

void save_csv(const Dataset& d, const std::string& path) {
  d.validate();
  if (d.sample_shape.size() != 1) throw ContractError("save_csv: vector data only");
  auto f = open_out(path);
  const std::size_t dim = d.sample_shape[0];
  f << "label";
  for (std::size_t j = 0; j < dim; ++j) f << ",f" << j;
  f << '\n';
  char buf[32];
  for (std::size_t i = 0; i < d.size(); ++i) {
    f << d.labels[i];
    for (std::size_t j = 0; j < dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", d.features[i * dim + j]);
      f << ',' << buf;
    }
    f << '\n';
  }
  if (!f) throw FileError("write failed for '" + path + "'");
}

Dataset load_csv(const std::string& path) {
  auto f = open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw FileError("'" + path + "': empty file");
  std::size_t dim = 0;
  {
    std::stringstream hs(line);
    std::string cell;
    std::getline(hs, cell, ',');
    if (cell != "label") throw FileError("'" + path + "': header must start with 'label'");
    while (std::getline(hs, cell, ',')) {
      if (cell != "f" + std::to_string(dim)) throw FileError("'" + path + "': bad header column '" + cell + "'");
      ++dim;
    }
  }
  if (dim == 0) throw FileError("'" + path + "': no feature columns");
  Dataset d;
  d.sample_shape = {dim};
  int max_label = -1;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != dim + 1) {
      throw FileError("'" + path + "' line " + std::to_string(lineno) + ": expected " +
                      std::to_string(dim + 1) + " columns");
    }
    try {
      const int y = std::stoi(cells[0]);
      if (y < 0) throw FileError("'" + path + "' line " + std::to_string(lineno) + ": negative label");
      d.labels.push_back(y);
      max_label = std::max(max_label, y);
      for (std::size_t j = 0; j < dim; ++j) d.features.push_back(std::stod(cells[j + 1]));
    } catch (const std::logic_error&) {
      throw FileError("'" + path + "' line " + std::to_string(lineno) + ": malformed number");
    }
  }
  d.num_classes = static_cast<std::size_t>(max_label + 1);
  d.validate();
  return d;
}

void save_grid(const Dataset& d, const std::string& path) {
  d.validate();
  {
    auto f = open_out(path, std::ios::binary);
    for (double v : d.features) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                  static_cast<unsigned char>(bits >> 16),
                                  static_cast<unsigned char>(bits >> 24)};
      f.write(reinterpret_cast<const char*>(b), 4);
    }
    if (!f) throw FileError("write failed for '" + path + "'");
  }
  nlohmann::ordered_json meta{{"format", "f32le"},
                              {"sample_shape", d.sample_shape},
                              {"n", d.size()},
                              {"num_classes", d.num_classes},
                              {"split", d.split},
                              {"labels", d.labels}};
  auto f = open_out(path + ".json");
  f << meta.dump() << '\n';
}

Dataset load_grid(const std::string& path) {
  nlohmann::json meta;
  try {
    auto f = open_in(path + ".json");
    meta = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FileError("'" + path + ".json': " + e.what());
  }
  Dataset d;
  try {
    if (meta.at("format") != "f32le") throw FileError("'" + path + "': unsupported format");
    d.sample_shape = meta.at("sample_shape").get<Shape>();
    d.num_classes = meta.at("num_classes").get<std::size_t>();
    d.split = meta.value("split", "train");
    d.labels = meta.at("labels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw FileError("'" + path + ".json': " + e.what());
  }
  auto f = open_in(path, std::ios::binary);
  const std::size_t count = d.labels.size() * d.sample_numel();
  d.features.resize(count);
  unsigned char b[4];
  for (std::size_t i = 0; i < count; ++i) {
    if (!f.read(reinterpret_cast<char*>(b), 4)) throw FileError("'" + path + "': truncated payload");
    const std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                               std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
    d.features[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  d.validate();
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  if (ends_with(path, ".csv")) {
    save_csv(d, path);
  } else {
    save_grid(d, path);
  }
}

Dataset load_dataset(const std::string& path) {
  return ends_with(path, ".csv") ? load_csv(path) : load_grid(path);
}

}  // namespace coop
