#include "coop/cost_model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "coop/errors.hpp"
#include "coop/random.hpp"

namespace coop {

namespace {

struct Spatial {
  std::size_t c = 0, h = 1, w = 1;
  std::uint64_t elems() const { return static_cast<std::uint64_t>(c) * h * w; }
};

// One conv/linear unit followed by optional norm and relu. Updates `x` to the output.
Cost unit_cost(Spatial& x, std::size_t out, std::size_t kernel, std::size_t stride, bool conv,
               bool norm, bool relu) {
  Cost c;
  Spatial y;
  y.c = out;
  if (conv) {
    const std::size_t pad = kernel / 2;
    y.h = (x.h + 2 * pad - kernel) / stride + 1;
    y.w = (x.w + 2 * pad - kernel) / stride + 1;
    c.params = static_cast<std::uint64_t>(out) * x.c * kernel * kernel;
    c.macs = c.params * y.h * y.w;
  } else {
    c.params = static_cast<std::uint64_t>(x.c) * out + out;
    c.macs = static_cast<std::uint64_t>(x.c) * out;
  }
  if (norm) {
    c.params += 2 * static_cast<std::uint64_t>(out);
    c.elementwise += 2 * y.elems();
  }
  if (relu) c.elementwise += y.elems();
  x = y;
  return c;
}

std::string fmt_double(double v, const char* f) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

const char* to_string(FlopConvention c) { return c == FlopConvention::Mac ? "mac" : "2mac"; }

FlopConvention parse_flop_convention(const std::string& s) {
  if (s == "mac") return FlopConvention::Mac;
  if (s == "2mac") return FlopConvention::TwoMac;
  throw ConfigError("flops convention: expected mac|2mac, got '" + s + "'");
}

double Cost::flops(FlopConvention c) const {
  const double m = static_cast<double>(macs);
  return (c == FlopConvention::TwoMac ? 2.0 * m : m) + static_cast<double>(elementwise);
}

Cost& Cost::operator+=(const Cost& o) {
  params += o.params;
  macs += o.macs;
  elementwise += o.elementwise;
  return *this;
}

Cost CostReport::total(const ArchConfig& config, const SubnetSpec& spec) const {
  if (spec.active_counts.size() != config.num_stages()) {
    throw DimensionError("cost: spec has wrong number of stages");
  }
  Cost t = stem;
  std::size_t off = 0;
  for (std::size_t j = 0; j < config.num_stages(); ++j) {
    if (spec.active_counts[j] > config.repeats[j]) throw ParameterError("cost: active count too large");
    for (std::size_t i = 0; i < spec.active_counts[j]; ++i) t += blocks.at(off + i);
    off += config.repeats[j];
  }
  t += head;
  return t;
}

CostReport cost_report(const ArchConfig& config, std::size_t input_h, std::size_t input_w) {
  config.validate();
  const bool conv = config.block != BlockKind::Dense;
  const bool norm = config.norm == NormKind::Batch;
  if (conv && (input_h == 0 || input_w == 0)) throw ParameterError("cost: input size must be > 0");

  CostReport r;
  Spatial x{config.input.channels, conv ? input_h : 1, conv ? input_w : 1};
  r.stem = unit_cost(x, config.stem.out_channels, conv ? config.stem.kernel : 1,
                     conv ? config.stem.stride : 1, conv, norm, true);

  for (std::size_t j = 0; j < config.num_stages(); ++j) {
    const std::size_t w = config.channels[j];
    const std::size_t out = config.stage_out_channels(j);
    for (std::size_t i = 0; i < config.repeats[j]; ++i) {
      const std::size_t stride = (conv && i == 0 && j > 0) ? 2 : 1;
      Spatial in = x;
      Cost c;
      switch (config.block) {
        case BlockKind::Dense:
          c += unit_cost(x, w, 1, 1, false, norm, true);
          c += unit_cost(x, w, 1, 1, false, norm, false);
          break;
        case BlockKind::Basic:
          c += unit_cost(x, w, 3, stride, true, norm, true);
          c += unit_cost(x, w, 3, 1, true, norm, false);
          break;
        case BlockKind::Bottleneck:
          c += unit_cost(x, w, 1, 1, true, norm, true);
          c += unit_cost(x, w, 3, stride, true, norm, true);
          c += unit_cost(x, out, 1, 1, true, norm, false);
          break;
      }
      if (in.c != out || stride != 1) {
        Spatial s = in;
        c += unit_cost(s, out, 1, stride, conv, norm, false);
      }
      c.elementwise += x.elems();  // residual add
      r.blocks.push_back(c);
    }
  }

  if (conv) r.head.elementwise += x.elems();  // global average pool
  Spatial f{x.c, 1, 1};
  if (config.head_norm) {
    r.head.params += 2 * static_cast<std::uint64_t>(x.c);
    r.head.elementwise += 2 * static_cast<std::uint64_t>(x.c);
  }
  r.head += unit_cost(f, config.num_classes, 1, 1, false, false, false);
  return r;
}

std::uint64_t count_params(const ArchConfig& config, const SubnetSpec& spec) {
  const bool conv = config.block != BlockKind::Dense;
  return cost_report(config, conv ? 32 : 1, conv ? 32 : 1).total(config, spec).params;
}

double count_flops(const ArchConfig& config, const SubnetSpec& spec, std::size_t input_h,
                   std::size_t input_w, FlopConvention convention) {
  return cost_report(config, input_h, input_w).total(config, spec).flops(convention);
}

ArchConfig resnet152_cifar_preset() {
  ArchConfig c;
  c.name = "resnet152_cifar";
  c.input = InputSpec{3, 32, 32};
  c.stem = StemSpec{StemKind::Conv, 64, 3, 1};
  c.block = BlockKind::Bottleneck;
  c.norm = NormKind::Batch;
  c.repeats = {3, 8, 36, 3};
  c.channels = {64, 128, 256, 512};
  c.num_classes = 100;
  c.rounding = RoundingRule::EntryPlusFloor;
  c.min_active = {1, 1, 1, 2};
  return c;
}

ArchConfig desk_dense_preset() {
  ArchConfig c;
  c.name = "desk_dense";
  c.input = InputSpec{2, 0, 0};
  c.stem = StemSpec{StemKind::Linear, 32, 1, 1};
  c.block = BlockKind::Dense;
  c.norm = NormKind::Batch;
  c.repeats = {3, 3};
  c.channels = {32, 32};
  c.num_classes = 3;
  c.head_norm = false;
  return c;
}

ArchConfig preset_by_name(const std::string& name) {
  if (name == "resnet152_cifar" || name == "resnet152") return resnet152_cifar_preset();
  if (name == "desk_dense" || name == "desk") return desk_dense_preset();
  throw ConfigError("unknown architecture preset '" + name + "'");
}

void CostTable::validate() const {
  if (rows.empty()) throw ContractError("cost table: no rows");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (!(rows[i].s > rows[i - 1].s)) throw ContractError("cost table: factors must increase");
  }
  if (rows.back().s != 1.0) throw ContractError("cost table: row for s=1.0 missing");
}

std::string CostTable::to_csv() const {
  std::ostringstream os;
  os << "s,params,flops,latency_ms\n";
  for (const auto& r : rows) {
    os << fmt_double(r.s, "%.6g") << ',' << r.params << ',' << fmt_double(r.flops, "%.17g") << ','
       << (r.latency_ms ? fmt_double(*r.latency_ms, "%.6f") : std::string()) << '\n';
  }
  return os.str();
}

std::string CostTable::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row{{"s", r.s}, {"params", r.params}, {"flops", r.flops}};
    row["latency_ms"] = r.latency_ms ? nlohmann::ordered_json(*r.latency_ms) : nullptr;
    j.push_back(row);
  }
  return j.dump(2) + "\n";
}

CostTable CostTable::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("cost table: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "s,params,flops,latency_ms") {
    throw ConfigError("cost table: expected header 's,params,flops,latency_ms', got '" + line + "'");
  }
  CostTable t;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 4) {
      throw ConfigError("cost table line " + std::to_string(lineno) + ": expected 4 columns");
    }
    try {
      CostRow r;
      r.s = std::stod(cells[0]);
      r.params = static_cast<std::uint64_t>(std::stod(cells[1]));
      r.flops = std::stod(cells[2]);
      if (!cells[3].empty()) r.latency_ms = std::stod(cells[3]);
      t.rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ConfigError("cost table line " + std::to_string(lineno) + ": malformed number");
    }
  }
  std::sort(t.rows.begin(), t.rows.end(), [](const CostRow& a, const CostRow& b) { return a.s < b.s; });
  t.validate();
  return t;
}

CostTable build_cost_table(const ArchConfig& config, const std::vector<double>& factors,
                           std::size_t input_h, std::size_t input_w, FlopConvention convention) {
  const CostReport report = cost_report(config, input_h, input_w);
  std::vector<double> fs = factors;
  fs.push_back(1.0);
  std::sort(fs.begin(), fs.end());
  fs.erase(std::unique(fs.begin(), fs.end()), fs.end());
  CostTable t;
  for (double s : fs) {
    const Cost c = report.total(config, derive_subnet(config, s));
    t.rows.push_back(CostRow{s, c.params, c.flops(convention), std::nullopt});
  }
  t.validate();
  return t;
}

double budget_select(const CostTable& table, const Budget& budget) {
  table.validate();
  if (!(budget.limit > 0.0)) throw ParameterError("budget limit must be > 0");
  auto cost = [&](const CostRow& r) -> double {
    switch (budget.kind) {
      case BudgetKind::Params:
        return static_cast<double>(r.params);
      case BudgetKind::Flops:
        return r.flops;
      case BudgetKind::Latency:
        if (!r.latency_ms) throw ContractError("budget_select: table has no latency column");
        return *r.latency_ms;
    }
    return 0.0;
  };
  double cheapest = cost(table.rows.front());
  for (auto it = table.rows.rbegin(); it != table.rows.rend(); ++it) {
    const double c = cost(*it);
    cheapest = std::min(cheapest, c);
    if (c <= budget.limit) return it->s;
  }
  throw InfeasibleBudgetError("no scaling factor fits the budget " +
                                  fmt_double(budget.limit, "%.6g") + "; cheapest row costs " +
                                  fmt_double(cheapest, "%.6g"),
                              cheapest);
}

LatencyStats measure_latency(const AdaptiveNet& net, const SubnetSpec& spec,
                             const Shape& input_shape, std::size_t warmup, std::size_t reps) {
  if (reps < 1) throw ParameterError("measure_latency: reps must be >= 1");
  Rng rng(0x1a7e);
  Tensor x(input_shape);
  for (auto& v : x.mutable_data()) v = rng.normal();
  const ForwardOptions opts = ForwardOptions::eval();
  for (std::size_t i = 0; i < warmup; ++i) (void)net.forward(x, spec, opts);

  LatencyStats st;
  st.reps = reps;
  st.samples_ms.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)net.forward(x, spec, opts);
    const auto t1 = std::chrono::steady_clock::now();
    st.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double sum = 0.0;
  for (double v : st.samples_ms) sum += v;
  st.mean_ms = sum / static_cast<double>(reps);
  double ss = 0.0;
  for (double v : st.samples_ms) ss += (v - st.mean_ms) * (v - st.mean_ms);
  st.stddev_ms = reps > 1 ? std::sqrt(ss / static_cast<double>(reps - 1)) : 0.0;
  st.cv = st.mean_ms > 0.0 ? st.stddev_ms / st.mean_ms : 0.0;
  return st;
}

}  // namespace coop
