#include "coop/adaptive_net.hpp"

#include <algorithm>
#include <cmath>

#include "coop/errors.hpp"

namespace coop {

namespace {

constexpr double kRoundingSlack = 1e-9;

std::size_t rounded_count(RoundingRule rule, double s, std::size_t r) {
  const double v = s * static_cast<double>(r);
  double c = 0.0;
  switch (rule) {
    case RoundingRule::Ceil:
      c = std::ceil(v - kRoundingSlack);
      break;
    case RoundingRule::Floor:
      c = std::floor(v + kRoundingSlack);
      break;
    case RoundingRule::Round:
      c = std::floor(v + 0.5 + kRoundingSlack);
      break;
    case RoundingRule::EntryPlusFloor:
      c = 1.0 + std::floor(s * static_cast<double>(r - 1) + kRoundingSlack);
      break;
  }
  return c < 0.0 ? 0 : static_cast<std::size_t>(c);
}

// "fc1" -> "bn1", "conv" -> "bn", "proj" -> "proj_bn".
std::string norm_label(const std::string& unit) {
  if (unit == "proj") return "proj_bn";
  const char last = unit.back();
  return (last >= '0' && last <= '9') ? std::string("bn") + last : std::string("bn");
}

}  // namespace

// ---------------------------------------------------------------------------
// ArchConfig / SubnetSpec

std::size_t ArchConfig::total_blocks() const {
  std::size_t n = 0;
  for (auto r : repeats) n += r;
  return n;
}

std::size_t ArchConfig::stage_out_channels(std::size_t stage) const {
  const auto c = channels.at(stage);
  return block == BlockKind::Bottleneck ? c * kBottleneckExpansion : c;
}

void ArchConfig::validate() const {
  if (repeats.empty()) throw ConfigError("arch.repeats: at least one stage required");
  if (channels.size() != repeats.size()) {
    throw ConfigError("arch.channels: length " + std::to_string(channels.size()) +
                      " != number of stages " + std::to_string(repeats.size()));
  }
  for (auto r : repeats)
    if (r < 1) throw ConfigError("arch.repeats: every stage needs >= 1 block");
  for (auto c : channels)
    if (c < 1) throw ConfigError("arch.channels: every stage needs >= 1 channel");
  if (!min_active.empty() && min_active.size() != repeats.size()) {
    throw ConfigError("arch.min_active: length must equal number of stages");
  }
  if (num_classes < 2) throw ConfigError("arch.num_classes: must be >= 2");
  if (input.channels < 1) throw ConfigError("arch.input.channels: must be >= 1");
  if (stem.out_channels < 1) throw ConfigError("arch.stem.out_channels: must be >= 1");
  if (block != BlockKind::Dense && !input.is_image()) {
    throw ConfigError("arch.block: convolutional blocks need image input (input.height > 0)");
  }
  if (block == BlockKind::Dense && input.is_image()) {
    throw ConfigError("arch.block: dense blocks need vector input (input.height == 0)");
  }
  if (input.is_image() && stem.kind != StemKind::Conv) {
    throw ConfigError("arch.stem.kind: image input needs a conv stem");
  }
  if (!input.is_image() && stem.kind != StemKind::Linear) {
    throw ConfigError("arch.stem.kind: vector input needs a linear stem");
  }
  if (input.is_image() && (input.width < 1 || stem.stride < 1 || stem.kernel < 1)) {
    throw ConfigError("arch.input/stem: invalid spatial configuration");
  }
}

std::size_t SubnetSpec::total_active() const {
  std::size_t n = 0;
  for (auto c : active_counts) n += c;
  return n;
}

SubnetSpec derive_subnet(const ArchConfig& config, double s) {
  if (!(s > 0.0) || s > 1.0) {
    throw ParameterError("scaling factor must lie in (0, 1], got " + std::to_string(s));
  }
  SubnetSpec spec;
  spec.scaling_factor = s;
  for (std::size_t j = 0; j < config.num_stages(); ++j) {
    const auto r = config.repeats[j];
    std::size_t lo = config.min_active.empty() ? 1 : std::max<std::size_t>(1, config.min_active[j]);
    lo = std::min(lo, r);
    spec.active_counts.push_back(std::clamp(rounded_count(config.rounding, s, r), lo, r));
  }
  return spec;
}

SubnetSpec full_subnet(const ArchConfig& config) {
  return SubnetSpec{1.0, config.repeats};
}

std::vector<double> prefix_mask(const ArchConfig& config, const SubnetSpec& spec) {
  if (spec.active_counts.size() != config.num_stages()) {
    throw DimensionError("prefix_mask: spec has wrong number of stages");
  }
  std::vector<double> mask;
  mask.reserve(config.total_blocks());
  for (std::size_t j = 0; j < config.num_stages(); ++j)
    for (std::size_t i = 0; i < config.repeats[j]; ++i)
      mask.push_back(i < spec.active_counts[j] ? 1.0 : 0.0);
  return mask;
}

std::vector<std::size_t> stage_entry_blocks(const ArchConfig& config) {
  std::vector<std::size_t> out;
  std::size_t off = 0;
  for (auto r : config.repeats) {
    out.push_back(off);
    off += r;
  }
  return out;
}

// ---------------------------------------------------------------------------
// AdaptiveNet construction

AdaptiveNet::Unit AdaptiveNet::make_unit(std::string label, bool conv, std::size_t in,
                                         std::size_t out, std::size_t kernel, std::size_t stride,
                                         bool with_norm, bool relu, Rng& rng) const {
  Unit u;
  u.label = std::move(label);
  u.conv = conv;
  u.stride = stride;
  u.relu = relu;
  const std::size_t fan_in = in * kernel * kernel;
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  if (conv) {
    u.padding = kernel / 2;
    Tensor w({out, in, kernel, kernel}, true);
    for (auto& v : w.mutable_data()) v = stddev * rng.normal();
    u.weight = w;
  } else {
    Tensor w({in, out}, true);
    for (auto& v : w.mutable_data()) v = stddev * rng.normal();
    u.weight = w;
    u.bias = Tensor({out}, true);
  }
  if (with_norm) {
    u.norm = Norm{Tensor::full({out}, 1.0, true), Tensor({out}, true), RunningStats(out)};
  }
  return u;
}

AdaptiveNet::AdaptiveNet(ArchConfig config, std::uint64_t seed, std::string name,
                         InitOptions init)
    : config_(std::move(config)), name_(std::move(name)) {
  config_.validate();
  Rng rng(seed);
  const bool norm = config_.norm == NormKind::Batch;
  const bool conv = config_.block != BlockKind::Dense;

  stem_.push_back(make_unit(conv ? "conv" : "fc", conv, config_.input.channels,
                            config_.stem.out_channels, conv ? config_.stem.kernel : 1,
                            conv ? config_.stem.stride : 1, norm, true, rng));
  if (conv) stem_.back().padding = config_.stem.kernel / 2;

  std::size_t in = config_.stem.out_channels;
  for (std::size_t j = 0; j < config_.num_stages(); ++j) {
    stage_offset_.push_back(blocks_.size());
    const std::size_t w = config_.channels[j];
    const std::size_t out = config_.stage_out_channels(j);
    for (std::size_t i = 0; i < config_.repeats[j]; ++i) {
      Block b;
      b.stage = j;
      b.index = i;
      const std::size_t bin = i == 0 ? in : out;
      const std::size_t stride = (conv && i == 0 && j > 0) ? 2 : 1;
      switch (config_.block) {
        case BlockKind::Dense:
          b.branch.push_back(make_unit("fc1", false, bin, w, 1, 1, norm, true, rng));
          b.branch.push_back(make_unit("fc2", false, w, w, 1, 1, norm, false, rng));
          break;
        case BlockKind::Basic:
          b.branch.push_back(make_unit("conv1", true, bin, w, 3, stride, norm, true, rng));
          b.branch.push_back(make_unit("conv2", true, w, w, 3, 1, norm, false, rng));
          break;
        case BlockKind::Bottleneck:
          b.branch.push_back(make_unit("conv1", true, bin, w, 1, 1, norm, true, rng));
          b.branch.push_back(make_unit("conv2", true, w, w, 3, stride, norm, true, rng));
          b.branch.push_back(make_unit("conv3", true, w, out, 1, 1, norm, false, rng));
          break;
      }
      if (bin != out || stride != 1) {
        b.shortcut = make_unit("proj", conv, bin, out, 1, stride, norm, false, rng);
      }
      if (init.zero_init_residual) {
        Unit& last = b.branch.back();
        if (last.norm) {
          for (auto& v : last.norm->gamma.mutable_data()) v = 0.0;
        } else {
          for (auto& v : last.weight.mutable_data()) v = 0.0;
          if (last.bias.defined())
            for (auto& v : last.bias.mutable_data()) v = 0.0;
        }
      }
      blocks_.push_back(std::move(b));
    }
    in = out;
  }

  // LeCun-normal classifier: std sqrt(1/fan_in) instead of He's sqrt(2/fan_in).
  head_ = make_unit("fc", false, in, config_.num_classes, 1, 1, false, false, rng);
  for (auto& v : head_.weight.mutable_data()) v *= std::sqrt(0.5);
  if (config_.head_norm) {
    head_gamma_ = Tensor::full({in}, 1.0, true);
    head_beta_ = Tensor({in}, true);
  }
}

// ---------------------------------------------------------------------------
// Forward

Tensor AdaptiveNet::apply(const Unit& u, const Tensor& x, const ForwardOptions& opts) const {
  Tensor y = u.conv ? conv2d(x, u.weight, u.bias, u.stride, u.padding) : linear(x, u.weight, u.bias);
  if (u.norm) {
    const bool update = opts.norm == NormMode::Train && opts.update_running_stats;
    y = batch_norm(y, u.norm->gamma, u.norm->beta, u.norm->stats, opts.norm, update);
  }
  if (u.relu) y = relu(y);
  return y;
}

void AdaptiveNet::check_input(const Tensor& x) const {
  const auto& in = config_.input;
  if (in.is_image()) {
    if (x.rank() != 4 || x.dim(1) != in.channels) {
      throw DimensionError("forward: expected [Bx" + std::to_string(in.channels) +
                           "xHxW] input, got " + shape_str(x.shape()));
    }
  } else if (x.rank() != 2 || x.dim(1) != in.channels) {
    throw DimensionError("forward: expected [Bx" + std::to_string(in.channels) +
                         "] input, got " + shape_str(x.shape()));
  }
}

Tensor AdaptiveNet::stem_forward(const Tensor& x, const ForwardOptions& opts) const {
  check_input(x);
  Tensor y = x;
  for (const auto& u : stem_) y = apply(u, y, opts);
  return y;
}

Tensor AdaptiveNet::head_forward(const Tensor& features) const {
  Tensor f = features.rank() == 4 ? global_avg_pool(features) : features;
  if (head_gamma_.defined()) f = layer_norm(f, head_gamma_, head_beta_);
  return linear(f, head_.weight, head_.bias);
}

Tensor AdaptiveNet::branch_forward(std::size_t block, const Tensor& x,
                                   const ForwardOptions& opts) const {
  const Block& b = blocks_.at(block);
  Tensor y = x;
  for (const auto& u : b.branch) y = apply(u, y, opts);
  return y;
}

Tensor AdaptiveNet::shortcut_forward(std::size_t block, const Tensor& x,
                                     const ForwardOptions& opts) const {
  const Block& b = blocks_.at(block);
  return b.shortcut ? apply(*b.shortcut, x, opts) : x;
}

Tensor AdaptiveNet::residual_forward(std::size_t block, const Tensor& x,
                                     const ForwardOptions& opts) const {
  return add(branch_forward(block, x, opts), shortcut_forward(block, x, opts));
}

Tensor AdaptiveNet::forward(const Tensor& x, const SubnetSpec& spec,
                            const ForwardOptions& opts) const {
  if (spec.active_counts.size() != config_.num_stages()) {
    throw DimensionError("forward: spec has " + std::to_string(spec.active_counts.size()) +
                         " stages, net has " + std::to_string(config_.num_stages()));
  }
  for (std::size_t j = 0; j < config_.num_stages(); ++j) {
    if (spec.active_counts[j] < 1 || spec.active_counts[j] > config_.repeats[j]) {
      throw ParameterError("forward: active count out of range at stage " + std::to_string(j));
    }
  }
  Tensor y = stem_forward(x, opts);
  for (std::size_t j = 0; j < config_.num_stages(); ++j)
    for (std::size_t i = 0; i < spec.active_counts[j]; ++i)
      y = residual_forward(stage_offset_[j] + i, y, opts);
  return head_forward(y);
}

Tensor AdaptiveNet::forward_masked(const Tensor& x, const Tensor& mask,
                                   const ForwardOptions& opts) const {
  if (mask.numel() != blocks_.size()) {
    throw DimensionError("forward_masked: mask length " + std::to_string(mask.numel()) +
                         " != block count " + std::to_string(blocks_.size()));
  }
  auto m = mask.data();
  Tensor y = stem_forward(x, opts);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].shortcut && m[i] != 1.0) {
      throw ContractError("forward_masked: projection block " + std::to_string(i) +
                          " cannot be deactivated");
    }
    if (opts.skip_inactive) {
      if (m[i] == 0.0) continue;
      if (m[i] != 1.0) throw ContractError("forward_masked: skip mode needs a binary mask");
      y = residual_forward(i, y, opts);
    } else {
      y = add(broadcast_mul(branch_forward(i, y, opts), select(mask, i)),
              shortcut_forward(i, y, opts));
    }
  }
  return head_forward(y);
}

// ---------------------------------------------------------------------------
// Introspection

std::size_t AdaptiveNet::block_index(std::size_t stage, std::size_t index) const {
  if (stage >= config_.num_stages() || index >= config_.repeats[stage]) {
    throw IndexError("block_index: (" + std::to_string(stage) + "," + std::to_string(index) +
                     ") out of range");
  }
  return stage_offset_[stage] + index;
}

std::pair<std::size_t, std::size_t> AdaptiveNet::block_position(std::size_t block) const {
  const Block& b = blocks_.at(block);
  return {b.stage, b.index};
}

bool AdaptiveNet::has_projection(std::size_t block) const {
  return blocks_.at(block).shortcut.has_value();
}

void AdaptiveNet::collect(const std::string& prefix, const Unit& u,
                          std::vector<NamedTensor>& out) {
  out.push_back({prefix + u.label + ".weight", u.weight});
  if (u.bias.defined()) out.push_back({prefix + u.label + ".bias", u.bias});
  if (u.norm) {
    const std::string bn = norm_label(u.label);
    out.push_back({prefix + bn + ".gamma", u.norm->gamma});
    out.push_back({prefix + bn + ".beta", u.norm->beta});
  }
}

std::vector<NamedTensor> AdaptiveNet::named_parameters() const {
  std::vector<NamedTensor> out;
  for (const auto& u : stem_) collect(name_ + "/stem/0/", u, out);
  for (const auto& b : blocks_) {
    const std::string prefix =
        name_ + "/s" + std::to_string(b.stage) + "/b" + std::to_string(b.index) + "/";
    for (const auto& u : b.branch) collect(prefix, u, out);
    if (b.shortcut) collect(prefix, *b.shortcut, out);
  }
  if (head_gamma_.defined()) {
    out.push_back({name_ + "/head/0/ln.gamma", head_gamma_});
    out.push_back({name_ + "/head/0/ln.beta", head_beta_});
  }
  collect(name_ + "/head/0/", head_, out);
  return out;
}

std::vector<Tensor> AdaptiveNet::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

std::vector<NamedBuffer> AdaptiveNet::named_buffers() {
  std::vector<NamedBuffer> out;
  auto add_unit = [&out](const std::string& prefix, Unit& u) {
    if (!u.norm) return;
    const std::string bn = norm_label(u.label);
    out.push_back({prefix + bn + ".running_mean", &u.norm->stats.mean});
    out.push_back({prefix + bn + ".running_var", &u.norm->stats.var});
  };
  for (auto& u : stem_) add_unit(name_ + "/stem/0/", u);
  for (auto& b : blocks_) {
    const std::string prefix =
        name_ + "/s" + std::to_string(b.stage) + "/b" + std::to_string(b.index) + "/";
    for (auto& u : b.branch) add_unit(prefix, u);
    if (b.shortcut) add_unit(prefix, *b.shortcut);
  }
  return out;
}

std::size_t AdaptiveNet::unit_params(const Unit& u) {
  std::size_t n = u.weight.numel();
  if (u.bias.defined()) n += u.bias.numel();
  if (u.norm) n += u.norm->gamma.numel() + u.norm->beta.numel();
  return n;
}

std::size_t AdaptiveNet::parameter_count(const SubnetSpec& spec) const {
  if (spec.active_counts.size() != config_.num_stages()) {
    throw DimensionError("parameter_count: spec has wrong number of stages");
  }
  std::size_t n = unit_params(head_);
  if (head_gamma_.defined()) n += head_gamma_.numel() + head_beta_.numel();
  for (const auto& u : stem_) n += unit_params(u);
  for (const auto& b : blocks_) {
    if (b.index >= spec.active_counts[b.stage]) continue;
    for (const auto& u : b.branch) n += unit_params(u);
    if (b.shortcut) n += unit_params(*b.shortcut);
  }
  return n;
}

// ---------------------------------------------------------------------------
// Enum names

const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::Dense: return "dense";
    case BlockKind::Basic: return "basic";
    case BlockKind::Bottleneck: return "bottleneck";
  }
  return "?";
}

const char* to_string(NormKind k) { return k == NormKind::Batch ? "batch" : "none"; }

const char* to_string(StemKind k) { return k == StemKind::Linear ? "linear" : "conv"; }

const char* to_string(RoundingRule r) {
  switch (r) {
    case RoundingRule::Ceil: return "ceil";
    case RoundingRule::Floor: return "floor";
    case RoundingRule::Round: return "round";
    case RoundingRule::EntryPlusFloor: return "entry_plus_floor";
  }
  return "?";
}

BlockKind parse_block_kind(const std::string& s) {
  if (s == "dense") return BlockKind::Dense;
  if (s == "basic") return BlockKind::Basic;
  if (s == "bottleneck") return BlockKind::Bottleneck;
  throw ConfigError("arch.block: unknown block kind '" + s + "'");
}

NormKind parse_norm_kind(const std::string& s) {
  if (s == "batch") return NormKind::Batch;
  if (s == "none") return NormKind::None;
  throw ConfigError("arch.norm: unknown norm kind '" + s + "'");
}

StemKind parse_stem_kind(const std::string& s) {
  if (s == "linear") return StemKind::Linear;
  if (s == "conv") return StemKind::Conv;
  throw ConfigError("arch.stem.kind: unknown stem kind '" + s + "'");
}

RoundingRule parse_rounding_rule(const std::string& s) {
  if (s == "ceil") return RoundingRule::Ceil;
  if (s == "floor") return RoundingRule::Floor;
  if (s == "round") return RoundingRule::Round;
  if (s == "entry_plus_floor") return RoundingRule::EntryPlusFloor;
  throw ConfigError("arch.rounding: unknown rounding rule '" + s + "'");
}

}  // namespace coop
