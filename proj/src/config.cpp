#include "coop/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "coop/checkpoint.hpp"
#include "coop/cost_model.hpp"
#include "coop/errors.hpp"

namespace coop {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Reads keys of one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  template <class F>
  void get_with(const char* key, F&& parse) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      parse(j_.at(key));
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    } catch (const ConfigError& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json& sub(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check_factor(double s, const std::string& where) {
  if (!(s > 0.0 && s <= 1.0)) throw ConfigError(where + ": factors must lie in (0, 1]");
}

}  // namespace

const char* to_string(SubnetMechanism m) { return m == SubnetMechanism::Truncation ? "truncation" : "mask"; }

const char* to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::Baseline:
      return "baseline";
    case TrainMethod::Sfsl:
      return "sfsl";
    case TrainMethod::TeamMT:
      return "teammt";
    case TrainMethod::Coop:
      return "coop";
  }
  return "?";
}

const char* to_string(SamplerKind k) { return k == SamplerKind::Static ? "static" : "random"; }

SubnetMechanism parse_mechanism(const std::string& s) {
  if (s == "truncation") return SubnetMechanism::Truncation;
  if (s == "mask") return SubnetMechanism::Mask;
  throw ConfigError("expected truncation|mask, got '" + s + "'");
}

TrainMethod parse_method(const std::string& s) {
  if (s == "baseline") return TrainMethod::Baseline;
  if (s == "sfsl") return TrainMethod::Sfsl;
  if (s == "teammt") return TrainMethod::TeamMT;
  if (s == "coop") return TrainMethod::Coop;
  throw ConfigError("expected baseline|sfsl|teammt|coop, got '" + s + "'");
}

SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "static") return SamplerKind::Static;
  if (s == "random") return SamplerKind::Random;
  throw ConfigError("expected static|random, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (!(warmup_lr > 0.0)) throw ConfigError("train.warmup_lr: must be > 0");
  if (rates.empty() || rates.size() != boundaries.size() + 1) {
    throw ConfigError("train.rates: need exactly one more rate than boundaries");
  }
  for (double r : rates)
    if (!(r > 0.0)) throw ConfigError("train.rates: all rates must be > 0");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) throw ConfigError("train.boundaries: must be strictly increasing");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum: must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be >= 0");
  if (eval_factors.empty()) throw ConfigError("train.eval_factors: must not be empty");
  for (double s : eval_factors) check_factor(s, "train.eval_factors");
  if (eval_every < 1) throw ConfigError("train.eval_every: must be >= 1");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip: must be >= 0");
}

std::vector<std::size_t> scaled_boundaries(std::size_t epochs) {
  std::vector<std::size_t> out;
  for (double b : {75.0, 130.0, 180.0}) {
    out.push_back(static_cast<std::size_t>(std::lround(b * static_cast<double>(epochs) / 200.0)));
  }
  return out;
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch < cfg.warmup_epochs) return cfg.warmup_lr;
  std::size_t i = 0;
  while (i < cfg.boundaries.size() && epoch >= cfg.boundaries[i]) ++i;
  return cfg.rates.at(i);
}

void SamplerConfig::validate() const {
  if (kind == SamplerKind::Static) {
    if (static_factors.empty()) throw ConfigError("sampler.static_factors: must not be empty");
    for (double s : static_factors) check_factor(s, "sampler.static_factors");
    if (!std::is_sorted(static_factors.begin(), static_factors.end(), std::greater<>())) {
      throw ConfigError("sampler.static_factors: must be sorted descending");
    }
    if (static_factors.front() != 1.0) throw ConfigError("sampler.static_factors: must contain 1.0");
  }
}

void MaskConfig::validate() const {
  if (!(temperature > 0.0 && temperature <= 1.0)) throw ConfigError("mask.temperature: must lie in (0, 1]");
  if (!(budget_weight >= 0.0)) throw ConfigError("mask.budget_weight: must be >= 0");
}

void ExperimentConfig::validate() const {
  arch.validate();
  train.validate();
  sampler.validate();
  mask.validate();
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(to_json(*this).dump())); }

ojson to_json(const ArchConfig& c) {
  return ojson{{"name", c.name},
               {"input", {{"channels", c.input.channels}, {"height", c.input.height}, {"width", c.input.width}}},
               {"stem",
                {{"kind", to_string(c.stem.kind)},
                 {"out_channels", c.stem.out_channels},
                 {"kernel", c.stem.kernel},
                 {"stride", c.stem.stride}}},
               {"block", to_string(c.block)},
               {"norm", to_string(c.norm)},
               {"repeats", c.repeats},
               {"channels", c.channels},
               {"num_classes", c.num_classes},
               {"rounding", to_string(c.rounding)},
               {"min_active", c.min_active},
               {"head_norm", c.head_norm}};
}

ojson to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  ojson data{{"kind", to_string(c.data.spec.kind)},
             {"n", c.data.spec.n},
             {"classes", c.data.spec.classes},
             {"noise", c.data.spec.noise},
             {"seed", c.data.spec.seed},
             {"grid", c.data.spec.grid}};
  if (c.data.path) data["path"] = *c.data.path;
  return ojson{
      {"arch", to_json(c.arch)},
      {"train",
       {{"epochs", t.epochs},
        {"warmup_lr", t.warmup_lr},
        {"warmup_epochs", t.warmup_epochs},
        {"rates", t.rates},
        {"boundaries", t.boundaries},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"batch_size", t.batch_size},
        {"seed", t.seed},
        {"mechanism", to_string(t.mechanism)},
        {"method", to_string(t.method)},
        {"eval_factors", t.eval_factors},
        {"eval_every", t.eval_every},
        {"grad_clip", t.grad_clip},
        {"zero_init_residual", t.zero_init_residual}}},
      {"sampler",
       {{"kind", to_string(c.sampler.kind)},
        {"static_factors", c.sampler.static_factors},
        {"draws", c.sampler.draws}}},
      {"mask",
       {{"temperature", c.mask.temperature},
        {"budget_regularizer", c.mask.budget_regularizer},
        {"budget_weight", c.mask.budget_weight}}},
      {"data", data}};
}

ArchConfig arch_from_json(const json& j) {
  Section s(j, "arch");
  ArchConfig c;
  if (s.has("preset")) {
    std::string name;
    s.get("preset", name);
    c = preset_by_name(name);
  }
  s.get("name", c.name);
  if (s.has("input")) {
    Section in(s.sub("input"), "arch.input");
    in.get("channels", c.input.channels);
    in.get("height", c.input.height);
    in.get("width", c.input.width);
    in.finish();
  }
  if (s.has("stem")) {
    Section st(s.sub("stem"), "arch.stem");
    st.get_with("kind", [&](const json& v) { c.stem.kind = parse_stem_kind(v.get<std::string>()); });
    st.get("out_channels", c.stem.out_channels);
    st.get("kernel", c.stem.kernel);
    st.get("stride", c.stem.stride);
    st.finish();
  }
  s.get_with("block", [&](const json& v) { c.block = parse_block_kind(v.get<std::string>()); });
  s.get_with("norm", [&](const json& v) { c.norm = parse_norm_kind(v.get<std::string>()); });
  s.get("repeats", c.repeats);
  s.get("channels", c.channels);
  s.get("num_classes", c.num_classes);
  s.get_with("rounding", [&](const json& v) { c.rounding = parse_rounding_rule(v.get<std::string>()); });
  s.get("min_active", c.min_active);
  s.get("head_norm", c.head_norm);
  s.finish();
  c.validate();
  return c;
}

ExperimentConfig experiment_from_json(const json& j) {
  Section root(j, "config");
  ExperimentConfig c;
  c.arch = desk_dense_preset();
  if (root.has("arch")) c.arch = arch_from_json(root.sub("arch"));
  if (root.has("train")) {
    Section s(root.sub("train"), "train");
    auto& t = c.train;
    s.get("epochs", t.epochs);
    s.get("warmup_lr", t.warmup_lr);
    s.get("warmup_epochs", t.warmup_epochs);
    s.get("rates", t.rates);
    s.get_with("boundaries", [&](const json& v) {
      if (v.is_string()) {
        if (v.get<std::string>() != "scaled") throw ConfigError("expected a list or \"scaled\"");
        t.boundaries = scaled_boundaries(t.epochs);
      } else {
        t.boundaries = v.get<std::vector<std::size_t>>();
      }
    });
    s.get("momentum", t.momentum);
    s.get("weight_decay", t.weight_decay);
    s.get("batch_size", t.batch_size);
    s.get("seed", t.seed);
    s.get_with("mechanism", [&](const json& v) { t.mechanism = parse_mechanism(v.get<std::string>()); });
    s.get_with("method", [&](const json& v) { t.method = parse_method(v.get<std::string>()); });
    s.get("eval_factors", t.eval_factors);
    s.get("eval_every", t.eval_every);
    s.get("grad_clip", t.grad_clip);
    s.get("zero_init_residual", t.zero_init_residual);
    s.finish();
  }
  if (root.has("sampler")) {
    Section s(root.sub("sampler"), "sampler");
    s.get_with("kind", [&](const json& v) { c.sampler.kind = parse_sampler_kind(v.get<std::string>()); });
    s.get("static_factors", c.sampler.static_factors);
    s.get("draws", c.sampler.draws);
    s.finish();
  }
  if (root.has("mask")) {
    Section s(root.sub("mask"), "mask");
    s.get("temperature", c.mask.temperature);
    s.get("budget_regularizer", c.mask.budget_regularizer);
    s.get("budget_weight", c.mask.budget_weight);
    s.finish();
  }
  if (root.has("data")) {
    Section s(root.sub("data"), "data");
    auto& d = c.data.spec;
    s.get_with("kind", [&](const json& v) { d.kind = parse_data_kind(v.get<std::string>()); });
    s.get("n", d.n);
    s.get("classes", d.classes);
    s.get("noise", d.noise);
    s.get("seed", d.seed);
    s.get("grid", d.grid);
    if (s.has("path")) {
      std::string p;
      s.get("path", p);
      c.data.path = p;
    }
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FileError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
  return experiment_from_json(j);
}

bool apply_seed_override(ExperimentConfig& cfg) {
  const char* v = std::getenv("COOP_SEED");
  if (!v || !*v) return false;
  char* end = nullptr;
  const unsigned long long seed = std::strtoull(v, &end, 10);
  if (*end != '\0') throw ConfigError("COOP_SEED: expected a non-negative integer, got '" + std::string(v) + "'");
  cfg.train.seed = seed;
  return true;
}

}  // namespace coop
