#include "coop/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "coop/cost_model.hpp"
#include "coop/errors.hpp"

namespace coop {

namespace {

using ojson = nlohmann::ordered_json;

enum Stream : std::uint64_t { kInit = 1, kShuffle = 2, kFactors = 3, kGumbel = 4 };

std::string factor_key(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", s);
  return buf;
}

std::vector<std::string> roles_for(TrainMethod m) {
  switch (m) {
    case TrainMethod::Baseline:
    case TrainMethod::Sfsl:
      return {"teammate_a"};
    case TrainMethod::TeamMT:
      return {"teammate_a", "teammate_b"};
    case TrainMethod::Coop:
      return {"teammate_a", "teammate_b", "leader"};
  }
  return {};
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

template <class Forward>
double accuracy_of(const Dataset& data, std::size_t batch, Forward&& fwd) {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = fwd(data.batch(idx));
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto pred = argmax_row(logits.data().subspan(r * classes, classes));
      if (static_cast<int>(pred) == data.labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto p : params)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

const std::vector<double>& random_sampler_pool() {
  static const std::vector<double> pool = [] {
    std::vector<double> p;
    for (int k = 3; k <= 9; ++k) p.push_back(k / 10.0);
    return p;
  }();
  return pool;
}

std::vector<double> sample_factors(const SamplerConfig& sampler, Rng& rng) {
  std::vector<double> out;
  if (sampler.kind == SamplerKind::Static) {
    out = sampler.static_factors;
  } else {
    const auto& pool = random_sampler_pool();
    out = {1.0, 0.2};
    for (std::size_t d = 0; d < sampler.draws; ++d) out.push_back(pool[rng.below(pool.size())]);
  }
  std::sort(out.begin(), out.end(), std::greater<>());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ojson EpochRecord::to_json() const {
  ojson acc = ojson::object();
  for (const auto& [role, per] : accuracy) {
    ojson r = ojson::object();
    for (const auto& [s, a] : per) r[factor_key(s)] = a;
    acc[role] = r;
  }
  return ojson{{"schema", kMetricsSchemaVersion},
               {"epoch", epoch},
               {"lr", lr},
               {"factors", factors},
               {"loss",
                {{"self_a", loss.self_a},
                 {"self_b", loss.self_b},
                 {"interactive", loss.interactive},
                 {"guided", loss.guided},
                 {"total", loss.total}}},
               {"accuracy", acc},
               {"wall_time_s", wall_time_s}};
}

ojson deterministic_view(const ojson& record) {
  ojson r = record;
  r.erase("wall_time_s");
  return r;
}

double evaluate(const AdaptiveNet& net, double s, const Dataset& data, std::size_t batch) {
  const SubnetSpec spec = derive_subnet(net.config(), s);
  const ForwardOptions opts = ForwardOptions::eval();
  return accuracy_of(data, batch, [&](const Tensor& x) { return net.forward(x, spec, opts); });
}

double evaluate_masked(const AdaptiveNet& net, const MaskParams& mask, const GumbelConfig& gumbel,
                       double s, const Dataset& data, std::size_t batch) {
  const std::size_t k = k_for_scaling(net.config(), s);
  const BinaryMask m = sample_mask(net.config(), mask, k, gumbel, nullptr);
  const Tensor values = stopgrad(m.values);
  const ForwardOptions opts = ForwardOptions::eval();
  return accuracy_of(data, batch, [&](const Tensor& x) { return net.forward_masked(x, values, opts); });
}

Dataset dataset_for(const ExperimentConfig& config) {
  Dataset d = config.data.path ? load_dataset(*config.data.path) : gen_data(config.data.spec);
  if (d.num_classes > config.arch.num_classes) {
    throw ConfigError("data: " + std::to_string(d.num_classes) + " classes exceed arch.num_classes " +
                      std::to_string(config.arch.num_classes));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(ExperimentConfig config, Dataset data)
    : config_(std::move(config)),
      data_(std::move(data)),
      shuffle_rng_(derive_seed(config_.train.seed, kShuffle)),
      factor_rng_(derive_seed(config_.train.seed, kFactors)),
      gumbel_rng_(derive_seed(config_.train.seed, kGumbel)) {
  config_.validate();
  data_.validate();
  if (data_.num_classes > config_.arch.num_classes) {
    throw ConfigError("data has more classes than arch.num_classes");
  }
  gumbel_.temperature = config_.mask.temperature;
  const SgdConfig sgd{config_.train.momentum, config_.train.weight_decay};
  const auto roles = roles_for(config_.train.method);
  for (std::size_t r = 0; r < roles.size(); ++r) {
    const std::uint64_t seed = derive_seed(derive_seed(config_.train.seed, kInit), r);
    AdaptiveNet net(config_.arch, seed, roles[r], InitOptions{config_.train.zero_init_residual});
    std::vector<Tensor> params = net.parameters();
    std::optional<MaskParams> mask;
    if (config_.train.mechanism == SubnetMechanism::Mask && roles[r] != "leader") {
      mask = MaskParams::uniform(config_.arch);
      params.push_back(mask->score_logits);
    }
    members_.push_back(Member{roles[r], std::move(net), std::move(mask), Sgd(std::move(params), sgd)});
  }
}

Member& Trainer::member(const std::string& role) {
  for (auto& m : members_)
    if (m.role == role) return m;
  throw ContractError("trainer: no member '" + role + "'");
}

const Member& Trainer::member(const std::string& role) const {
  return const_cast<Trainer*>(this)->member(role);
}

LossTerms Trainer::loss_terms() const {
  LossTerms t;
  switch (config_.train.method) {
    case TrainMethod::Baseline:
      t = {false, false, false, true};
      break;
    case TrainMethod::Sfsl:
      t = {true, false, false, false};
      break;
    case TrainMethod::TeamMT:
      t = {true, true, false, false};
      break;
    case TrainMethod::Coop:
      t = {true, true, true, false};
      break;
  }
  return t;
}

FactorLogits Trainer::forward_member(Member& m, const Tensor& x, const std::vector<double>& factors) {
  FactorLogits out;
  const ArchConfig& arch = m.net.config();
  // Full depth first: it alone updates normalization statistics.
  out.emplace(1.0, m.net.forward(x, full_subnet(arch), ForwardOptions::train(true)));
  for (double s : factors) {
    if (s == 1.0) continue;
    if (config_.train.mechanism == SubnetMechanism::Truncation) {
      out.emplace(s, m.net.forward(x, derive_subnet(arch, s), ForwardOptions::train(false)));
    } else {
      const BinaryMask mask = sample_mask(arch, *m.mask, k_for_scaling(arch, s), gumbel_, &gumbel_rng_);
      out.emplace(s, m.net.forward_masked(x, mask.values, ForwardOptions::train(false)));
      drawn_masks_.push_back(mask);
    }
  }
  return out;
}

CohortOutputs Trainer::forward_cohort(const Tensor& x, const std::vector<int>& labels,
                                      const std::vector<double>& factors) {
  CohortOutputs out;
  out.labels = labels;
  for (auto& m : members_) {
    if (m.role == "leader") {
      out.leader = m.net.forward(x, full_subnet(m.net.config()), ForwardOptions::train(true));
    } else if (m.role == "teammate_a") {
      out.teammate_a = forward_member(m, x, factors);
    } else {
      out.teammate_b = forward_member(m, x, factors);
    }
  }
  return out;
}

LossBreakdown Trainer::train_step(const std::vector<std::size_t>& batch,
                                  const std::vector<double>& factors, double lr) {
  for (auto& m : members_) m.optimizer.zero_grad();
  drawn_masks_.clear();
  const Tensor x = data_.batch(batch);
  const CohortOutputs outputs = forward_cohort(x, data_.batch_labels(batch), factors);
  TotalLoss tl = total_loss(outputs, loss_terms());
  const LossBreakdown& b = tl.breakdown;
  if (!std::isfinite(b.total)) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "non-finite loss at epoch %zu: self_a=%g self_b=%g interactive=%g guided=%g total=%g",
                  epoch_, b.self_a, b.self_b, b.interactive, b.guided, b.total);
    throw NumericalError(buf);
  }
  Tensor objective = tl.value;
  if (config_.mask.budget_regularizer && config_.mask.budget_weight > 0.0 && !drawn_masks_.empty()) {
    const CostReport report = cost_report(config_.arch, config_.arch.input.height, config_.arch.input.width);
    std::vector<double> costs;
    for (const auto& c : report.blocks) costs.push_back(c.flops(kDefaultFlopConvention));
    for (const auto& mask : drawn_masks_) {
      objective = add(objective, mask_budget_penalty(mask, costs, config_.mask.budget_weight));
    }
  }
  objective.backward();
  drawn_masks_.clear();
  for (auto& m : members_) {
    if (config_.train.grad_clip > 0.0) clip_grad_norm(m.optimizer.params(), config_.train.grad_clip);
    m.optimizer.step(lr);
  }
  return b;
}

EpochRecord Trainer::run_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  EpochRecord rec;
  rec.epoch = epoch_;
  rec.lr = lr_at_epoch(config_.train, epoch_);
  rec.factors = sample_factors(config_.sampler, factor_rng_);

  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng_.below(i)]);

  const std::size_t bs = config_.train.batch_size;
  std::size_t batches = 0;
  LossBreakdown sum;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    if (end - start < 2) break;  // batch statistics need two samples
    std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
    const LossBreakdown b = train_step(batch, rec.factors, rec.lr);
    sum.self_a += b.self_a;
    sum.self_b += b.self_b;
    sum.interactive += b.interactive;
    sum.guided += b.guided;
    ++batches;
  }
  const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
  rec.loss.self_a = sum.self_a / nb;
  rec.loss.self_b = sum.self_b / nb;
  rec.loss.interactive = sum.interactive / nb;
  rec.loss.guided = sum.guided / nb;
  rec.loss.total = rec.loss.self_a + rec.loss.self_b + rec.loss.interactive + rec.loss.guided;

  ++epoch_;
  if (epoch_ % config_.train.eval_every == 0 || epoch_ == config_.train.epochs) {
    for (const auto& m : members_) {
      if (m.role == "leader") {
        rec.accuracy[m.role][1.0] = accuracy(m.role, 1.0, data_);
        continue;
      }
      for (double s : config_.train.eval_factors) rec.accuracy[m.role][s] = accuracy(m.role, s, data_);
    }
  }
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

double Trainer::accuracy(const std::string& role, double s, const Dataset& data) const {
  const Member& m = member(role);
  if (m.mask && s != 1.0) return evaluate_masked(m.net, *m.mask, gumbel_, s, data);
  return evaluate(m.net, s, data);
}

std::vector<EpochRecord> Trainer::train(const RunOptions& options) {
  if (options.resume_from) load_checkpoint(*options.resume_from);
  std::ofstream metrics;
  if (!options.metrics_path.empty()) {
    metrics.open(options.metrics_path, options.resume_from ? std::ios::app : std::ios::trunc);
    if (!metrics) throw FileError("cannot open metrics file '" + options.metrics_path + "'");
  }
  std::vector<EpochRecord> history;
  while (epoch_ < config_.train.epochs) {
    EpochRecord rec = run_epoch();
    if (metrics.is_open()) {
      metrics << rec.to_json().dump() << '\n';
      metrics.flush();
    }
    if (options.verbose) {
      std::fprintf(stderr, "epoch %zu lr %g loss %.6f\n", rec.epoch, rec.lr, rec.loss.total);
    }
    history.push_back(std::move(rec));
    const bool periodic = options.checkpoint_every > 0 && epoch_ % options.checkpoint_every == 0;
    const bool stopping = options.stop_after && epoch_ >= *options.stop_after;
    if (!options.checkpoint_path.empty() && (periodic || stopping || epoch_ == config_.train.epochs)) {
      save_checkpoint(options.checkpoint_path);
    }
    if (stopping) break;
  }
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints

CheckpointFile Trainer::to_checkpoint() const {
  CheckpointFile ck;
  ck.meta["format"] = "coop-checkpoint";
  ck.meta["config"] = nlohmann::json::parse(to_json(config_).dump());
  ck.meta["config_hash"] = config_.hash();
  ck.meta["epoch"] = epoch_;
  ck.meta["rng"] = {{"shuffle", shuffle_rng_.state()},
                    {"factors", factor_rng_.state()},
                    {"gumbel", gumbel_rng_.state()}};
  nlohmann::json roles = nlohmann::json::array();
  for (const auto& m : members_) {
    roles.push_back(m.role);
    std::vector<std::string> names;
    for (const auto& p : m.net.named_parameters()) {
      ck.arrays.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
      names.push_back(p.name);
    }
    if (m.mask) {
      const Tensor& t = m.mask->score_logits;
      names.push_back(m.role + "/mask/score_logits");
      ck.arrays.push_back({names.back(), t.shape(), {t.data().begin(), t.data().end()}});
    }
    // named_buffers hands out mutable pointers; only read here.
    for (const auto& b : const_cast<AdaptiveNet&>(m.net).named_buffers()) {
      ck.arrays.push_back({b.name, {b.values->size()}, *b.values});
    }
    const auto& vel = m.optimizer.velocity();
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::vector<double> v = i < vel.size() ? vel[i] : std::vector<double>{};
      ck.arrays.push_back({names[i] + ".momentum", {v.size()}, v});
    }
  }
  ck.meta["members"] = roles;
  return ck;
}

void Trainer::save_checkpoint(const std::string& path) const { to_checkpoint().save(path); }

void Trainer::load_checkpoint(const std::string& path) { load_checkpoint(CheckpointFile::load(path)); }

void Trainer::load_checkpoint(const CheckpointFile& ck) {
  const std::string hash = ck.meta.value("config_hash", "");
  if (hash != config_.hash()) {
    throw ConfigError("checkpoint config hash " + hash + " does not match current config " + config_.hash());
  }
  auto restore = [&](const std::string& name, std::span<double> dst) {
    const NamedArray& a = ck.array(name);
    if (a.values.size() != dst.size()) throw FileError("checkpoint: size mismatch for '" + name + "'");
    std::copy(a.values.begin(), a.values.end(), dst.begin());
  };
  for (auto& m : members_) {
    std::vector<std::string> names;
    for (auto& p : m.net.named_parameters()) {
      restore(p.name, p.tensor.mutable_data());
      names.push_back(p.name);
    }
    if (m.mask) {
      names.push_back(m.role + "/mask/score_logits");
      restore(names.back(), m.mask->score_logits.mutable_data());
    }
    for (auto& b : m.net.named_buffers()) restore(b.name, *b.values);
    auto& vel = m.optimizer.velocity();
    vel.assign(names.size(), {});
    for (std::size_t i = 0; i < names.size(); ++i) vel[i] = ck.array(names[i] + ".momentum").values;
  }
  try {
    epoch_ = ck.meta.at("epoch").get<std::size_t>();
    shuffle_rng_.set_state(ck.meta.at("rng").at("shuffle").get<std::string>());
    factor_rng_.set_state(ck.meta.at("rng").at("factors").get<std::string>());
    gumbel_rng_.set_state(ck.meta.at("rng").at("gumbel").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FileError(std::string("checkpoint: metadata: ") + e.what());
  }
}

Trainer trainer_from_checkpoint(const std::string& path) {
  const CheckpointFile ck = CheckpointFile::load(path);
  ExperimentConfig cfg;
  try {
    cfg = experiment_from_json(ck.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FileError(std::string("checkpoint: embedded config: ") + e.what());
  }
  Trainer t(cfg, dataset_for(cfg));
  t.load_checkpoint(ck);
  return t;
}

}  // namespace coop
