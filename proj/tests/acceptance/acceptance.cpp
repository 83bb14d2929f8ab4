// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion...]   (no arguments runs all eight)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "coop/adaptive_net.hpp"
#include "coop/checkpoint.hpp"
#include "coop/config.hpp"
#include "coop/cost_model.hpp"
#include "coop/gradcheck.hpp"
#include "coop/gumbel_mask.hpp"
#include "coop/losses.hpp"
#include "coop/random.hpp"
#include "coop/trainer.hpp"
#include "support/oracles.hpp"

using namespace coop;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kParamTol = 0.02;
constexpr double kFlopTol = 0.15;
constexpr double kFlopRatioTol = 0.05;
constexpr double kCostRuntimeS = 1.0;
constexpr double kGradRuntimeS = 60.0;
constexpr std::size_t kMaskDraws = 10000;
constexpr double kLossOracleTol = 1e-10;
constexpr double kTotalSumTol = 1e-12;
constexpr std::size_t kArchCases = 1000;
constexpr double kSmokeAccuracy = 0.90;
constexpr double kSandwichSlack = 0.02;
constexpr double kSmokeRuntimeS = 600.0;
constexpr double kAblationSlack = 0.01;
constexpr std::size_t kSmokeEpochs = 60;
constexpr std::size_t kSmokeSamples = 3000;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      if (pass) detail.clear();
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Cost model golden values.

Outcome criterion_cost() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const ArchConfig arch = resnet152_cifar_preset();
  const std::vector<double> factors{0.2, 0.4, 0.6, 0.8, 1.0};
  const CostTable table = build_cost_table(arch, factors, 32, 32, FlopConvention::Mac);
  const double elapsed = seconds_since(t0);

  const std::map<double, double> golden_params{{0.2, 20.78e6}, {0.4, 28.88e6}, {0.6, 37.26e6},
                                               {0.8, 45.43e6}, {1.0, 58.34e6}};
  const std::map<double, double> golden_flops{{0.2, 1.00e9}, {0.4, 1.58e9}, {0.6, 2.22e9},
                                              {0.8, 2.81e9}, {1.0, 3.54e9}};
  double worst_p = 0, worst_f = 0, worst_r = 0;
  const double full_flops = table.rows.back().flops;
  for (const auto& row : table.rows) {
    const double ep = std::abs(static_cast<double>(row.params) / golden_params.at(row.s) - 1);
    const double ef = std::abs(row.flops / golden_flops.at(row.s) - 1);
    const double er = std::abs((row.flops / full_flops) / (golden_flops.at(row.s) / golden_flops.at(1.0)) - 1);
    worst_p = std::max(worst_p, ep);
    worst_f = std::max(worst_f, ef);
    worst_r = std::max(worst_r, er);
    o.require(ep <= kParamTol, fmt("params at %.1f off by %.2f%%", row.s, 100 * ep));
    o.require(ef <= kFlopTol, fmt("flops at %.1f off by %.2f%%", row.s, 100 * ef));
    o.require(er <= kFlopRatioTol, fmt("flop ratio at %.1f off by %.2f%%", row.s, 100 * er));
  }
  o.require(elapsed < kCostRuntimeS, fmt("runtime %.3fs", elapsed));
  if (o.pass) {
    o.detail = fmt("max err params %.2f%%, flops %.2f%%, ratios %.2f%%, %.4fs", 100 * worst_p, 100 * worst_f,
                   100 * worst_r, elapsed);
  }
  return o;
}

// ---------------------------------------------------------------------------
// 2. Gradient correctness.

Outcome criterion_gradcheck() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t entries = 0;
  double worst = 0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const GradCheckReport r = run_gradcheck_suite(seed, kGradCheckTolerance);
    for (const auto& e : r.entries) {
      worst = std::max(worst, e.max_rel_error);
      o.require(e.passed, e.name + fmt(" rel=%.2e", e.max_rel_error));
    }
    entries += r.entries.size();
    o.require(!r.entries.empty(), "empty report");
  }
  const double elapsed = seconds_since(t0);
  o.require(elapsed < kGradRuntimeS, fmt("runtime %.1fs", elapsed));
  if (o.pass) o.detail = fmt("%.0f checks over 3 seeds, worst rel %.2e, %.2fs", double(entries), worst, elapsed);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Mask exactness.

Outcome criterion_masks() {
  Outcome o;
  ArchConfig arch = desk_dense_preset();
  arch.repeats = {3, 4, 5};
  arch.channels = {8, 8, 8};
  arch.stem.out_channels = 8;
  const std::size_t n = arch.total_blocks();
  const std::size_t n_entries = stage_entry_blocks(arch).size();
  Rng rng(2024);
  MaskParams params{Tensor({n})};
  for (auto& v : params.score_logits.mutable_data()) v = rng.normal();
  GumbelConfig g;
  std::size_t bad_binary = 0, bad_sum = 0, bad_entries = 0;
  for (std::size_t d = 0; d < kMaskDraws; ++d) {
    const std::size_t k = n_entries + rng.below(n - n_entries + 1);
    const BinaryMask m = sample_mask(arch, params, k, g, &rng);
    double total = 0;
    for (double v : m.values.data()) {
      if (v != 0.0 && v != 1.0) ++bad_binary;
      total += v;
    }
    if (total != static_cast<double>(k)) ++bad_sum;
    for (auto e : stage_entry_blocks(arch))
      if (m.values.at(e) != 1.0) ++bad_entries;
  }
  o.require(bad_binary == 0, fmt("%.0f non-binary entries", double(bad_binary)));
  o.require(bad_sum == 0, fmt("%.0f masks with sum != k", double(bad_sum)));
  o.require(bad_entries == 0, fmt("%.0f unpinned stage entries", double(bad_entries)));

  AdaptiveNet net(arch, 5);
  Tensor x({16, 2});
  for (auto& v : x.mutable_data()) v = rng.normal();
  std::size_t mismatches = 0;
  for (std::size_t trial = 0; trial < 200; ++trial) {
    const std::size_t k = n_entries + rng.below(n - n_entries + 1);
    const BinaryMask m = sample_mask(arch, params, k, g, &rng);
    // Skipping versus multiplying by the mask, under running and batch statistics.
    for (NormMode norm : {NormMode::Eval, NormMode::Train}) {
      ForwardOptions skip_opts{norm, false, true};
      ForwardOptions mult_opts{norm, false, false};
      const Tensor skip = net.forward_masked(x, m.values, skip_opts);
      const Tensor mult = net.forward_masked(x, m.values, mult_opts);
      if (!std::equal(skip.data().begin(), skip.data().end(), mult.data().begin())) ++mismatches;
    }
  }
  o.require(mismatches == 0, fmt("%.0f skip/multiply mismatches", double(mismatches)));

  const BinaryMask all = sample_mask(arch, params, n, g, &rng);
  const Tensor masked = net.forward_masked(x, all.values, ForwardOptions::eval());
  const Tensor plain = net.forward(x, full_subnet(arch), ForwardOptions::eval());
  o.require(std::equal(masked.data().begin(), masked.data().end(), plain.data().begin()),
            "k = n differs from unmasked forward");
  if (o.pass) o.detail = fmt("%.0f draws binary with sum k; skip == multiply on 200 masks; k=n exact", double(kMaskDraws));
  return o;
}

// ---------------------------------------------------------------------------
// 4. Loss oracle equivalence.

Outcome criterion_losses() {
  Outcome o;
  Rng rng(99);
  constexpr std::size_t B = 8, C = 5;
  const std::vector<double> factors{0.2, 0.35, 0.6, 1.0};
  double worst = 0;
  auto check = [&](const std::string& name, double lib, long double ref) {
    const double err = static_cast<double>(std::abs(static_cast<long double>(lib) - ref));
    worst = std::max(worst, err);
    o.require(err < kLossOracleTol, name + fmt(" err %.2e", err));
  };
  auto zero_grad_of = [&](const std::string& name, const Tensor& t) {
    bool zero = true;
    if (t.has_grad())
      for (double g : t.grad()) zero = zero && g == 0.0;
    o.require(zero, name + ": teacher-role gradient not zero");
  };
  auto same_grad = [&](const std::string& name, const Tensor& a, const Tensor& b) {
    o.require(a.has_grad() && b.has_grad() && std::equal(a.grad().begin(), a.grad().end(), b.grad().begin()),
              name + ": gradient includes a teacher-role contribution");
  };

  for (int cohort = 0; cohort < 50; ++cohort) {
    auto logits = [&] {
      Tensor t({B, C}, true);
      for (auto& v : t.mutable_data()) v = 2.0 * rng.normal();
      return t;
    };
    std::vector<int> y(B);
    for (auto& v : y) v = static_cast<int>(rng.below(C));
    CohortOutputs out;
    out.labels = y;
    for (double s : factors) {
      out.teammate_a[s] = logits();
      out.teammate_b[s] = logits();
    }
    out.leader = logits();
    const double tau = 1.0 + 3.0 * rng.uniform(0, 1);
    const double lambda = rng.uniform(0, 1);
    FactorLogits subs_a(out.teammate_a);
    subs_a.erase(1.0);
    const std::vector<Tensor> subs_vec{out.teammate_a[0.6], out.teammate_a[0.2]};

    check("kd_loss", kd_loss(out.teammate_a[1.0], out.teammate_b[1.0], y, lambda, tau).item(),
          oracle::kd(out.teammate_a[1.0], out.teammate_b[1.0], y, lambda, tau));
    check("simple_self_distill", simple_self_distill(out.teammate_a[1.0], subs_vec, y, lambda, tau).item(),
          oracle::simple_self_distill(out.teammate_a[1.0], subs_vec, y, lambda, tau));
    check("sfsl_subnet_loss", sfsl_subnet_loss(out.teammate_a[1.0], subs_a, tau).item(),
          oracle::sfsl(out.teammate_a[1.0], subs_a, tau));
    check("self_learning_loss", self_learning_loss(out.teammate_a, y).item(), oracle::self_learning(out.teammate_a, y));
    check("ce_only_loss", ce_only_loss(out.teammate_a, y).item(), oracle::ce_sum(out.teammate_a, y));
    check("interactive_loss", interactive_loss(out).item(), oracle::interactive(out.teammate_a, out.teammate_b));
    check("guided_loss", guided_loss(out).item(),
          oracle::guided(out.leader, out.teammate_a[1.0], &out.teammate_b[1.0], y));

    const TotalLoss total = total_loss(out);
    const auto& bd = total.breakdown;
    const long double ref_total = oracle::self_learning(out.teammate_a, y) + oracle::self_learning(out.teammate_b, y) +
                                  oracle::interactive(out.teammate_a, out.teammate_b) +
                                  oracle::guided(out.leader, out.teammate_a[1.0], &out.teammate_b[1.0], y);
    check("total_loss", total.value.item(), ref_total);
    const double parts = bd.self_a + bd.self_b + bd.interactive + bd.guided;
    o.require(std::abs(parts - bd.total) < kTotalSumTol, fmt("total - sum(components) = %.2e", parts - bd.total));

    // SFSL weights: a single sub-net term is exactly KL / s with the factor 1/s.
    for (double s : {0.2, 0.35, 0.6}) {
      o.require(sfsl_weight(s) == 1.0 / s, fmt("sfsl_weight(%g) != 1/s", s));
      FactorLogits one{{s, out.teammate_a[s]}};
      const double lib = sfsl_subnet_loss(out.teammate_a[1.0], one, tau).item();
      const double direct = kl_div_tau(out.teammate_a[s], stopgrad(out.teammate_a[1.0]), tau).item() * (1.0 / s);
      o.require(lib == direct, fmt("sfsl term at %g not weighted by exactly 1/s", s));
    }

    // Teacher roles: pure teachers receive exactly zero gradient.
    {
      Tensor st = out.teammate_a[0.2].clone(true), te = out.teammate_b[1.0].clone(true);
      kd_loss(st, te, y, lambda, tau).backward();
      zero_grad_of("kd_loss teacher", te);
    }
    {
      Tensor full = out.teammate_a[1.0].clone(true);
      FactorLogits subs;
      for (const auto& [s, z] : subs_a) subs[s] = z.clone(true);
      sfsl_subnet_loss(full, subs, tau).backward();
      zero_grad_of("sfsl_subnet_loss full", full);
    }
    {
      // Mixed roles: the gradient equals that of the student role alone.
      CohortOutputs c;
      c.labels = y;
      for (double s : factors) {
        c.teammate_a[s] = out.teammate_a[s].clone(true);
        c.teammate_b[s] = out.teammate_b[s].clone(true);
      }
      c.leader = out.leader.clone(true);
      interactive_loss(c).backward();
      Tensor a_only = out.teammate_a[0.35].clone(true);
      kl_div_tau(a_only, stopgrad(c.teammate_b[0.35]), 1.0).backward();
      same_grad("interactive teammate_a[0.35]", c.teammate_a[0.35], a_only);

      CohortOutputs g = c;
      g.leader = out.leader.clone(true);
      g.teammate_a[1.0] = out.teammate_a[1.0].clone(true);
      g.teammate_b[1.0] = out.teammate_b[1.0].clone(true);
      guided_loss(g).backward();
      Tensor l_only = out.leader.clone(true);
      cross_entropy(l_only, y).backward();
      same_grad("guided leader", g.leader, l_only);
    }
  }
  if (o.pass) o.detail = fmt("50 cohorts, max |lib - oracle| %.2e; 1/s weights exact; teacher grads zero", worst);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Sub-network structure.

ArchConfig random_arch(Rng& rng) {
  ArchConfig c;
  const std::size_t stages = 1 + rng.below(4);
  const int kind = static_cast<int>(rng.below(4));  // dense twice as likely
  c.block = kind == 2 ? BlockKind::Basic : kind == 3 ? BlockKind::Bottleneck : BlockKind::Dense;
  c.rounding = static_cast<RoundingRule>(rng.below(4));
  c.num_classes = 2 + rng.below(4);
  c.norm = rng.below(4) == 0 ? NormKind::None : NormKind::Batch;
  c.head_norm = rng.below(2) == 0;
  for (std::size_t j = 0; j < stages; ++j) {
    c.repeats.push_back(1 + rng.below(c.block == BlockKind::Dense ? 8 : 4));
    c.channels.push_back(1 + rng.below(4));
  }
  if (rng.below(2) == 0) {
    for (std::size_t j = 0; j < stages; ++j) c.min_active.push_back(rng.below(c.repeats[j] + 2));
  }
  if (c.block == BlockKind::Dense) {
    c.input = InputSpec{1 + rng.below(4), 0, 0};
    c.stem = StemSpec{StemKind::Linear, 1 + rng.below(5), 1, 1};
  } else {
    const std::size_t hw = 3 + rng.below(4);
    c.input = InputSpec{1 + rng.below(2), hw, hw};
    c.stem = StemSpec{StemKind::Conv, 1 + rng.below(4), 3, 1};
  }
  c.validate();
  return c;
}

Outcome criterion_subnets() {
  Outcome o;
  Rng rng(7);
  std::size_t nesting_fail = 0, forward_fail = 0, pairs = 0;
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) grid.push_back(i / 20.0);
  for (std::size_t c = 0; c < kArchCases; ++c) {
    const ArchConfig arch = random_arch(rng);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const SubnetSpec lo = derive_subnet(arch, grid[i]);
      for (std::size_t j = i; j < grid.size(); ++j) {
        const SubnetSpec hi = derive_subnet(arch, grid[j]);
        ++pairs;
        for (std::size_t k = 0; k < arch.num_stages(); ++k)
          if (lo.active_counts[k] > hi.active_counts[k]) {
            ++nesting_fail;
            break;
          }
      }
    }
    if (derive_subnet(arch, 1.0).active_counts != arch.repeats) ++nesting_fail;

    AdaptiveNet net(arch, c);
    const std::size_t batch = 3;
    Tensor x = arch.input.is_image() ? Tensor({batch, arch.input.channels, arch.input.height, arch.input.width})
                                     : Tensor({batch, arch.input.channels});
    for (auto& v : x.mutable_data()) v = rng.normal();
    const double s = grid[rng.below(grid.size())];
    const SubnetSpec spec = derive_subnet(arch, s);
    const Tensor mask = Tensor::vector(prefix_mask(arch, spec));
    for (const ForwardOptions& opts : {ForwardOptions::eval(), ForwardOptions::train(false)}) {
      ForwardOptions masked = opts;
      masked.skip_inactive = true;
      const Tensor a = net.forward(x, spec, opts);
      const Tensor b = net.forward_masked(x, mask, masked);
      if (!std::equal(a.data().begin(), a.data().end(), b.data().begin())) ++forward_fail;
    }
  }
  o.require(nesting_fail == 0, fmt("%.0f nesting violations", double(nesting_fail)));
  o.require(forward_fail == 0, fmt("%.0f forward/forward_masked mismatches", double(forward_fail)));
  if (o.pass) o.detail = fmt("%.0f random archs, %.0f factor pairs nested, forwards bit-identical", double(kArchCases), double(pairs));
  return o;
}

// ---------------------------------------------------------------------------
// 6 and 7. Desk-scale training.

ExperimentConfig desk_experiment(TrainMethod method, std::uint64_t seed) {
  ExperimentConfig c;
  c.arch = desk_dense_preset();
  c.train.epochs = kSmokeEpochs;
  c.train.boundaries = scaled_boundaries(kSmokeEpochs);
  c.train.method = method;
  c.train.seed = seed;
  c.train.grad_clip = 0.5;
  c.train.eval_every = kSmokeEpochs;
  c.sampler.kind = SamplerKind::Random;
  c.data.spec.kind = DataKind::Spirals;
  c.data.spec.n = kSmokeSamples;
  c.data.spec.seed = 7;
  c.validate();
  return c;
}

struct RunResult {
  std::map<std::string, std::map<double, double>> accuracy;  // teammates only
  double seconds = 0;
  std::string error;

  double mean_teammate_accuracy() const {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& [role, accs] : accuracy)
      for (const auto& [s, a] : accs) {
        sum += a;
        ++n;
      }
    return n ? sum / static_cast<double>(n) : 0.0;
  }
};

std::map<std::pair<int, std::uint64_t>, RunResult>& run_cache() {
  static std::map<std::pair<int, std::uint64_t>, RunResult> cache;
  return cache;
}

const RunResult& desk_run(TrainMethod method, std::uint64_t seed) {
  auto key = std::make_pair(static_cast<int>(method), seed);
  auto& cache = run_cache();
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  RunResult r;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const ExperimentConfig cfg = desk_experiment(method, seed);
    Trainer t(cfg, dataset_for(cfg));
    t.train(RunOptions{});
    for (const auto& m : t.members()) {
      if (m.role == "leader") continue;
      for (double s : cfg.train.eval_factors) r.accuracy[m.role][s] = t.accuracy(m.role, s, t.data());
    }
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = seconds_since(t0);
  std::fprintf(stderr, "  [%s seed %llu] mean acc %.4f in %.1fs%s\n", to_string(method),
               static_cast<unsigned long long>(seed), r.mean_teammate_accuracy(), r.seconds,
               r.error.empty() ? "" : (" error: " + r.error).c_str());
  return cache.emplace(key, std::move(r)).first->second;
}

Outcome criterion_training_smoke() {
  Outcome o;
  const RunResult& r = desk_run(TrainMethod::Coop, 1);
  o.require(r.error.empty(), "training failed: " + r.error);
  o.require(r.accuracy.size() == 2, "expected two teammates");
  std::string summary;
  for (const auto& [role, accs] : r.accuracy) {
    summary += role + ":";
    for (const auto& [s, a] : accs) {
      summary += fmt(" %.3f", a);
      o.require(a >= kSmokeAccuracy, role + fmt(" acc at %.1f = %.3f", s, a));
    }
    const double lo = std::min(accs.at(0.2), accs.at(1.0)) - kSandwichSlack;
    const double hi = std::max(accs.at(0.2), accs.at(1.0)) + kSandwichSlack;
    for (double s : {0.4, 0.6, 0.8}) {
      const double a = accs.at(s);
      o.require(a >= lo && a <= hi, role + fmt(" sandwich violated at %.1f (%.3f)", s, a));
    }
    summary += "; ";
  }
  o.require(r.seconds < kSmokeRuntimeS, fmt("runtime %.1fs", r.seconds));
  if (o.pass) o.detail = summary + fmt("%.1fs", r.seconds);
  return o;
}

Outcome criterion_ablation() {
  Outcome o;
  const std::vector<TrainMethod> order{TrainMethod::Baseline, TrainMethod::Sfsl, TrainMethod::TeamMT,
                                       TrainMethod::Coop};
  int seeds_ok = 0;
  std::string summary;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::vector<double> means;
    for (auto m : order) {
      const RunResult& r = desk_run(m, seed);
      o.require(r.error.empty(), std::string(to_string(m)) + " failed: " + r.error);
      means.push_back(r.mean_teammate_accuracy());
    }
    bool ok = true;
    for (std::size_t i = 0; i + 1 < means.size(); ++i) ok = ok && means[i] <= means[i + 1] + kAblationSlack;
    seeds_ok += ok ? 1 : 0;
    summary += fmt("seed %.0f: %.4f <= %.4f", double(seed), means[0], means[1]) +
               fmt(" <= %.4f <= %.4f", means[2], means[3]) + (ok ? " ok; " : " violated; ");
  }
  if (o.pass) {
    o.pass = seeds_ok >= 2;
    o.detail = summary + fmt("%.0f/3 seeds hold", double(seeds_ok));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 8. Determinism and persistence.

std::vector<std::string> deterministic_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(deterministic_view(nlohmann::ordered_json::parse(line)).dump());
  return out;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion_determinism() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / ("coop_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  for (SubnetMechanism mech : {SubnetMechanism::Truncation, SubnetMechanism::Mask}) {
    const std::string tag = to_string(mech);
    ExperimentConfig cfg = desk_experiment(TrainMethod::Coop, 11);
    cfg.train.epochs = 6;
    cfg.train.boundaries = scaled_boundaries(6);
    cfg.train.eval_every = 2;
    cfg.train.mechanism = mech;
    cfg.data.spec.n = 600;
    auto p = [&](const std::string& n) { return (dir / (tag + "_" + n)).string(); };

    auto run = [&](const std::string& metrics, const std::string& ckpt, std::optional<std::size_t> stop,
                   std::optional<std::string> resume) {
      Trainer t(cfg, dataset_for(cfg));
      RunOptions opts;
      opts.metrics_path = metrics;
      opts.checkpoint_path = ckpt;
      opts.stop_after = stop;
      opts.resume_from = resume;
      t.train(opts);
    };
    run(p("a.jsonl"), p("a.ckpt"), std::nullopt, std::nullopt);
    run(p("b.jsonl"), p("b.ckpt"), std::nullopt, std::nullopt);
    const auto a = deterministic_lines(p("a.jsonl"));
    o.require(a.size() == cfg.train.epochs, tag + ": wrong number of metrics records");
    o.require(a == deterministic_lines(p("b.jsonl")), tag + ": same seed gave different metrics");
    o.require(file_bytes(p("a.ckpt")) == file_bytes(p("b.ckpt")), tag + ": same seed gave different checkpoints");

    run(p("r.jsonl"), p("r_mid.ckpt"), 3, std::nullopt);
    run(p("r.jsonl"), p("r.ckpt"), std::nullopt, p("r_mid.ckpt"));
    o.require(a == deterministic_lines(p("r.jsonl")), tag + ": resumed trajectory differs");
    o.require(file_bytes(p("a.ckpt")) == file_bytes(p("r.ckpt")), tag + ": resumed final state differs");

    const std::string bytes = file_bytes(p("a.ckpt"));
    o.require(CheckpointFile::deserialize(bytes).serialize() == bytes, tag + ": container round-trip not byte-identical");
    Trainer restored = trainer_from_checkpoint(p("a.ckpt"));
    restored.save_checkpoint(p("a2.ckpt"));
    o.require(file_bytes(p("a2.ckpt")) == bytes, tag + ": trainer load/save round-trip not byte-identical");
  }
  fs::remove_all(dir);
  if (o.pass) o.detail = "truncation and mask: repeat runs, resume at epoch 3 and checkpoint round-trips identical";
  return o;
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "cost model golden values", criterion_cost},
      {2, "gradient correctness", criterion_gradcheck},
      {3, "mask exactness", criterion_masks},
      {4, "loss oracle equivalence", criterion_losses},
      {5, "sub-network structure", criterion_subnets},
      {6, "desk-scale training smoke", criterion_training_smoke},
      {7, "ablation ordering", criterion_ablation},
      {8, "determinism and persistence", criterion_determinism},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s criterion %d (%s): %s\n", out.pass ? "PASS" : "FAIL", c.id, c.title, out.detail.c_str());
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
