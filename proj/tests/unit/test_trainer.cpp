#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "coop/config.hpp"
#include "coop/cost_model.hpp"
#include "coop/errors.hpp"
#include "coop/trainer.hpp"

using namespace coop;

namespace {

ExperimentConfig small_config(TrainMethod method, SubnetMechanism mech = SubnetMechanism::Truncation) {
  ExperimentConfig c;
  c.arch = desk_dense_preset();
  c.arch.repeats = {2, 2};
  c.arch.channels = {8, 8};
  c.arch.stem.out_channels = 8;
  c.train.epochs = 4;
  c.train.boundaries = scaled_boundaries(4);
  c.train.batch_size = 32;
  c.train.method = method;
  c.train.mechanism = mech;
  c.train.seed = 5;
  c.data.spec.n = 96;
  return c;
}

std::vector<std::size_t> first(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

std::vector<std::vector<double>> snapshot(const Trainer& t) {
  std::vector<std::vector<double>> out;
  for (const auto& m : t.members())
    for (const auto& p : m.net.named_parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig t;
  CHECK(lr_at_epoch(t, 0) == 1e-2);
  CHECK(lr_at_epoch(t, 1) == 1e-1);
  CHECK(lr_at_epoch(t, 74) == 1e-1);
  CHECK(lr_at_epoch(t, 75) == 1e-2);
  CHECK(lr_at_epoch(t, 130) == 1e-3);
  CHECK(lr_at_epoch(t, 180) == 1e-4);
  CHECK(lr_at_epoch(t, 199) == 1e-4);
  CHECK(scaled_boundaries(200) == std::vector<std::size_t>{75, 130, 180});
  const auto b = scaled_boundaries(20);
  CHECK(b.size() == 3);
  CHECK(std::is_sorted(b.begin(), b.end()));
}

TEST_CASE("factor sampler") {
  Rng rng(1);
  SamplerConfig st;
  st.kind = SamplerKind::Static;
  for (int i = 0; i < 5; ++i) CHECK(sample_factors(st, rng) == st.static_factors);

  SamplerConfig rnd;
  std::map<double, std::size_t> counts;
  const std::size_t epochs = 10000;
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto f = sample_factors(rnd, rng);
    CHECK(f.front() == 1.0);
    CHECK(f.back() == 0.2);
    CHECK(std::is_sorted(f.begin(), f.end(), std::greater<>()));
    CHECK(f.size() >= 3);
    CHECK(f.size() <= 4);
    for (double s : f)
      if (s != 1.0 && s != 0.2) ++counts[s];
  }
  const auto& pool = random_sampler_pool();
  CHECK(pool.size() == 7);
  CHECK(counts.size() == pool.size());
  // P(s appears) = 1 - (6/7)^2 with two draws per epoch.
  const double p = 1.0 - std::pow(6.0 / 7.0, 2.0);
  const double sd = std::sqrt(p * (1 - p) / static_cast<double>(epochs));
  for (const auto& [s, n] : counts) CHECK(std::abs(static_cast<double>(n) / epochs - p) < 5 * sd);
}

TEST_CASE("clip_grad_norm") {
  Tensor a = Tensor::vector({1.0, 2.0}, true), b = Tensor::vector({2.0}, true);
  add(sum(mul(a, Tensor::vector({3.0, 0.0}))), sum(mul(b, Tensor::vector({4.0})))).backward();
  const double norm = clip_grad_norm({a, b}, 1.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm({a, b}, 10.0) == doctest::Approx(1.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("members per method") {
  const std::map<TrainMethod, std::size_t> expected{
      {TrainMethod::Baseline, 1}, {TrainMethod::Sfsl, 1}, {TrainMethod::TeamMT, 2}, {TrainMethod::Coop, 3}};
  for (const auto& [method, n] : expected) {
    const auto cfg = small_config(method);
    Trainer t(cfg, dataset_for(cfg));
    CHECK(t.members().size() == n);
    CHECK(t.member("teammate_a").role == "teammate_a");
  }
  const auto cfg = small_config(TrainMethod::Coop);
  Trainer t(cfg, dataset_for(cfg));
  CHECK_NOTHROW(t.member("leader"));
  CHECK_THROWS(t.member("nobody"));
}

TEST_CASE("zero learning rate and no weight decay leave parameters unchanged") {
  auto cfg = small_config(TrainMethod::Coop);
  cfg.train.weight_decay = 0.0;
  Trainer t(cfg, dataset_for(cfg));
  const auto before = snapshot(t);
  t.train_step(first(32), {1.0, 0.5, 0.2}, 0.0);
  CHECK(snapshot(t) == before);
}

TEST_CASE("one step lowers the loss on the same batch") {
  for (auto mech : {SubnetMechanism::Truncation, SubnetMechanism::Mask}) {
    CAPTURE(to_string(mech));
    auto cfg = small_config(TrainMethod::Coop, mech);
    Trainer t(cfg, dataset_for(cfg));
    const auto batch = first(64);
    const std::vector<double> factors{1.0, 0.5};
    if (mech == SubnetMechanism::Truncation) {
      const double l0 = t.train_step(batch, factors, 0.05).total;
      const double l1 = t.train_step(batch, factors, 0.0).total;
      CHECK(l1 < l0);
    } else {
      const auto b = t.train_step(batch, factors, 0.05);
      CHECK(std::isfinite(b.total));
    }
  }
}

TEST_CASE("training-step breakdown matches a replayed cohort") {
  auto cfg = small_config(TrainMethod::Coop);
  Trainer t(cfg, dataset_for(cfg));
  const auto batch = first(32);
  const std::vector<double> factors{1.0, 0.6, 0.2};
  const Tensor x = t.data().batch(batch);
  const auto y = t.data().batch_labels(batch);
  const LossBreakdown replay = total_loss(t.forward_cohort(x, y, factors), t.loss_terms()).breakdown;
  const LossBreakdown step = t.train_step(batch, factors, 0.0);
  CHECK(step.total == doctest::Approx(replay.total).epsilon(1e-12));
  CHECK(step.self_a == doctest::Approx(replay.self_a).epsilon(1e-12));
  CHECK(step.interactive == doctest::Approx(replay.interactive).epsilon(1e-12));
  CHECK(step.guided == doctest::Approx(replay.guided).epsilon(1e-12));
}

TEST_CASE("loss terms follow the method") {
  const auto base = Trainer(small_config(TrainMethod::Baseline), dataset_for(small_config(TrainMethod::Baseline)));
  CHECK(base.loss_terms().ce_only);
  CHECK_FALSE(base.loss_terms().interactive);
  const auto coop_cfg = small_config(TrainMethod::Coop);
  const Trainer coop(coop_cfg, dataset_for(coop_cfg));
  CHECK_FALSE(coop.loss_terms().ce_only);
  CHECK(coop.loss_terms().interactive);
  CHECK(coop.loss_terms().guided);
}

TEST_CASE("evaluation is deterministic and near chance at initialization") {
  auto cfg = small_config(TrainMethod::Sfsl);
  cfg.data.spec.n = 900;
  Trainer t(cfg, dataset_for(cfg));
  for (double s : {0.2, 1.0}) {
    const double a1 = t.accuracy("teammate_a", s, t.data());
    const double a2 = t.accuracy("teammate_a", s, t.data());
    CHECK(a1 == a2);
    CHECK(a1 > 0.15);
    CHECK(a1 < 0.6);
  }
}

TEST_CASE("epoch records") {
  auto cfg = small_config(TrainMethod::TeamMT);
  Trainer t(cfg, dataset_for(cfg));
  const EpochRecord r = t.run_epoch();
  CHECK(r.epoch == 0);
  CHECK(r.lr == cfg.train.warmup_lr);
  CHECK(r.factors.front() == 1.0);
  CHECK(r.accuracy.count("teammate_a") == 1);
  CHECK(r.accuracy.count("teammate_b") == 1);
  CHECK(r.accuracy.at("teammate_a").size() == cfg.train.eval_factors.size());
  const auto j = r.to_json();
  CHECK(j.contains("wall_time_s"));
  CHECK_FALSE(deterministic_view(j).contains("wall_time_s"));
  CHECK(t.epoch() == 1);
}

TEST_CASE("checkpoint rejects a different config") {
  const auto cfg = small_config(TrainMethod::Sfsl);
  Trainer t(cfg, dataset_for(cfg));
  const CheckpointFile ck = t.to_checkpoint();
  auto other = cfg;
  other.train.seed = 99;
  Trainer u(other, dataset_for(other));
  CHECK_THROWS_AS(u.load_checkpoint(ck), ConfigError);
  Trainer same(cfg, dataset_for(cfg));
  same.run_epoch();
  same.load_checkpoint(ck);
  CHECK(same.epoch() == 0);
  CHECK(snapshot(same) == snapshot(t));
}
