#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "coop/cost_model.hpp"
#include "coop/errors.hpp"

using namespace coop;

namespace {

ArchConfig linear_only() {
  ArchConfig c;
  c.input = InputSpec{2, 0, 0};
  c.stem = StemSpec{StemKind::Linear, 3, 1, 1};
  c.norm = NormKind::None;
  c.repeats = {1};
  c.channels = {3};
  c.num_classes = 2;
  return c;
}

CostTable reference_rows() {
  CostTable t;
  const double g = 1e9;
  t.rows = {{0.2, 20'000'000, 1.00 * g, std::nullopt},
            {0.4, 29'000'000, 1.58 * g, std::nullopt},
            {0.6, 37'000'000, 2.22 * g, std::nullopt},
            {0.8, 45'000'000, 2.81 * g, std::nullopt},
            {1.0, 58'000'000, 3.54 * g, std::nullopt}};
  return t;
}

}  // namespace

TEST_CASE("linear stem costs") {
  const ArchConfig c = linear_only();
  const CostReport r = cost_report(c, 0, 0);
  CHECK(r.stem.params == 9);  // 2x3 weights + 3 biases
  CHECK(r.stem.macs == 6);
  CHECK(r.head.params == 3 * 2 + 2);
  // Dense block without norm: two 3x3 linear layers with bias.
  CHECK(r.blocks.size() == 1);
  CHECK(r.blocks[0].params == 2 * (9 + 3));
}

TEST_CASE("1x1 convolution under both conventions") {
  ArchConfig c;
  c.input = InputSpec{1, 4, 4};
  c.stem = StemSpec{StemKind::Conv, 1, 1, 1};
  c.norm = NormKind::None;
  c.block = BlockKind::Basic;
  c.repeats = {1};
  c.channels = {1};
  c.num_classes = 2;
  const CostReport r = cost_report(c, 4, 4);
  CHECK(r.stem.params == 1);
  CHECK(r.stem.macs == 16);
  CHECK(r.stem.flops(FlopConvention::TwoMac) - r.stem.flops(FlopConvention::Mac) == 16.0);
  CHECK(r.stem.flops(FlopConvention::TwoMac) == 32.0 + static_cast<double>(r.stem.elementwise));
  CHECK(parse_flop_convention("2mac") == FlopConvention::TwoMac);
  CHECK_THROWS(parse_flop_convention("3mac"));
}

TEST_CASE("costs are monotone in the scaling factor") {
  const ArchConfig c = resnet152_cifar_preset();
  std::uint64_t last_p = 0;
  double last_f = 0;
  for (int i = 1; i <= 20; ++i) {
    const double s = i / 20.0;
    const auto spec = derive_subnet(c, s);
    const auto p = count_params(c, spec);
    const double f = count_flops(c, spec, 32, 32);
    CHECK(p >= last_p);
    CHECK(f >= last_f);
    last_p = p;
    last_f = f;
  }
}

TEST_CASE("report decomposes the total") {
  const ArchConfig c = resnet152_cifar_preset();
  const CostReport r = cost_report(c, 32, 32);
  CHECK(r.blocks.size() == c.total_blocks());
  for (double s : {0.2, 0.6, 1.0}) {
    const auto spec = derive_subnet(c, s);
    const auto mask = prefix_mask(c, spec);
    Cost manual = r.stem;
    manual += r.head;
    for (std::size_t b = 0; b < mask.size(); ++b)
      if (mask[b] == 1.0) manual += r.blocks[b];
    const Cost t = r.total(c, spec);
    CHECK(t.params == manual.params);
    CHECK(t.macs == manual.macs);
    CHECK(t.params == count_params(c, spec));
    CHECK(t.flops(FlopConvention::Mac) == count_flops(c, spec, 32, 32));
  }
  // Later stages downsample, so their per-block MACs share is smaller than their params share.
  CHECK(r.blocks.front().macs > r.blocks.back().macs);
  CHECK(r.blocks.front().params < r.blocks.back().params);
}

TEST_CASE("full ResNet-152 on 32x32 is in the expected range") {
  const ArchConfig c = resnet152_cifar_preset();
  const auto full = full_subnet(c);
  const double p = static_cast<double>(count_params(c, full));
  CHECK(p > 57e6);
  CHECK(p < 60e6);
  const double mac = count_flops(c, full, 32, 32, FlopConvention::Mac);
  const double two = count_flops(c, full, 32, 32, FlopConvention::TwoMac);
  CHECK(two > 1.9 * mac);
  CHECK(two < 2.0 * mac);
}

TEST_CASE("csv round trip") {
  CostTable t = build_cost_table(desk_dense_preset(), {0.2, 1.0, 0.5}, 0, 0);
  CHECK(t.rows.size() == 3);
  CHECK(t.rows.front().s == 0.2);
  CHECK(t.rows.back().s == 1.0);
  t.rows[1].latency_ms = 0.125;
  const std::string csv = t.to_csv();
  CHECK(csv.rfind("s,params,flops,latency_ms\n", 0) == 0);
  const CostTable back = CostTable::from_csv(csv);
  REQUIRE(back.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.rows[i].s == t.rows[i].s);
    CHECK(back.rows[i].params == t.rows[i].params);
    CHECK(back.rows[i].flops == t.rows[i].flops);
    CHECK(back.rows[i].latency_ms.has_value() == t.rows[i].latency_ms.has_value());
  }
  CHECK(*back.rows[1].latency_ms == 0.125);
  CHECK_THROWS(CostTable::from_csv("s,params\n0.5,3\n"));
  CHECK_THROWS(CostTable::from_csv("s,params,flops,latency_ms\n0.5,3,4,\n"));
}

TEST_CASE("budget selection") {
  const CostTable t = reference_rows();
  CHECK(budget_select(t, {BudgetKind::Flops, 2.0e9}) == 0.4);
  CHECK(budget_select(t, {BudgetKind::Flops, 1.58e9}) == 0.4);
  CHECK(budget_select(t, {BudgetKind::Flops, 10e9}) == 1.0);
  CHECK(budget_select(t, {BudgetKind::Params, 40e6}) == 0.6);
  try {
    budget_select(t, {BudgetKind::Flops, 0.5e9});
    FAIL("expected InfeasibleBudgetError");
  } catch (const InfeasibleBudgetError& e) {
    CHECK(e.cheapest() == 1.0e9);
  }
  CHECK_THROWS_AS(budget_select(t, {BudgetKind::Latency, 1.0}), ContractError);
}

TEST_CASE("latency measurement") {
  const ArchConfig c = desk_dense_preset();
  AdaptiveNet net(c, 1);
  const LatencyStats s = measure_latency(net, full_subnet(c), {16, 2}, 3, 20);
  CHECK(s.reps == 20);
  CHECK(s.samples_ms.size() == 20);
  CHECK(s.mean_ms > 0.0);
  CHECK(s.cv >= 0.0);
}
