#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "coop/errors.hpp"
#include "coop/random.hpp"
#include "coop/tensor.hpp"
#include "support/oracles.hpp"

using namespace coop;

namespace {

Tensor randn(Rng& rng, Shape s, bool rg = false) {
  Tensor t(s, rg);
  for (auto& v : t.mutable_data()) v = rng.normal();
  return t;
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("construction invariants") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_FALSE(t.has_grad());
  CHECK(Tensor::scalar(2.5).shape() == Shape{1});
}

TEST_CASE("tensors without requires_grad never accumulate") {
  Tensor a = Tensor::vector({1, 2}), b = Tensor::vector({3, 4}, true);
  sum(mul(a, b)).backward();
  CHECK_FALSE(a.has_grad());
  CHECK(vec(Tensor(b.shape(), {b.grad().begin(), b.grad().end()})) == std::vector<double>{1, 2});
}

TEST_CASE("linear") {
  Tensor x({1, 2}, {1, 2});
  CHECK(vec(linear(x, Tensor({2, 2}, {1, 0, 0, 1}), Tensor::vector({0, 0}))) == std::vector<double>{1, 2});
  CHECK(vec(linear(x, Tensor({2, 2}, {0, 0, 0, 0}), Tensor::vector({3, 4}))) == std::vector<double>{3, 4});

  Rng rng(1);
  Tensor a = randn(rng, {2, 3}), w = randn(rng, {3, 4});
  const Tensor y = matmul(a, w);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 3; ++k) acc += a.at(i * 3 + k) * w.at(k * 4 + j);
      CHECK(y.at(i * 4 + j) == doctest::Approx(acc).epsilon(1e-14));
    }
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("conv2d") {
  const Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor two = Tensor::full({1, 1, 1, 1}, 2.0);
  const Tensor y2 = conv2d(ones, two, Tensor(), 1, 0);
  for (double v : y2.data()) CHECK(v == 2.0);

  Rng rng(2);
  Tensor x = randn(rng, {1, 1, 4, 4});
  Tensor id({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  CHECK(vec(conv2d(x, id, Tensor(), 1, 1)) == vec(x));

  // Naive six-loop oracle with stride 2, padding 1.
  Tensor xi = randn(rng, {1, 2, 5, 5}), k = randn(rng, {3, 2, 3, 3}), b = randn(rng, {3});
  const std::size_t stride = 2, pad = 1, out = (5 + 2 * pad - 3) / stride + 1;
  const Tensor y = conv2d(xi, k, b, stride, pad);
  REQUIRE(y.shape() == Shape{1, 3, out, out});
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < out; ++i)
      for (std::size_t j = 0; j < out; ++j) {
        double acc = b.at(o);
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t u = 0; u < 3; ++u)
            for (std::size_t v = 0; v < 3; ++v) {
              const long r = long(i * stride + u) - long(pad), q = long(j * stride + v) - long(pad);
              if (r < 0 || q < 0 || r >= 5 || q >= 5) continue;
              acc += xi.at(c * 25 + r * 5 + q) * k.at(((o * 2 + c) * 3 + u) * 3 + v);
            }
        CHECK(y.at((o * out + i) * out + j) == doctest::Approx(acc).epsilon(1e-13));
      }
}

TEST_CASE("activation, pooling and normalization") {
  CHECK(vec(relu(Tensor::vector({-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  const Tensor pooled = global_avg_pool(Tensor::full({2, 3, 4, 4}, 1.75));
  for (double v : pooled.data()) CHECK(v == doctest::Approx(1.75));

  Rng rng(3);
  Tensor x = randn(rng, {4, 3});
  RunningStats st(3);
  const Tensor y = batch_norm(x, Tensor::full({3}, 1.0), Tensor::full({3}, 0.0), st, NormMode::Eval);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y.at(i) == doctest::Approx(x.at(i) / std::sqrt(1 + kBatchNormEps)).epsilon(1e-15));

  SUBCASE("train mode standardizes and updates running stats with unbiased variance") {
    Tensor z({4, 1}, {1, 2, 3, 6});
    RunningStats s(1);
    const Tensor out = batch_norm(z, Tensor::full({1}, 1.0), Tensor::full({1}, 0.0), s, NormMode::Train, true);
    double m = 0;
    for (double v : out.data()) m += v;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.mean[0] == doctest::Approx(0.9 * 0 + 0.1 * 3.0));
    CHECK(s.var[0] == doctest::Approx(0.9 * 1 + 0.1 * (4 + 1 + 0 + 9) / 3.0));
  }

  SUBCASE("layer norm rows have zero mean") {
    const Tensor ln = layer_norm(x, Tensor::full({3}, 1.0), Tensor::full({3}, 0.0));
    for (std::size_t r = 0; r < 4; ++r)
      CHECK(ln.at(r * 3) + ln.at(r * 3 + 1) + ln.at(r * 3 + 2) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax_tau") {
  CHECK(vec(softmax_tau(Tensor::vector({0, 0}), 1.0)) == std::vector<double>{0.5, 0.5});
  double prev = 1.0;
  for (double tau : {1.0, 10.0, 100.0, 1e4}) {
    const double p0 = softmax_tau(Tensor::vector({10, 0}), tau).at(0);
    CHECK(p0 < prev);
    prev = p0;
  }
  CHECK(prev == doctest::Approx(0.5).epsilon(1e-3));

  const Tensor p = softmax_tau(Tensor::vector({1, 2, 3}), 2.0);
  long double den = 0;
  for (int i = 1; i <= 3; ++i) den += std::exp(static_cast<long double>(i) / 2);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(p.at(i) - static_cast<double>(std::exp((i + 1) / 2.0L) / den)) < 1e-15);

  const Tensor big = softmax_tau(Tensor::vector({1000, 0}), 1.0);
  CHECK(std::isfinite(big.at(0)));
  CHECK(big.at(0) == doctest::Approx(1.0));
}

TEST_CASE("cross_entropy") {
  const std::vector<int> y0{1};
  CHECK(cross_entropy(Tensor({1, 3}, {0, 0, 0}), y0).item() == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  CHECK(cross_entropy(Tensor({1, 3}, {0, 1e3, 0}), y0).item() == doctest::Approx(0.0));

  Rng rng(4);
  const Tensor z = randn(rng, {6, 4});
  const std::vector<int> y{0, 3, 1, 2, 2, 0};
  CHECK(std::abs(cross_entropy(z, y).item() - static_cast<double>(oracle::ce(z, y))) < 1e-14);
  CHECK_THROWS(cross_entropy(z, std::vector<int>{0, 1}));
  CHECK_THROWS(cross_entropy(z, std::vector<int>{0, 3, 1, 2, 2, 4}));
}

TEST_CASE("kl_div_tau") {
  Rng rng(5);
  const Tensor a = randn(rng, {3, 4}), b = randn(rng, {3, 4});
  CHECK(kl_div_tau(a, a, 2.0).item() == doctest::Approx(0.0));
  // tau^2 scaling: value equals 4 * KL of the tau-softened distributions.
  const double soft = static_cast<double>(oracle::kl(a, b, 2.0) / 4.0L);
  CHECK(kl_div_tau(a, b, 2.0).item() == doctest::Approx(4.0 * soft).epsilon(1e-13));

  const Tensor student({1, 2}, {0, 0}), teacher({1, 2}, {std::log(3.0), 0.0});
  const double closed = 0.75 * std::log(0.75 / 0.5) + 0.25 * std::log(0.25 / 0.5);
  CHECK(kl_div_tau(student, teacher, 1.0).item() == doctest::Approx(closed).epsilon(1e-14));
}

TEST_CASE("stopgrad") {
  Tensor x = Tensor::vector({3.0}, true);
  const Tensor s = stopgrad(x);
  CHECK(vec(s) == vec(x));
  mul(s, x).backward();
  CHECK(x.grad()[0] == 3.0);

  Tensor st({2, 3}, {0.1, 0.2, 0.3, 1, 0, -1}, true), te({2, 3}, {1, 2, 3, 0, 0, 0}, true);
  kl_div_tau(st, stopgrad(te), 1.5).backward();
  CHECK(st.has_grad());
  CHECK_FALSE(te.has_grad());
}

TEST_CASE("straight_through: forward is hard, gradient is identity in soft") {
  Tensor soft = Tensor::vector({0.2, 0.5, 0.3}, true);
  const std::vector<double> hard{0, 1, 1};
  const Tensor y = straight_through(hard, soft);
  CHECK(vec(y) == hard);
  sum(mul(y, Tensor::vector({1, 2, 3}))).backward();
  CHECK(std::vector<double>(soft.grad().begin(), soft.grad().end()) == std::vector<double>{1, 2, 3});
}

TEST_CASE("backward semantics") {
  Tensor x = Tensor::vector({1, 2}, true);
  const Tensor l = sum(mul(x, x));
  l.backward();
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4});
  CHECK_THROWS_AS(l.backward(), ContractError);
  CHECK_THROWS(x.backward());  // non-scalar

  // Diamond graph: gradient contributions from both paths accumulate.
  Tensor a = Tensor::vector({2.0}, true);
  const Tensor b = mul(a, a), c = scale(a, 3.0);
  add(b, c).backward();
  CHECK(a.grad()[0] == doctest::Approx(2 * 2.0 + 3.0));
}

TEST_CASE("sgd") {
  Tensor p = Tensor::vector({1.0, -2.0}, true);
  Sgd opt({p}, SgdConfig{0.0, 0.0});
  sum(mul(p, Tensor::vector({0.5, 1.5}))).backward();
  opt.step(0.1);
  CHECK(p.at(0) == doctest::Approx(1.0 - 0.1 * 0.5));
  CHECK(p.at(1) == doctest::Approx(-2.0 - 0.1 * 1.5));

  SUBCASE("momentum recurrence") {
    Tensor q = Tensor::vector({0.0}, true);
    Sgd m({q}, SgdConfig{0.9, 0.0});
    for (int step = 0; step < 2; ++step) {
      m.zero_grad();
      scale(q, 2.0).backward();  // constant gradient 2
      m.step(0.0);
    }
    CHECK(m.velocity()[0][0] == doctest::Approx(2.0 * (1 + 0.9)));
  }

  SUBCASE("parameters without gradient are left alone") {
    Tensor r = Tensor::vector({4.0}, true);
    Sgd s({r}, SgdConfig{0.9, 0.5});
    s.step(1.0);
    CHECK(r.at(0) == 4.0);
  }
}

TEST_CASE("finite_diff_check") {
  Rng rng(6);
  Tensor x = randn(rng, {5});
  const auto quad = finite_diff_check([](const Tensor& t) { return sum(mul(t, t)); }, x);
  CHECK(quad.max_rel_error < 1e-8);

  // conv -> relu -> pool -> CE
  Tensor img = randn(rng, {2, 1, 5, 5});
  Tensor k = randn(rng, {3, 1, 3, 3});
  const std::vector<int> y{0, 2};
  const auto res = finite_diff_check(
      [&](const Tensor& kk) { return cross_entropy(global_avg_pool(relu(conv2d(img, kk, Tensor(), 1, 1))), y); }, k);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("rng determinism and state round-trip") {
  Rng a(42), b(42);
  for (int i = 0; i < 5; ++i) CHECK(a.next_u64() == b.next_u64());
  const std::string st = a.state();
  const double n1 = a.normal();
  Rng c;
  c.set_state(st);
  CHECK(c.normal() == n1);
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}
