#include "coop/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "coop/adaptive_net.hpp"
#include "coop/gumbel_mask.hpp"
#include "coop/losses.hpp"
#include "coop/random.hpp"
#include "coop/tensor.hpp"

namespace coop {

namespace {

constexpr double kEps = 1e-5;

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4});
}

class Suite {
 public:
  Suite(std::uint64_t seed, double tol) : rng_(seed), tol_(tol) {}

  Tensor randn(const Shape& s, double scale = 1.0) {
    Tensor t(s);
    for (auto& v : t.mutable_data()) v = scale * rng_.normal();
    return t;
  }

  // Values kept at least `gap` away from zero (kinks of relu).
  Tensor randn_away(const Shape& s, double gap = 0.05) {
    Tensor t = randn(s);
    for (auto& v : t.mutable_data())
      if (std::abs(v) < gap) v = v < 0 ? v - 2 * gap : v + 2 * gap;
    return t;
  }

  // Scalar reduction with fixed random weights: sum(op * W).
  std::function<Tensor(const Tensor&)> reducer(const Shape& s) {
    Tensor w = randn(s);
    return [w](const Tensor& y) { return sum(mul(y, w)); };
  }

  void record(const std::string& name, double err, std::size_t n) {
    report_.entries.push_back({name, err, n, err < tol_});
  }

  void op(const std::string& name, const Tensor& x, const std::function<Tensor(const Tensor&)>& f) {
    const GradCheckResult r = finite_diff_check(f, x, kEps);
    record(name, r.max_rel_error, r.checked);
  }

  // Analytic gradient of a leaf `param` owned elsewhere vs. in-place central differences.
  void param(const std::string& name, Tensor param, const std::function<Tensor()>& f) {
    param.zero_grad();
    f().backward();
    std::vector<double> analytic(param.numel(), 0.0);
    if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
    param.zero_grad();
    double worst = 0.0;
    auto data = param.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + kEps;
      const double up = f().item();
      data[i] = orig - kEps;
      const double down = f().item();
      data[i] = orig;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * kEps)));
    }
    param.zero_grad();
    record(name, worst, data.size());
  }

  // Analytic gradient vs. central differences of a separate value function.
  void custom(const std::string& name, const std::vector<double>& analytic, std::vector<double> x,
              const std::function<double(const std::vector<double>&)>& value) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + kEps;
      const double up = value(x);
      x[i] = orig - kEps;
      const double down = value(x);
      x[i] = orig;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * kEps)));
    }
    record(name, worst, x.size());
  }

  Rng& rng() { return rng_; }
  GradCheckReport take() {
    report_.tolerance = tol_;
    return std::move(report_);
  }

 private:
  Rng rng_;
  double tol_;
  GradCheckReport report_;
};

// ---------------------------------------------------------------------------
// Plain-double loss formulas with separate student and teacher copies.

using Logits = std::vector<double>;
constexpr std::size_t kB = 4, kC = 3;

double ref_ce(const Logits& z, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t r = 0; r < kB; ++r) {
    double mx = z[r * kC];
    for (std::size_t c = 1; c < kC; ++c) mx = std::max(mx, z[r * kC + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < kC; ++c) s += std::exp(z[r * kC + c] - mx);
    total += -(z[r * kC + y[r]] - mx - std::log(s));
  }
  return total / kB;
}

double ref_kl(const Logits& s, const Logits& t, double tau) {
  double total = 0.0;
  for (std::size_t r = 0; r < kB; ++r) {
    auto logp = [&](const Logits& z, std::size_t c) {
      double mx = z[r * kC] / tau;
      for (std::size_t k = 1; k < kC; ++k) mx = std::max(mx, z[r * kC + k] / tau);
      double sum = 0.0;
      for (std::size_t k = 0; k < kC; ++k) sum += std::exp(z[r * kC + k] / tau - mx);
      return z[r * kC + c] / tau - mx - std::log(sum);
    };
    for (std::size_t c = 0; c < kC; ++c) {
      const double lt = logp(t, c);
      total += std::exp(lt) * (lt - logp(s, c));
    }
  }
  return tau * tau * total / kB;
}

struct RefCohort {
  std::map<double, Logits> a, b;
  Logits leader;
};

struct Key {
  char who;  // 'a', 'b', 'l'
  double s;
};

Logits& slot(RefCohort& c, const Key& k) {
  if (k.who == 'l') return c.leader;
  return (k.who == 'a' ? c.a : c.b).at(k.s);
}

std::string key_name(const Key& k) {
  if (k.who == 'l') return "leader";
  char buf[48];
  std::snprintf(buf, sizeof buf, "teammate_%c[%g]", k.who, k.s);
  return buf;
}

double ref_self(const std::map<double, Logits>& st, const std::map<double, Logits>& te,
                const std::vector<int>& y) {
  double v = ref_ce(st.at(1.0), y);
  for (auto it = st.rbegin(); it != st.rend(); ++it)
    if (it->first != 1.0) v += ref_kl(it->second, te.at(1.0), 1.0) / it->first;
  return v;
}

double ref_interactive(const RefCohort& st, const RefCohort& te) {
  double ab = 0.0, ba = 0.0;
  for (const auto& [s, z] : st.a) {
    ab += ref_kl(z, te.b.at(s), 1.0);
    ba += ref_kl(st.b.at(s), te.a.at(s), 1.0);
  }
  return ab + ba;
}

double ref_guided(const RefCohort& st, const RefCohort& te, const std::vector<int>& y) {
  return ref_ce(st.leader, y) + ref_kl(st.a.at(1.0), te.leader, 1.0) +
         ref_kl(st.b.at(1.0), te.leader, 1.0);
}

using LibLoss = std::function<Tensor(const CohortOutputs&)>;
using RefLoss = std::function<double(const RefCohort&, const RefCohort&)>;

void check_loss(Suite& suite, const std::string& name, const RefCohort& base,
                const std::vector<int>& labels, const LibLoss& lib, const RefLoss& ref,
                const std::vector<Key>& keys) {
  for (const Key& key : keys) {
    CohortOutputs out;
    out.labels = labels;
    auto leaf = [](const Logits& z) { return Tensor({kB, kC}, z, true); };
    for (const auto& [s, z] : base.a) out.teammate_a.emplace(s, leaf(z));
    for (const auto& [s, z] : base.b) out.teammate_b.emplace(s, leaf(z));
    out.leader = leaf(base.leader);
    Tensor x = key.who == 'l' ? out.leader : (key.who == 'a' ? out.teammate_a : out.teammate_b).at(key.s);
    Tensor loss = lib(out);
    const double lib_value = loss.item();
    loss.backward();
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    const std::string full = "loss." + name + "/" + key_name(key);
    if (rel_error(lib_value, ref(base, base)) > 1e-9) {
      suite.record(full + " (value mismatch)", rel_error(lib_value, ref(base, base)), 1);
      continue;
    }
    RefCohort student = base;
    suite.custom(full, analytic, slot(student, key), [&](const std::vector<double>& v) {
      slot(student, key) = v;
      return ref(student, base);
    });
  }
}

void loss_checks(Suite& suite) {
  RefCohort base;
  auto rand_logits = [&] {
    Logits z(kB * kC);
    for (auto& v : z) v = 1.5 * suite.rng().normal();
    return z;
  };
  for (double s : {1.0, 0.5, 0.25}) {
    base.a[s] = rand_logits();
    base.b[s] = rand_logits();
  }
  base.leader = rand_logits();
  const std::vector<int> y{0, 2, 1, 2};

  const Key a1{'a', 1.0}, a5{'a', 0.5}, a25{'a', 0.25}, b1{'b', 1.0}, b5{'b', 0.5}, b25{'b', 0.25},
      lead{'l', 0.0};

  check_loss(
      suite, "kd", base, y,
      [&](const CohortOutputs& o) { return kd_loss(o.teammate_a.at(1.0), o.teammate_b.at(1.0), y, 0.5, 2.0); },
      [&](const RefCohort& st, const RefCohort& te) {
        return 0.5 * ref_ce(st.a.at(1.0), y) + 0.5 * ref_kl(st.a.at(1.0), te.b.at(1.0), 2.0);
      },
      {a1, b1});

  check_loss(
      suite, "simple_self_distill", base, y,
      [&](const CohortOutputs& o) {
        const std::vector<Tensor> subs{o.teammate_a.at(0.5), o.teammate_a.at(0.25)};
        return simple_self_distill(o.teammate_a.at(1.0), subs, y, 0.7, 2.0);
      },
      [&](const RefCohort& st, const RefCohort& te) {
        return ref_ce(st.a.at(1.0), y) + 0.7 * (ref_kl(st.a.at(0.5), te.a.at(1.0), 2.0) +
                                               ref_kl(st.a.at(0.25), te.a.at(1.0), 2.0));
      },
      {a1, a5, a25});

  check_loss(
      suite, "sfsl_subnet", base, y,
      [&](const CohortOutputs& o) {
        FactorLogits subs{{0.5, o.teammate_a.at(0.5)}, {0.25, o.teammate_a.at(0.25)}};
        return sfsl_subnet_loss(o.teammate_a.at(1.0), subs, 2.0);
      },
      [&](const RefCohort& st, const RefCohort& te) {
        return ref_kl(st.a.at(0.5), te.a.at(1.0), 2.0) / 0.5 + ref_kl(st.a.at(0.25), te.a.at(1.0), 2.0) / 0.25;
      },
      {a1, a5, a25});

  check_loss(
      suite, "self_learning", base, y, [&](const CohortOutputs& o) { return self_learning_loss(o.teammate_a, y); },
      [&](const RefCohort& st, const RefCohort& te) { return ref_self(st.a, te.a, y); }, {a1, a5, a25});

  check_loss(
      suite, "ce_only", base, y, [&](const CohortOutputs& o) { return ce_only_loss(o.teammate_a, y); },
      [&](const RefCohort& st, const RefCohort&) {
        double v = 0.0;
        for (const auto& [s, z] : st.a) v += ref_ce(z, y);
        return v;
      },
      {a1, a25});

  check_loss(
      suite, "interactive", base, y, [&](const CohortOutputs& o) { return interactive_loss(o); },
      [&](const RefCohort& st, const RefCohort& te) { return ref_interactive(st, te); }, {a1, a5, b25});

  check_loss(
      suite, "guided", base, y, [&](const CohortOutputs& o) { return guided_loss(o); },
      [&](const RefCohort& st, const RefCohort& te) { return ref_guided(st, te, y); }, {lead, a1, b1, a5});

  check_loss(
      suite, "total", base, y, [&](const CohortOutputs& o) { return total_loss(o).value; },
      [&](const RefCohort& st, const RefCohort& te) {
        return ref_self(st.a, te.a, y) + ref_self(st.b, te.b, y) + ref_interactive(st, te) +
               ref_guided(st, te, y);
      },
      {a1, a25, b5, b1, lead});
}

// ---------------------------------------------------------------------------

void op_checks(Suite& s) {
  const Shape m{3, 4};
  {
    Tensor a = s.randn(m), b = s.randn(m);
    auto r = s.reducer(m);
    s.op("op.add/a", a, [&](const Tensor& x) { return r(add(x, b)); });
    s.op("op.add/b", b, [&](const Tensor& x) { return r(add(a, x)); });
    s.op("op.sub/a", a, [&](const Tensor& x) { return r(sub(x, b)); });
    s.op("op.sub/b", b, [&](const Tensor& x) { return r(sub(a, x)); });
    s.op("op.mul/a", a, [&](const Tensor& x) { return r(mul(x, b)); });
    s.op("op.mul/b", b, [&](const Tensor& x) { return r(mul(a, x)); });
    s.op("op.scale", a, [&](const Tensor& x) { return r(scale(x, -1.7)); });
    const std::vector<double> c(b.data().begin(), b.data().end());
    s.op("op.add_constant", a, [&](const Tensor& x) { return r(add_constant(x, c)); });
    Tensor gate = s.randn({1});
    s.op("op.broadcast_mul/x", a, [&](const Tensor& x) { return r(broadcast_mul(x, gate)); });
    s.op("op.broadcast_mul/gate", gate, [&](const Tensor& g) { return r(broadcast_mul(a, g)); });
    s.op("op.select", a, [&](const Tensor& x) { return scale(select(x, 5), 2.0); });
    s.op("op.sum", a, [&](const Tensor& x) { return sum(mul(x, x)); });
    s.op("op.mean", a, [&](const Tensor& x) { return mean(mul(x, b)); });
    s.op("op.relu", s.randn_away(m), [&](const Tensor& x) { return r(relu(x)); });
  }
  {
    Tensor v = s.randn({6});
    const std::vector<std::size_t> idx{4, 0, 2};
    auto r3 = s.reducer({3});
    s.op("op.gather", v, [&](const Tensor& x) { return r3(gather(x, idx)); });
    auto r6 = s.reducer({6});
    Tensor v3 = s.randn({3});
    s.op("op.scatter", v3, [&](const Tensor& x) { return r6(scatter(x, idx, 6, 1.0)); });
  }
  {
    Tensor x = s.randn({3, 4}), w = s.randn({4, 2}), b = s.randn({2});
    auto r = s.reducer({3, 2});
    s.op("op.linear/x", x, [&](const Tensor& t) { return r(linear(t, w, b)); });
    s.op("op.linear/w", w, [&](const Tensor& t) { return r(linear(x, t, b)); });
    s.op("op.linear/b", b, [&](const Tensor& t) { return r(linear(x, w, t)); });
    s.op("op.matmul/a", x, [&](const Tensor& t) { return r(matmul(t, w)); });
    s.op("op.matmul/b", w, [&](const Tensor& t) { return r(matmul(x, t)); });
  }
  {
    Tensor x = s.randn({2, 2, 5, 5}), k = s.randn({3, 2, 3, 3}), b = s.randn({3});
    auto r = s.reducer({2, 3, 3, 3});
    s.op("op.conv2d/x", x, [&](const Tensor& t) { return r(conv2d(t, k, b, 2, 1)); });
    s.op("op.conv2d/kernel", k, [&](const Tensor& t) { return r(conv2d(x, t, b, 2, 1)); });
    s.op("op.conv2d/bias", b, [&](const Tensor& t) { return r(conv2d(x, k, t, 2, 1)); });
    auto rp = s.reducer({2, 2});
    s.op("op.global_avg_pool", x, [&](const Tensor& t) { return rp(global_avg_pool(t)); });
  }
  {
    Tensor x = s.randn({5, 3}), g = s.randn({3}), b = s.randn({3});
    Tensor x4 = s.randn({3, 2, 2, 2}), g2 = s.randn({2}), b2 = s.randn({2});
    auto r = s.reducer({5, 3});
    auto r4 = s.reducer({3, 2, 2, 2});
    RunningStats st(3);
    RunningStats st2(2);
    st.mean = {0.3, -0.2, 0.1};
    st.var = {1.5, 0.7, 2.0};
    for (NormMode mode : {NormMode::Train, NormMode::Eval}) {
      const std::string tag = mode == NormMode::Train ? "train" : "eval";
      s.op("op.batch_norm." + tag + "/x", x, [&](const Tensor& t) { return r(batch_norm(t, g, b, st, mode, false)); });
      s.op("op.batch_norm." + tag + "/gamma", g, [&](const Tensor& t) { return r(batch_norm(x, t, b, st, mode, false)); });
      s.op("op.batch_norm." + tag + "/beta", b, [&](const Tensor& t) { return r(batch_norm(x, g, t, st, mode, false)); });
      s.op("op.batch_norm." + tag + "/x4d", x4,
           [&](const Tensor& t) { return r4(batch_norm(t, g2, b2, st2, mode, false)); });
    }
    s.op("op.layer_norm/x", x, [&](const Tensor& t) { return r(layer_norm(t, g, b)); });
    s.op("op.layer_norm/gamma", g, [&](const Tensor& t) { return r(layer_norm(x, t, b)); });
    s.op("op.layer_norm/beta", b, [&](const Tensor& t) { return r(layer_norm(x, g, t)); });
  }
  {
    Tensor z = s.randn({4, 3}, 1.5), t = s.randn({4, 3}, 1.5);
    auto r = s.reducer({4, 3});
    const std::vector<int> y{1, 0, 2, 2};
    s.op("op.softmax_tau", z, [&](const Tensor& x) { return r(softmax_tau(x, 2.0)); });
    s.op("op.log_softmax_tau", z, [&](const Tensor& x) { return r(log_softmax_tau(x, 0.7)); });
    s.op("op.cross_entropy", z, [&](const Tensor& x) { return cross_entropy(x, y); });
    s.op("op.kl_div_tau/student", z, [&](const Tensor& x) { return kl_div_tau(x, stopgrad(t), 3.0); });
    s.op("op.kl_div_tau/teacher", t, [&](const Tensor& x) { return kl_div_tau(z, x, 3.0); });
  }
}

void net_checks(Suite& s) {
  ArchConfig dense;
  dense.input = InputSpec{3, 0, 0};
  dense.stem = StemSpec{StemKind::Linear, 4, 1, 1};
  dense.block = BlockKind::Dense;
  dense.repeats = {2, 1};
  dense.channels = {4, 5};
  dense.num_classes = 3;
  dense.head_norm = true;
  AdaptiveNet net(dense, 11);
  Tensor x = s.randn({4, 3});
  const std::vector<int> y{0, 1, 2, 1};
  const SubnetSpec spec = full_subnet(dense);
  const ForwardOptions train = ForwardOptions::train(false);
  s.op("net.dense.forward/input", x, [&](const Tensor& t) { return cross_entropy(net.forward(t, spec, train), y); });
  for (const auto& p : net.named_parameters()) {
    if (p.name.find("s1/b0/proj.weight") != std::string::npos || p.name.find("head/0/ln.gamma") != std::string::npos ||
        p.name.find("s0/b1/fc2.weight") != std::string::npos) {
      s.param("net.dense.param/" + p.name, p.tensor, [&] { return cross_entropy(net.forward(x, spec, train), y); });
    }
  }

  ArchConfig conv;
  conv.input = InputSpec{1, 6, 6};
  conv.stem = StemSpec{StemKind::Conv, 2, 3, 1};
  conv.block = BlockKind::Bottleneck;
  conv.repeats = {1, 1};
  conv.channels = {1, 2};
  conv.num_classes = 2;
  AdaptiveNet cnet(conv, 12);
  Tensor xi = s.randn({3, 1, 6, 6});
  const std::vector<int> yi{0, 1, 1};
  const SubnetSpec cspec = full_subnet(conv);
  s.op("net.bottleneck.forward/input", xi,
       [&](const Tensor& t) { return cross_entropy(cnet.forward(t, cspec, train), yi); });
  for (const auto& p : cnet.named_parameters()) {
    if (p.name.find("s1/b0/conv2.weight") != std::string::npos || p.name.find("s1/b0/proj.weight") != std::string::npos) {
      s.param("net.bottleneck.param/" + p.name, p.tensor,
              [&] { return cross_entropy(cnet.forward(xi, cspec, train), yi); });
    }
  }
}

void mask_checks(Suite& s) {
  // Straight-through: gradient of sum(c * ST(hard, phi(l))) equals J_phi^T c.
  const std::size_t n = 5;
  Tensor logits = s.randn({n});
  std::vector<double> g(n);
  for (auto& v : g) v = gumbel_from_uniform(s.rng().uniform_open());
  Tensor c = s.randn({n});
  const double tau = kDefaultGumbelTemperature;
  {
    Tensor l = logits.clone(true);
    Tensor phi = soft_scores(l, g, tau);
    sum(mul(straight_through_topk(phi, 2), c)).backward();
    std::vector<double> analytic(l.grad().begin(), l.grad().end());
    s.custom("mask.straight_through/logits", analytic, {logits.data().begin(), logits.data().end()},
             [&](const std::vector<double>& v) {
               Tensor phi_v = soft_scores(Tensor::vector(v), g, tau);
               double acc = 0.0;
               for (std::size_t i = 0; i < n; ++i) acc += phi_v.at(i) * c.at(i);
               return acc;
             });
  }
  {
    Tensor soft = s.randn({n});
    const std::vector<double> hard{1, 0, 0, 1, 0};
    // d/dsoft sum(c * ST) == c, i.e. the identity Jacobian.
    Tensor sv = soft.clone(true);
    sum(mul(straight_through(hard, sv), c)).backward();
    std::vector<double> analytic(sv.grad().begin(), sv.grad().end());
    s.custom("mask.straight_through/identity", analytic, {soft.data().begin(), soft.data().end()},
             [&](const std::vector<double>& v) {
               double acc = 0.0;
               for (std::size_t i = 0; i < n; ++i) acc += v[i] * c.at(i);
               return acc;
             });
  }
  {
    // Full chain: loss(forward_masked(x, mask(l))) with the mask linearised at l0.
    ArchConfig cfg;
    cfg.input = InputSpec{2, 0, 0};
    cfg.stem = StemSpec{StemKind::Linear, 4, 1, 1};
    cfg.block = BlockKind::Dense;
    cfg.repeats = {3, 3};
    cfg.channels = {4, 4};
    cfg.num_classes = 3;
    AdaptiveNet net(cfg, 21);
    MaskParams mp{s.randn({cfg.total_blocks()})};
    const auto entries = stage_entry_blocks(cfg);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < cfg.total_blocks(); ++i)
      if (std::find(entries.begin(), entries.end(), i) == entries.end()) pool.push_back(i);
    std::vector<double> noise(pool.size());
    for (auto& v : noise) v = gumbel_from_uniform(s.rng().uniform_open());
    Tensor x = s.randn({5, 2});
    const std::vector<int> y{0, 1, 2, 0, 1};
    const ForwardOptions mult = ForwardOptions::train(false);
    const std::size_t k_pool = 2;

    Tensor l = mp.score_logits.clone(true);
    Tensor phi = soft_scores(gather(l, pool), noise, tau);
    Tensor mask = scatter(straight_through_topk(phi, k_pool), pool, cfg.total_blocks(), 1.0);
    cross_entropy(net.forward_masked(x, mask, mult), y).backward();
    std::vector<double> analytic(l.grad().begin(), l.grad().end());

    const std::vector<double> phi0(phi.data().begin(), phi.data().end());
    const std::vector<double> hard = hard_topk(phi0, k_pool);
    s.custom("mask.straight_through/network", analytic,
             {mp.score_logits.data().begin(), mp.score_logits.data().end()}, [&](const std::vector<double>& v) {
               Tensor pv = soft_scores(gather(Tensor::vector(v), pool), noise, tau);
               std::vector<double> m(cfg.total_blocks(), 1.0);
               for (std::size_t j = 0; j < pool.size(); ++j) m[pool[j]] = hard[j] + pv.at(j) - phi0[j];
               return cross_entropy(net.forward_masked(x, Tensor::vector(m), mult), y).item();
             });
  }
  {
    // Budget regularizer through the same straight-through path.
    Tensor l = logits.clone(true);
    const std::vector<double> costs{1, 2, 3, 4, 5};
    BinaryMask bm;
    bm.soft_scores = soft_scores(l, g, tau);
    bm.values = straight_through_topk(bm.soft_scores, 2);
    mask_budget_penalty(bm, costs, 0.5).backward();
    std::vector<double> analytic(l.grad().begin(), l.grad().end());
    s.custom("mask.budget_penalty/logits", analytic, {logits.data().begin(), logits.data().end()},
             [&](const std::vector<double>& v) {
               Tensor pv = soft_scores(Tensor::vector(v), g, tau);
               double acc = 0.0;
               for (std::size_t i = 0; i < n; ++i) acc += pv.at(i) * costs[i] / 15.0;
               return 0.5 * acc;
             });
  }
}

}  // namespace

bool GradCheckReport::all_passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::string GradCheckReport::to_text() const {
  std::ostringstream os;
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%.3e", e.max_rel_error);
    os << (e.passed ? "PASS " : "FAIL ") << e.name << " rel=" << buf << " n=" << e.checked << '\n';
  }
  return os.str();
}

GradCheckReport run_gradcheck_suite(std::uint64_t seed, double tolerance) {
  Suite suite(seed, tolerance);
  op_checks(suite);
  loss_checks(suite);
  net_checks(suite);
  mask_checks(suite);
  return suite.take();
}

}  // namespace coop
