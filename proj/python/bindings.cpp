#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include "coop/adaptive_net.hpp"
#include "coop/config.hpp"
#include "coop/cost_model.hpp"
#include "coop/data.hpp"
#include "coop/errors.hpp"
#include "coop/gradcheck.hpp"
#include "coop/gumbel_mask.hpp"
#include "coop/losses.hpp"
#include "coop/tensor.hpp"
#include "coop/trainer.hpp"

namespace py = pybind11;
using namespace coop;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(py::array_t<double, py::array::c_style | py::array::forcecast> a, bool requires_grad) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()), requires_grad);
}

py::array_t<double> grad_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  if (t.has_grad()) {
    std::copy(t.grad().begin(), t.grad().end(), out.mutable_data());
  } else {
    std::fill(out.mutable_data(), out.mutable_data() + out.size(), 0.0);
  }
  return out;
}

py::dict breakdown_dict(const LossBreakdown& b) {
  py::dict d;
  d["self_a"] = b.self_a;
  d["self_b"] = b.self_b;
  d["interactive"] = b.interactive;
  d["guided"] = b.guided;
  d["total"] = b.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_coopnet, m) {
  m.doc() = "Depth-adaptive residual networks with cooperative distillation";

  auto base = py::register_exception<Error>(m, "CoopError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FileError>(m, "FileError", base.ptr());
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<InfeasibleBudgetError>(m, "InfeasibleBudgetError", base.ptr());

  py::class_<Tensor>(m, "Tensor")
      .def(py::init(&from_numpy), py::arg("values"), py::arg("requires_grad") = false)
      .def_property_readonly("shape", [](const Tensor& t) { return t.shape(); })
      .def("numpy", &to_numpy)
      .def("grad", &grad_numpy)
      .def("item", &Tensor::item)
      .def("backward", &Tensor::backward)
      .def("zero_grad", &Tensor::zero_grad)
      .def("__add__", [](const Tensor& a, const Tensor& b) { return add(a, b); })
      .def("__sub__", [](const Tensor& a, const Tensor& b) { return sub(a, b); })
      .def("__mul__", [](const Tensor& a, const Tensor& b) { return mul(a, b); });

  m.def("sum", &sum);
  m.def("mean", &mean);
  m.def("relu", &relu);
  m.def("linear", &linear, py::arg("x"), py::arg("w"), py::arg("b") = Tensor());
  m.def("conv2d", &conv2d, py::arg("x"), py::arg("k"), py::arg("bias") = Tensor(), py::arg("stride") = 1,
        py::arg("padding") = 0);
  m.def("softmax_tau", &softmax_tau, py::arg("logits"), py::arg("tau") = 1.0);
  m.def("log_softmax_tau", &log_softmax_tau, py::arg("logits"), py::arg("tau") = 1.0);
  m.def("cross_entropy", [](const Tensor& z, const std::vector<int>& y) { return cross_entropy(z, y); });
  m.def("kl_div_tau", &kl_div_tau, py::arg("student"), py::arg("teacher"), py::arg("tau") = 1.0);
  m.def("stopgrad", &stopgrad);

  // Losses
  m.def("kd_loss", [](const Tensor& s, const Tensor& t, const std::vector<int>& y, double lambda,
                      double tau) { return kd_loss(s, t, y, lambda, tau); },
        py::arg("student"), py::arg("teacher"), py::arg("labels"), py::arg("lam"), py::arg("tau"));
  m.def("sfsl_weight", &sfsl_weight);
  m.def("sfsl_subnet_loss", &sfsl_subnet_loss, py::arg("full"), py::arg("subs"), py::arg("tau") = 1.0);
  m.def("self_learning_loss",
        [](const FactorLogits& z, const std::vector<int>& y) { return self_learning_loss(z, y); });
  m.def("ce_only_loss", [](const FactorLogits& z, const std::vector<int>& y) { return ce_only_loss(z, y); });
  m.def(
      "total_loss",
      [](const FactorLogits& a, const FactorLogits& b, std::optional<Tensor> leader,
         const std::vector<int>& y) {
        CohortOutputs o;
        o.teammate_a = a;
        o.teammate_b = b;
        if (leader) o.leader = *leader;
        o.labels = y;
        LossTerms terms;
        terms.interactive = !b.empty();
        terms.guided = leader.has_value();
        TotalLoss t = total_loss(o, terms);
        return py::make_tuple(t.value, breakdown_dict(t.breakdown));
      },
      py::arg("teammate_a"), py::arg("teammate_b") = FactorLogits{}, py::arg("leader") = py::none(),
      py::arg("labels"));

  // Architecture
  py::class_<ArchConfig>(m, "ArchConfig")
      .def_readonly("name", &ArchConfig::name)
      .def_readonly("repeats", &ArchConfig::repeats)
      .def_readonly("channels", &ArchConfig::channels)
      .def_readonly("num_classes", &ArchConfig::num_classes)
      .def("total_blocks", &ArchConfig::total_blocks)
      .def("to_json", [](const ArchConfig& c) { return to_json(c).dump(); });
  m.def("preset", &preset_by_name, py::arg("name"));
  m.def("arch_from_json", [](const std::string& text) { return arch_from_json(nlohmann::json::parse(text)); });

  py::class_<SubnetSpec>(m, "SubnetSpec")
      .def_readonly("scaling_factor", &SubnetSpec::scaling_factor)
      .def_readonly("active_counts", &SubnetSpec::active_counts)
      .def("total_active", &SubnetSpec::total_active)
      .def("__eq__", [](const SubnetSpec& a, const SubnetSpec& b) { return a == b; });
  m.def("derive_subnet", &derive_subnet, py::arg("config"), py::arg("s"));
  m.def("prefix_mask", &prefix_mask, py::arg("config"), py::arg("spec"));
  m.def("stage_entry_blocks", &stage_entry_blocks);

  py::class_<AdaptiveNet>(m, "AdaptiveNet")
      .def(py::init([](const ArchConfig& c, std::uint64_t seed) { return AdaptiveNet(c, seed); }),
           py::arg("config"), py::arg("seed") = 0)
      .def("forward",
           [](const AdaptiveNet& n, const Tensor& x, double s) {
             return n.forward(x, derive_subnet(n.config(), s), ForwardOptions::eval());
           },
           py::arg("x"), py::arg("s") = 1.0)
      .def("forward_masked",
           [](const AdaptiveNet& n, const Tensor& x, const std::vector<double>& mask, bool skip) {
             ForwardOptions o = skip ? ForwardOptions::eval() : ForwardOptions::train(false);
             if (!skip) o.norm = NormMode::Eval;
             return n.forward_masked(x, Tensor::vector(mask), o);
           },
           py::arg("x"), py::arg("mask"), py::arg("skip_inactive") = true)
      .def("parameter_names", [](const AdaptiveNet& n) {
        std::vector<std::string> out;
        for (const auto& p : n.named_parameters()) out.push_back(p.name);
        return out;
      });

  // Masks
  m.def("hard_topk", [](const std::vector<double>& v, std::size_t k) { return hard_topk(v, k); });
  m.def(
      "sample_mask",
      [](const ArchConfig& c, std::size_t k, std::uint64_t seed, double temperature) {
        GumbelConfig g{temperature, seed};
        Rng rng(seed);
        BinaryMask b = sample_mask(c, MaskParams::uniform(c), k, g, &rng);
        return b.hard();
      },
      py::arg("config"), py::arg("k"), py::arg("seed") = 0, py::arg("temperature") = kDefaultGumbelTemperature);
  m.def("k_for_scaling", &k_for_scaling);

  // Cost model
  m.def(
      "cost_table",
      [](const ArchConfig& c, const std::vector<double>& factors, std::size_t h, std::size_t w,
         const std::string& convention) {
        return build_cost_table(c, factors, h, w, parse_flop_convention(convention)).to_csv();
      },
      py::arg("config"), py::arg("factors") = std::vector<double>{0.2, 0.4, 0.6, 0.8, 1.0}, py::arg("h") = 32,
      py::arg("w") = 32, py::arg("convention") = "mac");
  m.def("count_params", &count_params);
  m.def(
      "count_flops",
      [](const ArchConfig& c, const SubnetSpec& s, std::size_t h, std::size_t w, const std::string& conv) {
        return count_flops(c, s, h, w, parse_flop_convention(conv));
      },
      py::arg("config"), py::arg("spec"), py::arg("h") = 32, py::arg("w") = 32, py::arg("convention") = "mac");
  m.def(
      "budget_select",
      [](const std::string& csv, const std::string& kind, double limit) {
        Budget b;
        if (kind == "flops") b.kind = BudgetKind::Flops;
        else if (kind == "params") b.kind = BudgetKind::Params;
        else if (kind == "latency") b.kind = BudgetKind::Latency;
        else throw ParameterError("budget kind must be flops, params or latency");
        b.limit = limit;
        return budget_select(CostTable::from_csv(csv), b);
      },
      py::arg("table_csv"), py::arg("kind"), py::arg("limit"));

  // Data
  m.def(
      "gen_data",
      [](const std::string& kind, std::size_t n, std::uint64_t seed, std::size_t classes, double noise) {
        DataSpec s;
        s.kind = parse_data_kind(kind);
        s.n = n;
        s.seed = seed;
        s.classes = classes;
        s.noise = noise;
        Dataset d = gen_data(s);
        py::array_t<double> x({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(d.sample_numel())});
        std::copy(d.features.begin(), d.features.end(), x.mutable_data());
        return py::make_tuple(x, d.labels);
      },
      py::arg("kind") = "spirals", py::arg("n") = 2000, py::arg("seed") = 7, py::arg("classes") = 3,
      py::arg("noise") = -1.0);

  // Training
  m.def(
      "train",
      [](const std::string& config_json, const std::string& metrics_path, const std::string& checkpoint_path) {
        ExperimentConfig cfg = experiment_from_json(nlohmann::json::parse(config_json));
        Trainer t(cfg, dataset_for(cfg));
        RunOptions o;
        o.metrics_path = metrics_path;
        o.checkpoint_path = checkpoint_path;
        std::vector<EpochRecord> hist;
        {
          py::gil_scoped_release release;
          hist = t.train(o);
        }
        py::list records;
        for (const auto& r : hist) records.append(r.to_json().dump());
        return records;
      },
      py::arg("config_json"), py::arg("metrics_path") = "", py::arg("checkpoint_path") = "");
  m.def(
      "evaluate_checkpoint",
      [](const std::string& path, const std::vector<double>& factors) {
        Trainer t = trainer_from_checkpoint(path);
        std::map<std::string, std::map<double, double>> out;
        for (const auto& mem : t.members())
          for (double s : factors)
            if (mem.role != "leader" || s == 1.0) out[mem.role][s] = t.accuracy(mem.role, s, t.data());
        return out;
      },
      py::arg("path"), py::arg("factors"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        auto r = run_gradcheck_suite(seed);
        py::list entries;
        for (const auto& e : r.entries) entries.append(py::make_tuple(e.name, e.max_rel_error, e.passed));
        return py::make_tuple(r.all_passed(), entries);
      },
      py::arg("seed") = 0);
}
