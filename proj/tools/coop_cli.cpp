// coop: command-line front end for training, evaluation, profiling and budget selection.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "coop/config.hpp"
#include "coop/cost_model.hpp"
#include "coop/data.hpp"
#include "coop/errors.hpp"
#include "coop/gradcheck.hpp"
#include "coop/trainer.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfig = 3,
  kFile = 4,
  kInfeasible = 5,
  kGradCheckFailed = 6,
  kNumerical = 7,
};

std::vector<double> parse_factor_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw coop::ConfigError("invalid factor '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw coop::ConfigError("empty factor list");
  return out;
}

std::pair<std::size_t, std::size_t> parse_hw(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) {
      const auto v = static_cast<std::size_t>(std::stoul(text));
      return {v, v};
    }
    return {static_cast<std::size_t>(std::stoul(text.substr(0, x))),
            static_cast<std::size_t>(std::stoul(text.substr(x + 1)))};
  } catch (const std::exception&) {
    throw coop::ConfigError("invalid --input '" + text + "', expected HxW");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw coop::FileError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

coop::ArchConfig resolve_arch(const std::string& spec) {
  std::ifstream probe(spec);
  if (!probe) return coop::preset_by_name(spec);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(spec));
  } catch (const nlohmann::json::parse_error& e) {
    throw coop::ConfigError(spec + ": " + e.what());
  }
  if (j.contains("arch")) return coop::arch_from_json(j.at("arch"));
  return coop::arch_from_json(j);
}

struct TrainArgs {
  std::string config;
  std::string resume;
  std::string metrics = "metrics.jsonl";
  std::string checkpoint = "checkpoint.ckpt";
  std::size_t checkpoint_every = 0;
  std::size_t stop_after = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  coop::ExperimentConfig cfg = coop::load_experiment(a.config);
  if (coop::apply_seed_override(cfg)) std::fprintf(stderr, "seed from COOP_SEED: %llu\n",
                                                   static_cast<unsigned long long>(cfg.train.seed));
  coop::Trainer trainer(cfg, coop::dataset_for(cfg));
  coop::RunOptions opts;
  opts.metrics_path = a.metrics;
  opts.checkpoint_path = a.checkpoint;
  if (!a.resume.empty()) opts.resume_from = a.resume;
  if (a.stop_after > 0) opts.stop_after = a.stop_after;
  opts.checkpoint_every = a.checkpoint_every;
  opts.verbose = !a.quiet;
  const auto history = trainer.train(opts);
  if (!history.empty()) {
    std::printf("%s\n", history.back().to_json().dump().c_str());
  }
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& factors_text, const std::string& data_path) {
  const auto factors = parse_factor_list(factors_text);
  coop::Trainer trainer = coop::trainer_from_checkpoint(ckpt);
  const coop::Dataset data = data_path.empty() ? trainer.data() : coop::load_dataset(data_path);
  std::printf("%-12s", "net");
  for (double s : factors) std::printf(" %8.2fx", s);
  std::printf("\n");
  for (const auto& m : trainer.members()) {
    std::printf("%-12s", m.role.c_str());
    for (double s : factors) {
      if (m.role == "leader" && s != 1.0) {
        std::printf(" %9s", "-");
        continue;
      }
      std::printf(" %8.2f%%", 100.0 * trainer.accuracy(m.role, s, data));
    }
    std::printf("\n");
  }
  return kOk;
}

struct ProfileArgs {
  std::string arch;
  std::string input = "32x32";
  std::string convention = "mac";
  std::string factors = "0.2,0.4,0.6,0.8,1.0";
  std::size_t latency_reps = 0;
  std::size_t batch = 1;
  std::string out;
  bool json = false;
};

int cmd_profile(const ProfileArgs& a) {
  const coop::ArchConfig arch = resolve_arch(a.arch);
  const auto [h, w] = parse_hw(a.input);
  const auto conv = coop::parse_flop_convention(a.convention);
  coop::CostTable table = coop::build_cost_table(arch, parse_factor_list(a.factors), h, w, conv);
  if (a.latency_reps > 0) {
    coop::AdaptiveNet net(arch, 0);
    coop::Shape shape{a.batch, arch.input.channels};
    if (arch.input.is_image()) shape = {a.batch, arch.input.channels, h, w};
    for (auto& row : table.rows) {
      const auto stats = coop::measure_latency(net, coop::derive_subnet(arch, row.s), shape,
                                               a.latency_reps / 10, a.latency_reps);
      row.latency_ms = stats.mean_ms;
    }
  }
  const std::string text = a.json ? table.to_json() + "\n" : table.to_csv();
  if (a.out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw coop::FileError("cannot write '" + a.out + "'");
    f << text;
  }
  return kOk;
}

int cmd_select(const std::string& table_path, coop::Budget budget) {
  const coop::CostTable table = coop::CostTable::from_csv(read_file(table_path));
  std::printf("%g\n", coop::budget_select(table, budget));
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, bool verbose) {
  const auto report = coop::run_gradcheck_suite(seed);
  std::size_t failed = 0;
  for (const auto& e : report.entries) failed += e.passed ? 0 : 1;
  if (verbose || failed > 0) std::fputs(report.to_text().c_str(), stdout);
  std::printf("gradcheck: %zu/%zu passed (tolerance %.0e)\n", report.entries.size() - failed,
              report.entries.size(), report.tolerance);
  return report.all_passed() ? kOk : kGradCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coop: cooperative training of depth-adaptive networks"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* sc_train = app.add_subcommand("train", "Train a cohort from a JSON config");
  sc_train->add_option("--config", train.config, "Experiment config (JSON)")->required();
  sc_train->add_option("--resume", train.resume, "Checkpoint to resume from");
  sc_train->add_option("--metrics", train.metrics, "Metrics JSONL output")->capture_default_str();
  sc_train->add_option("--checkpoint", train.checkpoint, "Checkpoint output")->capture_default_str();
  sc_train->add_option("--checkpoint-every", train.checkpoint_every, "Checkpoint period in epochs");
  sc_train->add_option("--stop-after", train.stop_after, "Stop after this many epochs");
  sc_train->add_flag("--quiet", train.quiet, "No per-epoch log on stderr");

  std::string eval_ckpt, eval_factors = "0.2,0.4,0.6,0.8,1.0", eval_data;
  auto* sc_eval = app.add_subcommand("eval", "Per-factor accuracy of a checkpoint");
  sc_eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  sc_eval->add_option("--factors", eval_factors, "Comma-separated scaling factors")->capture_default_str();
  sc_eval->add_option("--data", eval_data, "Dataset file (default: training set)");

  ProfileArgs prof;
  auto* sc_prof = app.add_subcommand("profile", "Parameter/FLOP cost table");
  sc_prof->add_option("--arch", prof.arch, "Preset name or config path")->required();
  sc_prof->add_option("--input", prof.input, "Input resolution HxW")->capture_default_str();
  sc_prof->add_option("--flops-convention", prof.convention, "mac or 2mac")
      ->check(CLI::IsMember({"mac", "2mac"}))
      ->capture_default_str();
  sc_prof->add_option("--factors", prof.factors, "Comma-separated scaling factors")->capture_default_str();
  sc_prof->add_option("--latency-reps", prof.latency_reps, "Measure latency with this many timed runs");
  sc_prof->add_option("--batch", prof.batch, "Batch size for latency")->capture_default_str();
  sc_prof->add_option("--out", prof.out, "Write the table here instead of stdout");
  sc_prof->add_flag("--json", prof.json, "Emit JSON instead of CSV");

  std::string sel_table;
  double sel_flops = -1, sel_params = -1, sel_latency = -1;
  auto* sc_sel = app.add_subcommand("select", "Largest factor within a budget");
  sc_sel->add_option("--table", sel_table, "Cost table CSV")->required();
  auto* o_f = sc_sel->add_option("--flops", sel_flops, "FLOP limit");
  auto* o_p = sc_sel->add_option("--params", sel_params, "Parameter limit");
  auto* o_l = sc_sel->add_option("--latency", sel_latency, "Latency limit (ms)");
  o_f->excludes(o_p)->excludes(o_l);
  o_p->excludes(o_l);

  std::uint64_t gc_seed = 0;
  bool gc_verbose = false;
  auto* sc_gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  sc_gc->add_option("--seed", gc_seed, "Input seed")->capture_default_str();
  sc_gc->add_flag("-v,--verbose", gc_verbose, "Print every check");

  coop::DataSpec gd;
  std::string gd_kind = "spirals", gd_out;
  auto* sc_gd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  sc_gd->add_option("--kind", gd_kind, "spirals, blobs or rings")
      ->check(CLI::IsMember({"spirals", "blobs", "rings"}))
      ->capture_default_str();
  sc_gd->add_option("--n", gd.n, "Sample count")->capture_default_str();
  sc_gd->add_option("--classes", gd.classes, "Class count")->capture_default_str();
  sc_gd->add_option("--noise", gd.noise, "Noise level (negative: kind default)");
  sc_gd->add_option("--seed", gd.seed, "Generator seed")->capture_default_str();
  sc_gd->add_option("--grid", gd.grid, "Rasterize to GxG images (0: 2-D features)");
  sc_gd->add_option("--out", gd_out, "Output path (.csv or grid file)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*sc_train) return cmd_train(train);
    if (*sc_eval) return cmd_eval(eval_ckpt, eval_factors, eval_data);
    if (*sc_prof) return cmd_profile(prof);
    if (*sc_sel) {
      coop::Budget b;
      if (*o_f) b = {coop::BudgetKind::Flops, sel_flops};
      else if (*o_p) b = {coop::BudgetKind::Params, sel_params};
      else if (*o_l) b = {coop::BudgetKind::Latency, sel_latency};
      else {
        std::fprintf(stderr, "select: one of --flops, --params, --latency is required\n");
        return kUsage;
      }
      return cmd_select(sel_table, b);
    }
    if (*sc_gc) return cmd_gradcheck(gc_seed, gc_verbose);
    if (*sc_gd) {
      gd.kind = coop::parse_data_kind(gd_kind);
      coop::save_dataset(coop::gen_data(gd), gd_out);
      return kOk;
    }
  } catch (const coop::InfeasibleBudgetError& e) {
    std::fprintf(stderr, "infeasible budget: %s\n", e.what());
    return kInfeasible;
  } catch (const coop::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const coop::FileError& e) {
    std::fprintf(stderr, "file error: %s\n", e.what());
    return kFile;
  } catch (const coop::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
