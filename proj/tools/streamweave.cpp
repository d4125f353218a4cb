// streamweave command-line tool.
//
// Exit codes: 0 success, 1 config or IO error, 2 failed sweep cells,
// 3 infeasible optimization.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "streamweave/streamweave.hpp"

namespace sw = streamweave;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kPartialFailure = 2;
constexpr int kInfeasible = 3;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& a, const std::string& config_help) {
  cmd->add_option("--config,config", a.config, config_help)->required();
  cmd->add_option("--seed", a.seed, "Random seed (u64)");
  cmd->add_option("--out", a.out, "Output path (stdout when omitted)");
  cmd->add_option("--set", a.overrides, "Override a config value, dotted.key=value (repeatable)");
}

/// Writes through `fn` to the file at `path`, or stdout when empty.
template <class Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty()) {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw sw::Error(sw::Errc::IoError, "cannot write " + path);
  fn(out);
  if (!out) throw sw::Error(sw::Errc::IoError, "write failed for " + path);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

int simulate(const CommonArgs& a) {
  auto e = sw::config::load_experiment(a.config, a.overrides);
  if (a.seed) e.run.seeds = {*a.seed};
  const std::string out = !a.out.empty() ? a.out : e.output ? e.output->string() : std::string();
  const auto table = sw::harness::run_experiment(e.run);
  with_output(out, [&](std::ostream& os) { sw::harness::write_results(table, os); });
  if (table.failed_cells > 0) {
    std::cerr << "streamweave: " << table.failed_cells << " sweep cell(s) failed\n";
    return kPartialFailure;
  }
  return kOk;
}

int optimize(const CommonArgs& a) {
  const auto inst = sw::config::load_instance(a.config, a.overrides);
  const auto plan = sw::alloc::solve(inst);
  if (!plan.feasible) {
    std::cerr << "streamweave: infeasible: minimal plan costs " << fmt(plan.minimal_cost) << ", budget is "
              << fmt(inst.budget) << "\n";
    return kInfeasible;
  }
  with_output(a.out, [&](std::ostream& os) {
    os << "stream,n_real,n_imputed,predictor,bias,epsilon\n";
    for (std::size_t i = 0; i < inst.k; ++i) {
      const auto p = plan.predictors[i];
      const double b = plan.n_imputed[i] > 0 ? sw::alloc::plan_bias(plan.n_real[i], plan.n_imputed[i],
                                                                     inst.variances[i], inst.explained_variance[i])
                                             : 0.0;
      os << i << ',' << plan.n_real[i] << ',' << plan.n_imputed[i] << ','
         << (p == sw::alloc::kNoPredictor ? std::string("-") : std::to_string(p)) << ',' << fmt(b) << ','
         << fmt(inst.epsilons[i]) << '\n';
    }
    os << "# objective," << fmt(plan.objective_value) << '\n';
    os << "# relaxed_objective," << fmt(plan.relaxed_objective) << '\n';
    os << "# cost," << fmt(sw::alloc::plan_cost(inst, plan.n_real, plan.n_imputed)) << '\n';
    os << "# feasible,true\n";
  });
  return kOk;
}

int synth(const CommonArgs& a) {
  const auto spec = sw::config::load_synthetic(a.config, a.overrides);
  const auto data = sw::harness::generate_synthetic(spec, a.seed.value_or(1));
  with_output(a.out, [&](std::ostream& os) { sw::harness::write_csv(data, os); });
  return kOk;
}

/// Prints a payload file's streams, or every stored query answer of a cloud log.
int inspect(const CommonArgs& a) {
  std::ifstream in(a.config, std::ios::binary);
  if (!in) throw sw::Error(sw::Errc::IoError, "cannot open " + a.config);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const bool payload = bytes.size() >= sw::wire::kMagic.size() &&
                       std::equal(sw::wire::kMagic.begin(), sw::wire::kMagic.end(), bytes.begin());
  if (payload) {
    const auto p = sw::wire::decode(bytes);
    with_output(a.out, [&](std::ostream& os) {
      os << "# window," << p.window_id << '\n';
      os << "# infeasible," << (p.infeasible ? "true" : "false") << '\n';
      os << "# bytes," << bytes.size() << '\n';
      os << "stream,n_real,model,predictor,n_imputed\n";
      for (const auto& s : p.streams) {
        os << s.stream_id << ',' << s.real_values.size() << ',';
        if (s.model) {
          os << sw::models::to_string(s.model->kind) << ',' << s.model->predictor_id << ',' << s.model->n_imputed;
        } else {
          os << "-,-,0";
        }
        os << '\n';
      }
    });
    return kOk;
  }
  const sw::cloud::Store store{std::filesystem::path(a.config)};
  with_output(a.out, [&](std::ostream& os) {
    os << sw::cloud::kQueryCsvHeader << '\n';
    for (const auto& [device, window] : store.keys()) {
      const auto values = store.values(device, window);
      for (auto agg : sw::cloud::kAllAggregates) {
        if (values->values.size() < (agg == sw::cloud::Aggregate::Var ? 2u : 1u)) continue;
        os << sw::cloud::csv_row(store.query(device, window, agg)) << '\n';
      }
    }
  });
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streamweave: budgeted edge sampling with cloud-side imputation"};
  app.require_subcommand(1);

  CommonArgs sim_args, opt_args, synth_args, inspect_args;
  auto* sim = app.add_subcommand("simulate", "Run an experiment sweep and write the result CSV");
  add_common(sim, sim_args, "Experiment config (JSON)");
  auto* opt = app.add_subcommand("optimize", "Solve one allocation instance and print the plan");
  add_common(opt, opt_args, "Problem instance (JSON)");
  auto* syn = app.add_subcommand("synth", "Generate a synthetic dataset as CSV");
  add_common(syn, synth_args, "Synthetic spec or experiment config (JSON)");
  auto* ins = app.add_subcommand("inspect", "Print the contents of a payload file or cloud store log");
  add_common(ins, inspect_args, "Payload or store log file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (sim->parsed()) return simulate(sim_args);
    if (opt->parsed()) return optimize(opt_args);
    if (syn->parsed()) return synth(synth_args);
    return inspect(inspect_args);
  } catch (const sw::Error& e) {
    std::cerr << "streamweave: " << e.what() << '\n';
    return e.code() == sw::Errc::Infeasible ? kInfeasible : kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "streamweave: " << e.what() << '\n';
    return kConfigError;
  }
}
