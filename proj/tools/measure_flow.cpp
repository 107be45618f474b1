// measure_flow: scenario runner for the measure-valued transport solver.
//
//   measure_flow run      --config S.toml [--out DIR]
//   measure_flow validate --config S.toml [--out DIR]
//   measure_flow norms    (--measure MU.csv | --config S.toml) [--out DIR]
//   measure_flow sweep    --config S.toml [--out DIR]
//
// Exit status: 0 success, 2 a validation margin below -1e-9, 1 any other error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "measure_flow/config.hpp"
#include "measure_flow/io.hpp"
#include "measure_flow/parallel.hpp"
#include "measure_flow/scenario.hpp"

namespace mf = measure_flow;

namespace {

struct Common {
  std::string config;
  std::string out = "out";
  std::size_t threads = 0;
  std::optional<double> alpha;
  std::string measure;
};

mf::ScenarioConfig load(const Common& o) {
  if (o.config.empty()) throw mf::Error(mf::Errc::config_error, "`--config` is required");
  mf::ScenarioConfig c = mf::load_config(o.config);
  if (o.alpha) {
    if (!(*o.alpha > 0.0 && *o.alpha <= 1.0)) throw mf::Error(mf::Errc::config_error, "`--alpha` must lie in (0, 1]");
    c.alpha = *o.alpha;
  }
  return c;
}

int finish(const mf::RunOutput& r, const Common& o) {
  mf::write_outputs(r, o.out);
  if (!r.message.empty()) std::cerr << r.message << "\n";
  return r.exit_code;
}

int cmd_run(const Common& o) { return finish(mf::run_scenario(load(o)), o); }

int cmd_validate(const Common& o) {
  const mf::ScenarioConfig c = load(o);
  mf::RunOutput r = mf::run_validate(c);
  mf::put_common(r.summary, c);
  for (const auto& [name, text] : r.files) {
    if (name == "validation.csv") std::cout << text;
  }
  return finish(r, o);
}

int cmd_sweep(const Common& o) {
  const mf::ScenarioConfig c = load(o);
  mf::RunOutput r = mf::run_sweep(c);
  mf::put_common(r.summary, c);
  std::cout << "h_star," << mf::format_double(r.summary["h_star"].get<double>()) << "\n";
  return finish(r, o);
}

int cmd_norms(const Common& o, bool out_given) {
  double alpha = o.alpha.value_or(0.5);
  mf::ParticleMeasure mu;
  if (!o.measure.empty()) {
    mu = mf::read_measure_csv(o.measure, 0);
    if (!o.config.empty()) alpha = load(o).alpha;
  } else {
    const mf::ScenarioConfig c = load(o);
    mu = c.initial_measure;
    alpha = c.alpha;
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) throw mf::Error(mf::Errc::config_error, "`--alpha` must lie in (0, 1]");
  const mf::NormRow row = mf::measure_norms(mu, alpha);
  const std::string csv = mf::norms_csv(row);
  std::cout << csv;
  if (out_given) {
    mf::RunOutput r;
    r.files.emplace_back("norms.csv", csv);
    r.summary = {{"flat", row.flat}, {"z_lower", row.z_lower}, {"z_upper", row.z_upper}, {"tv", row.tv},
                 {"alpha", alpha}, {"particles", mu.size()}};
    mf::write_outputs(r, o.out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure-valued transport solver: scenarios, diagnostics, validation and sweeps"};
  app.require_subcommand(1);
  Common o;
  std::optional<double> alpha;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "scenario TOML file");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--threads", o.threads, "worker threads (fallback: MEASURE_FLOW_THREADS)");
    sub->add_option("--alpha", alpha, "Hölder exponent override in (0, 1]");
  };
  CLI::App* run = app.add_subcommand("run", "run the experiment named in the config");
  CLI::App* validate = app.add_subcommand("validate", "check the invariant suite on the configured model");
  CLI::App* norms = app.add_subcommand("norms", "print flat,z_lower,z_upper,tv of a measure");
  CLI::App* sweep = app.add_subcommand("sweep", "evaluate the objective over the h grid");
  for (CLI::App* sub : {run, validate, norms, sweep}) add_common(sub);
  norms->add_option("--measure", o.measure, "measure CSV (x_1..x_d,weight)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  o.alpha = alpha;
  const std::size_t env = mf::threads_from_env();
  mf::set_thread_count(o.threads > 0 ? o.threads : env > 0 ? env : 1);

  try {
    if (run->parsed()) return cmd_run(o);
    if (validate->parsed()) return cmd_validate(o);
    if (sweep->parsed()) return cmd_sweep(o);
    bool out_given = false;
    for (const CLI::Option* opt : norms->get_options()) {
      if (opt->get_name() == "--out") out_given = opt->count() > 0;
    }
    return cmd_norms(o, out_given);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
