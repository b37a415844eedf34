// incentfl: simulate | analyze | game | verify

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "incentfl/cli.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

void add_common(CLI::App* sub, Flags& f, bool config_required) {
  auto* c = sub->add_option("--config", f.config, "experiment config (key=value lines)");
  if (config_required) c->required();
  sub->add_option("--out", f.out, "output directory (overrides output.dir)");
  sub->add_option("--seed", f.seed, "seed override");
  sub->add_option("--threads", f.threads, "worker threads for client updates")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incentivized federated learning simulator"};
  app.require_subcommand(1);
  Flags f;
  auto* sim = app.add_subcommand("simulate", "run the mechanism and write rounds.csv + summary.json");
  auto* ana = app.add_subcommand("analyze", "utility analysis: curve, slope and concavity checks, optima");
  auto* gam = app.add_subcommand("game", "best-response dynamics, Nash check, mechanism comparison");
  auto* ver = app.add_subcommand("verify", "built-in property suite");
  add_common(sim, f, true);
  add_common(ana, f, true);
  add_common(gam, f, true);
  add_common(ver, f, false);
  CLI11_PARSE(app, argc, argv);

  try {
    incentfl::RunOptions opt;
    opt.threads = f.threads;
    if (!f.out.empty()) opt.out_dir = f.out;
    for (auto* s : {sim, ana, gam, ver})
      if (s->count("--seed")) opt.seed = f.seed;

    if (ver->parsed()) {
      incentfl::VerifyOptions v;
      if (!f.config.empty()) v.seed = incentfl::apply_overrides(incentfl::load_config(f.config), opt).seed;
      if (opt.seed) v.seed = *opt.seed;
      v.threads = opt.threads;
      return incentfl::run_verify(std::cout, v) ? 0 : 1;
    }

    const auto cfg = incentfl::apply_overrides(incentfl::load_config(f.config), opt);
    incentfl::RunReport report;
    if (sim->parsed()) report = incentfl::run_simulate(cfg, opt.threads);
    else if (ana->parsed()) report = incentfl::run_analyze(cfg);
    else report = incentfl::run_game(cfg, opt.threads);
    for (const auto& p : report.files) std::cout << "wrote " << p.string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
