// rdlt: config-driven runner for training, attacks, spectra and the
// property suite. Run `rdlt --help` or `rdlt <subcommand> --help`.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rdlt/app.hpp"

namespace {

void add_seed(CLI::App* cmd, std::optional<std::uint64_t>& seed, const std::string& what) {
  cmd->add_option("--seed", seed, what);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rdlt::app;
  CLI::App cli{"Rank-adaptive low-rank training with a condition-number regularizer"};
  cli.require_subcommand(1);
  Options o;
  const std::string out_help = std::string("output directory (default: $") + kOutRootEnv + " or " + kDefaultOutRoot +
                               ", see README)";

  auto* train = cli.add_subcommand("train", "train every configured seed, writing checkpoint and metrics");
  train->add_option("--config", o.config, "experiment config (JSON)")->required();
  train->add_option("--out", o.out, out_help);
  add_seed(train, o.seed, "run only this seed instead of the configured list");

  auto* attack = cli.add_subcommand("attack", "white-box adversarial accuracy over the configured ε grids");
  attack->add_option("--checkpoint", o.checkpoint, "trained model")->required();
  attack->add_option("--config", o.config, "config to take dataset and attacks from (default: the checkpoint's)");
  attack->add_option("--out", o.out, "output directory (default: next to the checkpoint)");
  add_seed(attack, o.seed, "seed for stochastic attacks");

  auto* blackbox = cli.add_subcommand("blackbox", "transfer attack from a source model to a target model");
  blackbox->add_option("--checkpoint", o.checkpoint, "target model")->required();
  blackbox->add_option("--source", o.source, "source model the examples are crafted on")->required();
  blackbox->add_option("--config", o.config, "config to take dataset and attacks from (default: the target's)");
  blackbox->add_option("--out", o.out, "output directory (default: next to the target checkpoint)");
  add_seed(blackbox, o.seed, "seed for stochastic attacks");

  auto* spectra = cli.add_subcommand("spectra", "singular spectra, kappa and bound per layer (CSV, JSON, SVG)");
  spectra->add_option("--checkpoint", o.checkpoint, "trained model")->required();
  spectra->add_option("--layers", o.layers, "comma-separated layer indices (default: all)");
  spectra->add_option("--out", o.out, "output directory (default: <checkpoint dir>/spectra)");

  auto* verify = cli.add_subcommand("verify", "run the numerical property suite; exit 1 if any check fails");
  add_seed(verify, o.seed, "base seed of the suite");
  verify->add_flag("--inject-fault", o.inject_fault, "negate the regularizer gradient (mutation test)")->group("");

  auto* summarize = cli.add_subcommand("summarize", "medians of final-epoch metrics over seed_* runs");
  summarize->add_option("--out", o.out, "directory holding seed_<n>/metrics.csv")->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  return guarded([&] {
    if (*train) return run_train(o);
    if (*attack) return run_attack(o);
    if (*blackbox) return run_blackbox(o);
    if (*spectra) return run_spectra(o);
    if (*verify) return rdlt::app::run_verify(o);
    return run_summarize(o);
  });
}
