// lowrank_lab: experiments on synthetic low-rank MDPs.
//
//   lowrank_lab optac run --config configs/optac-seed7.ini
//   lowrank_lab crff sweep --config configs/crff-decay-d.ini
//   lowrank_lab oracles bench --config configs/oracle-bench.ini
//   lowrank_lab lemmas run --trials 100 --seed 3
//   lowrank_lab plot emit --metric mixture_gap --out gap.csv runs/optac/seed-*.csv
//   lowrank_lab envgen make --states 20 --actions 4 --horizon 5 --rank 3 --seed 7 --out env.txt
//
// envgen make --out F also writes F.manifest.json with the seed and parameters.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lowrank/harness.hpp"

namespace {

using namespace lowrank;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
};

/// Loads the config, applies command-line overrides and checks the kind.
int run_config_command(const GlobalFlags& flags, std::initializer_list<ExperimentKind> kinds) {
  if (flags.config.empty()) {
    std::cerr << "--config is required\n";
    return kExitConfig;
  }
  std::string text;
  ExperimentConfig cfg;
  try {
    text = read_text_file(flags.config);
    cfg = parse_experiment_config(text);
  } catch (const std::exception& e) {
    std::cerr << flags.config << ": " << e.what() << '\n';
    return kExitConfig;
  }
  if (std::find(kinds.begin(), kinds.end(), cfg.kind) == kinds.end()) {
    std::cerr << flags.config << ": experiment kind '" << to_string(cfg.kind)
              << "' does not belong to this subcommand\n";
    return kExitConfig;
  }
  if (flags.seed) cfg.seeds = {*flags.seed};
  if (!flags.out.empty()) cfg.output = flags.out;
  if (flags.threads) cfg.threads = *flags.threads;
  try {
    const auto outcome = run_experiment(cfg, text);
    for (const auto& f : outcome.failures) std::cerr << f << '\n';
    if (outcome.exit_code == kExitOk) std::cout << "wrote " << cfg.output << '\n';
    return outcome.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experiments on synthetic low-rank MDPs"};
  app.require_subcommand(1);
  GlobalFlags flags;
  const auto add_globals = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config, "experiment config file");
    cmd->add_option("--seed", flags.seed, "run a single seed instead of the config's list");
    cmd->add_option("--out", flags.out, "output directory (or file for plot/envgen)");
    cmd->add_option("--threads", flags.threads, "worker threads")->check(CLI::Range(1, 256));
  };

  int status = kExitOk;

  auto* optac = app.add_subcommand("optac", "optimistic actor-critic runs");
  optac->require_subcommand(1);
  auto* optac_run = optac->add_subcommand("run", "run an optac or optac-misspecified config");
  add_globals(optac_run);
  optac_run->callback([&] {
    status = run_config_command(flags, {ExperimentKind::OptAc, ExperimentKind::OptAcMisspecified});
  });

  auto* crff = app.add_subcommand("crff", "random Fourier feature factorization");
  crff->require_subcommand(1);
  auto* crff_sweep = crff->add_subcommand("sweep", "error table over (W, d, N, seed)");
  add_globals(crff_sweep);
  crff_sweep->callback([&] { status = run_config_command(flags, {ExperimentKind::CrffSweep}); });

  auto* oracles = app.add_subcommand("oracles", "oracle reductions");
  oracles->require_subcommand(1);
  auto* bench = oracles->add_subcommand("bench", "call counts and accuracy per oracle");
  add_globals(bench);
  bench->callback([&] { status = run_config_command(flags, {ExperimentKind::OracleBench}); });

  auto* lemmas = app.add_subcommand("lemmas", "inequality sweeps");
  lemmas->require_subcommand(1);
  auto* lemmas_run = lemmas->add_subcommand("run", "run lemma sweeps and print JSON reports");
  add_globals(lemmas_run);
  std::string lemma_id;
  std::optional<int> trials;
  lemmas_run->add_option("--lemma", lemma_id, "only this lemma")
      ->check(CLI::IsMember(lemma_ids()));
  lemmas_run->add_option("--trials", trials, "trials per lemma")->check(CLI::NonNegativeNumber);
  lemmas_run->callback([&] {
    if (!flags.config.empty()) {
      status = run_config_command(flags, {ExperimentKind::Lemmas});
      return;
    }
    LemmaParams p;
    if (trials) p.elliptical = p.tv_hellinger = p.md_stability = p.value_difference = *trials;
    if (!lemma_id.empty()) p.only = lemma_id;
    const std::vector<std::uint64_t> seeds = {flags.seed.value_or(0)};
    bool passed = true;
    try {
      const auto j = lemma_json(p, seeds, flags.threads.value_or(1), passed);
      if (flags.out.empty()) std::cout << dump_json(j);
      else write_text_file(flags.out, dump_json(j));
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      status = kExitRuntime;
      return;
    }
    status = passed ? kExitOk : kExitRuntime;
  });

  auto* plot = app.add_subcommand("plot", "plot-ready data");
  plot->require_subcommand(1);
  auto* emit = plot->add_subcommand("emit", "long-format CSV from per-seed metric files");
  add_globals(emit);
  std::string metric = "mixture_gap";
  std::string x_column = "k";
  std::vector<std::string> inputs;
  emit->add_option("--metric", metric, "column to plot");
  emit->add_option("--x", x_column, "x column");
  emit->add_option("inputs", inputs, "per-seed CSV files")->required()->check(CLI::ExistingFile);
  emit->callback([&] {
    try {
      std::vector<std::string> texts;
      for (const auto& path : inputs) texts.push_back(read_text_file(path));
      const auto csv = emit_plot_data(texts, metric, x_column);
      if (flags.out.empty()) std::cout << csv;
      else write_text_file(flags.out, csv);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      status = kExitRuntime;
    }
  });

  auto* envgen = app.add_subcommand("envgen", "synthetic instances");
  envgen->require_subcommand(1);
  auto* make = envgen->add_subcommand("make", "write a seeded low-rank MDP in text form");
  add_globals(make);
  int states = 20, actions = 4, horizon = 5, rank = 3;
  make->add_option("--states", states)->check(CLI::PositiveNumber);
  make->add_option("--actions", actions)->check(CLI::PositiveNumber);
  make->add_option("--horizon", horizon)->check(CLI::PositiveNumber);
  make->add_option("--rank", rank)->check(CLI::PositiveNumber);
  make->callback([&] {
    if (rank > states) {
      std::cerr << "--rank must not exceed --states\n";
      status = kExitConfig;
      return;
    }
    try {
      const auto mdp = gen_lowrank(flags.seed.value_or(0), states, actions, horizon, rank);
      if (flags.out.empty()) {
        std::cout << to_text(mdp);
        return;
      }
      save_mdp(flags.out, mdp);
      const nlohmann::json manifest = {{"tool", kToolName},
                                       {"version", kToolVersion},
                                       {"kind", "envgen"},
                                       {"seed", flags.seed.value_or(0)},
                                       {"states", states},
                                       {"actions", actions},
                                       {"horizon", horizon},
                                       {"rank", rank},
                                       {"file", flags.out}};
      write_text_file(flags.out + ".manifest.json", dump_json(manifest));
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      status = kExitRuntime;
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  return status;
}
