#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lowrank/config.hpp"
#include "lowrank/crff.hpp"
#include "lowrank/dp.hpp"
#include "lowrank/envgen.hpp"
#include "lowrank/io.hpp"
#include "lowrank/lemmalab.hpp"
#include "lowrank/optac.hpp"
#include "lowrank/oracles.hpp"

namespace lowrank {

inline constexpr const char* kToolName = "lowrank_lab";
inline constexpr const char* kToolVersion = "0.1.0";

/// Process exit codes shared by the CLI and run_experiment.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3 };

// ---------------------------------------------------------------------------
// Statistics

struct Summary {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};

/// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  require(!sorted.empty(), "quantile: empty input");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline Summary summarize(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return {quantile_sorted(xs, 0.5), quantile_sorted(xs, 0.25), quantile_sorted(xs, 0.75)};
}

inline nlohmann::json to_json(const Summary& s) {
  return {{"median", s.median}, {"q25", s.q25}, {"q75", s.q75}};
}

inline nlohmann::json to_json(const LemmaReport& r) {
  return {{"lemma", r.id},
          {"trials", r.trials},
          {"violations", r.violations},
          {"worst_slack", r.trials > 0 ? nlohmann::json(r.worst_slack) : nlohmann::json(nullptr)},
          {"passed", r.passed()}};
}

// ---------------------------------------------------------------------------
// Worker pool

/// Runs fn(0 .. count-1) on at most `threads` workers. Tasks are claimed in
/// index order; the first exception is rethrown after every worker joins.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Files

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << content;
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline std::string csv_number(double x) {
  return std::isfinite(x) ? format_double(x) : (std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf"));
}

// ---------------------------------------------------------------------------
// Instances built from a config

inline LowRankMDP make_environment(const EnvParams& p, std::uint64_t run_seed) {
  return gen_lowrank(p.seed.value_or(run_seed), p.states, p.actions, p.horizon, p.rank);
}

inline ModelClass make_class(const LowRankMDP& env, const ClassParams& p, std::uint64_t run_seed) {
  return gen_model_class(env, p.size, p.seed.value_or(run_seed));
}

/// One row per iteration; columns are stable so files diff cleanly across runs.
inline std::string optac_csv(const RunMetrics& m, std::uint64_t seed) {
  std::ostringstream os;
  const std::size_t H = m.iterations.empty() ? 0 : m.iterations.front().log_det.size();
  os << "seed,k,model,gap,mixture_gap,bonus_value,tv_value,cum_bonus_value,cum_tv_value,"
        "sl_calls,pe_exact_calls,optimism_checks,optimism_violations";
  for (std::size_t h = 0; h < H; ++h) os << ",log_det_" << h;
  os << '\n';
  for (const auto& it : m.iterations) {
    os << seed << ',' << it.k << ',' << it.model << ',' << csv_number(it.gap) << ','
       << csv_number(it.mixture_gap) << ',' << csv_number(it.bonus_value) << ','
       << csv_number(it.tv_value) << ',' << csv_number(it.cum_bonus_value) << ','
       << csv_number(it.cum_tv_value) << ',' << it.sl_calls << ',' << it.pe_exact_calls << ','
       << it.optimism_checks << ',' << it.optimism_violations;
    for (double x : it.log_det) os << ',' << csv_number(x);
    os << '\n';
  }
  return os.str();
}

/// First iteration from which the selected model stays the truth; -1 if never.
inline int truth_locked_at(const RunMetrics& m) {
  if (!m.truth_index || m.iterations.empty()) return -1;
  int locked = -1;
  for (const auto& it : m.iterations) {
    if (it.model != *m.truth_index) locked = -1;
    else if (locked < 0) locked = it.k;
  }
  return locked;
}

struct OptAcSeedSummary {
  std::uint64_t seed = 0;
  std::string status;
  double final_mixture_gap = 0.0;
  double optimal_value = 0.0;
  double optimism_rate = 0.0;
  int truth_locked_at = -1;
};

inline nlohmann::json to_json(const OptAcSeedSummary& s) {
  return {{"seed", s.seed},
          {"status", s.status},
          {"final_mixture_gap", s.final_mixture_gap},
          {"optimal_value", s.optimal_value},
          {"optimism_rate", s.optimism_rate},
          {"truth_locked_at", s.truth_locked_at}};
}

inline OptAcSeedSummary summarize_run(const RunMetrics& m, std::uint64_t seed, int burn_in) {
  return {seed,
          m.status,
          m.final_mixture_gap,
          m.optimal_value,
          m.optimism_rate(burn_in),
          truth_locked_at(m)};
}

/// The optac experiment for one seed: instance, class and run.
inline OptAcResult run_optac_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                  std::optional<int> iterations = std::nullopt) {
  const auto env = make_environment(cfg.env, seed);
  const auto cls = make_class(env, cfg.model_class, seed);
  OptAcConfig oc = cfg.optac;
  oc.seed = seed;
  if (iterations) oc.iterations = *iterations;
  return run_optac(env, cls, oc);
}

// ---------------------------------------------------------------------------
// Runners. Each writes its files below cfg.output and returns an exit code.

struct ExperimentOutcome {
  int exit_code = kExitOk;
  std::vector<std::string> failures;  // "seed N: message"
};

inline std::string seed_file(std::uint64_t seed) { return "seed-" + std::to_string(seed) + ".csv"; }

inline nlohmann::json manifest(const ExperimentConfig& cfg, const std::string& config_text) {
  return {{"tool", kToolName},
          {"version", kToolVersion},
          {"kind", to_string(cfg.kind)},
          {"seeds", cfg.seeds},
          {"config", config_text}};
}

inline ExperimentOutcome run_optac_experiment(const ExperimentConfig& cfg) {
  const std::filesystem::path out_dir(cfg.output);
  std::vector<OptAcSeedSummary> rows(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    try {
      const auto res = run_optac_seed(cfg, seed);
      write_text_file(out_dir / seed_file(seed), optac_csv(res.metrics, seed));
      rows[i] = summarize_run(res.metrics, seed, cfg.optac.burn_in);
    } catch (const std::exception& e) {
      rows[i] = {seed, std::string("failed: ") + e.what(), NAN, NAN, NAN, -1};
    }
  });

  ExperimentOutcome outcome;
  nlohmann::json seeds = nlohmann::json::array();
  std::vector<double> gaps, rates;
  for (const auto& r : rows) {
    seeds.push_back(to_json(r));
    if (r.status != "ok") {
      outcome.failures.push_back("seed " + std::to_string(r.seed) + ": " + r.status);
      continue;
    }
    gaps.push_back(r.final_mixture_gap);
    rates.push_back(r.optimism_rate);
  }
  nlohmann::json agg = {{"kind", to_string(cfg.kind)}, {"seeds", seeds},
                        {"failed", outcome.failures.size()}};
  if (!gaps.empty()) {
    agg["final_mixture_gap"] = to_json(summarize(gaps));
    agg["optimism_rate"] = to_json(summarize(rates));
  }
  write_text_file(out_dir / "aggregate.json", dump_json(agg));
  if (!outcome.failures.empty()) outcome.exit_code = kExitRuntime;
  return outcome;
}

inline std::string zeta_dir(double zeta) { return "zeta-" + format_double(zeta); }

inline ExperimentOutcome run_misspecified_experiment(const ExperimentConfig& cfg) {
  const std::filesystem::path out_dir(cfg.output);
  const std::size_t Z = cfg.misspec.zetas.size();
  std::vector<OptAcSeedSummary> rows(Z * cfg.seeds.size());
  std::vector<double> measured(rows.size(), NAN);
  parallel_for(rows.size(), cfg.threads, [&](std::size_t idx) {
    const std::size_t z = idx / cfg.seeds.size();
    const auto seed = cfg.seeds[idx % cfg.seeds.size()];
    const double zeta = cfg.misspec.zetas[z];
    try {
      const auto base = make_environment(cfg.env, seed);
      const auto cls = make_class(base, cfg.model_class, seed);
      const auto env = gen_misspecified(base, zeta, cfg.misspec.seed);
      OptAcConfig oc = cfg.optac;
      oc.seed = seed;
      const auto res = run_optac(env, cls, oc);
      write_text_file(out_dir / zeta_dir(zeta) / seed_file(seed), optac_csv(res.metrics, seed));
      rows[idx] = summarize_run(res.metrics, seed, cfg.optac.burn_in);
      measured[idx] = env.zeta;
    } catch (const std::exception& e) {
      rows[idx] = {seed, std::string("failed: ") + e.what(), NAN, NAN, NAN, -1};
    }
  });

  ExperimentOutcome outcome;
  nlohmann::json per_zeta = nlohmann::json::array();
  std::vector<double> medians;
  for (std::size_t z = 0; z < Z; ++z) {
    nlohmann::json seeds = nlohmann::json::array();
    std::vector<double> gaps;
    double zeta_measured = 0.0;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      const auto& r = rows[z * cfg.seeds.size() + i];
      seeds.push_back(to_json(r));
      if (r.status != "ok") {
        outcome.failures.push_back("zeta " + format_double(cfg.misspec.zetas[z]) + " seed " +
                                   std::to_string(r.seed) + ": " + r.status);
        continue;
      }
      gaps.push_back(r.final_mixture_gap);
      zeta_measured = std::max(zeta_measured, measured[z * cfg.seeds.size() + i]);
    }
    nlohmann::json entry = {{"zeta", cfg.misspec.zetas[z]},
                            {"measured_zeta", zeta_measured},
                            {"seeds", seeds}};
    if (!gaps.empty()) {
      const auto s = summarize(gaps);
      entry["final_mixture_gap"] = to_json(s);
      medians.push_back(s.median);
    }
    per_zeta.push_back(entry);
  }
  // Medians in the order the zetas are listed; meaningful when listed ascending.
  bool nondecreasing = medians.size() == Z;
  for (std::size_t i = 1; nondecreasing && i < medians.size(); ++i)
    nondecreasing = medians[i] >= medians[i - 1];
  nlohmann::json agg = {{"kind", to_string(cfg.kind)},
                        {"zetas", per_zeta},
                        {"median_gap_nondecreasing", nondecreasing},
                        {"failed", outcome.failures.size()}};
  write_text_file(out_dir / "aggregate.json", dump_json(agg));
  if (!outcome.failures.empty()) outcome.exit_code = kExitRuntime;
  return outcome;
}

inline DensityOracle density_by_name(const std::string& name) {
  if (name == "bump-1d") return bump_density_1d();
  if (name == "bump-2d") return bump_density_2d();
  if (name == "gaussian-1d") return truncated_gaussian_1d(0.5, 0.15);
  throw std::invalid_argument("unknown density '" + name + "'");
}

inline std::string error_table_csv(const ErrorTable& table) {
  std::ostringstream os;
  os << "W,d,N,max_err,mean_err,seed\n";
  for (const auto& c : table.cells)
    os << csv_number(c.radius) << ',' << c.features << ',' << c.samples << ','
       << csv_number(c.max_err) << ',' << csv_number(c.mean_err) << ',' << c.seed << '\n';
  return os.str();
}

inline nlohmann::json trend_json(const ErrorTable& table) {
  nlohmann::json out = nlohmann::json::object();
  const std::pair<const char*, SweepAxis> axes[] = {
      {"W", SweepAxis::Radius}, {"d", SweepAxis::Features}, {"N", SweepAxis::Samples}};
  for (const auto& [name, axis] : axes) {
    const auto t = axis_trend(table, axis);
    if (t.values.size() < 2) continue;
    out[name] = {{"values", t.values}, {"median_max_err", t.median_max_err}, {"slope", t.slope}};
  }
  return out;
}

inline ExperimentOutcome run_crff_experiment(const ExperimentConfig& cfg) {
  const std::filesystem::path out_dir(cfg.output);
  const auto density = density_by_name(cfg.crff.density);
  const ErrorSweepOptions opts{cfg.crff.grid_points};
  // Cells in the same order error_sweep uses: W, d, N, seed.
  struct Cell {
    double w;
    int d, n;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double w : cfg.crff.radii)
    for (int d : cfg.crff.features)
      for (int n : cfg.crff.samples)
        for (auto s : cfg.seeds) cells.push_back({w, d, n, s});
  ErrorTable table;
  table.cells.resize(cells.size());
  parallel_for(cells.size(), cfg.threads, [&](std::size_t i) {
    const auto& c = cells[i];
    table.cells[i] = error_cell(density, c.w, c.d, c.n, c.seed, opts);
  });
  write_text_file(out_dir / "errors.csv", error_table_csv(table));
  const nlohmann::json summary = {{"kind", to_string(cfg.kind)},
                                  {"density", cfg.crff.density},
                                  {"sup_density", density.sup_value},
                                  {"trends", trend_json(table)}};
  write_text_file(out_dir / "summary.json", dump_json(summary));
  return {};
}

/// Oracle accounting and accuracy on one seeded instance.
struct OracleBenchRow {
  std::string oracle;
  long sl_calls = 0;
  long pe_exact_calls = 0;
  long expected_sl_calls = 0;
  double error = 0.0;  // E_rho error for PE/PP; 0/1 disagreement for CP/MLE
  int index = -1;
  int reference_index = -1;
  int survivors = 0;
};

inline std::vector<OracleBenchRow> oracle_bench_seed(const ExperimentConfig& cfg,
                                                     std::uint64_t seed) {
  const auto env = make_environment(cfg.env, seed);
  const auto& b = cfg.bench;
  const int S = env.n_states(), A = env.n_actions(), H = env.horizon();
  const auto rho = uniform_state_action(S, A);
  const auto kernel = materialize(env);
  std::vector<OracleBenchRow> rows;

  {
    OracleLedger ledger;
    const auto pi = Policy::uniform(H, S, A);
    const auto fit = pe_regression(env, pi, env.rewards(), rho, b.pe_samples, mix_seed(seed, 1),
                                   &ledger);
    const auto exact = exact_policy_eval(kernel, pi, env.rewards());
    rows.push_back({"pe", ledger.calls(OracleKind::SL), ledger.calls(OracleKind::PEExact), 1,
                    rho_error(fit.q, exact.q, rho), -1, -1, 0});
  }
  {
    OracleLedger ledger;
    const auto fit = pp_fqi(env, env.rewards(), rho, b.fqi_samples, mix_seed(seed, 2), &ledger);
    const auto exact = exact_optimal(kernel, env.rewards());
    rows.push_back({"pp", ledger.calls(OracleKind::SL), ledger.calls(OracleKind::PEExact), H,
                    rho_error(fit.q, exact.q, rho), -1, -1, 0});
  }
  {
    // A short uniform-policy dataset leaves several models inside the likelihood ball.
    const auto cls = gen_model_class(env, b.class_size, seed);
    Rng rng = make_rng(seed, 0x62656e);
    const auto uniform = Policy::uniform(H, S, A);
    std::vector<TransitionSample> data;
    for (int t = 0; t < b.data_trajectories; ++t) {
      int s = env.initial_state();
      for (int h = 0; h < H; ++h) {
        const int a = uniform.sample(rng, h, s);
        const int next = sample_categorical(rng, kernel.row(h, s, a));
        data.push_back({h, s, a, next});
        s = next;
      }
    }
    LogLikelihoodTracker tracker(cls);
    tracker.add(data);
    const auto& ll = tracker.log_likelihoods();
    const double beta = std::log(b.class_size / b.delta);
    const double threshold = *std::max_element(ll.begin(), ll.end()) - beta;

    OracleLedger cp_ledger;
    const auto cp = cp_enumerate(cls, ll, threshold, env.rewards(), rho, b.fqi_samples,
                                 mix_seed(seed, 3), &cp_ledger);
    int brute = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int i : cp.survivors) {
      const double v = exact_optimal(cls[i], env.rewards()).v(0, env.initial_state());
      if (v > best) {
        best = v;
        brute = i;
      }
    }
    const auto n_surv = static_cast<int>(cp.survivors.size());
    rows.push_back({"cp", cp_ledger.calls(OracleKind::SL), cp_ledger.calls(OracleKind::PEExact),
                    static_cast<long>(n_surv) * H, cp.index == brute ? 0.0 : 1.0, cp.index, brute,
                    n_surv});

    OracleLedger mle_ledger;
    const int chosen = mle_select(cls, data, beta, &mle_ledger);
    rows.push_back({"mle", mle_ledger.calls(OracleKind::SL), mle_ledger.calls(OracleKind::PEExact),
                    1, chosen == tracker.argmax() ? 0.0 : 1.0, chosen, cls.truth_index.value_or(-1),
                    0});
  }
  return rows;
}

inline std::string oracle_bench_csv(const std::vector<OracleBenchRow>& rows, std::uint64_t seed) {
  std::ostringstream os;
  os << "seed,oracle,sl_calls,expected_sl_calls,pe_exact_calls,error,index,reference_index,"
        "survivors\n";
  for (const auto& r : rows)
    os << seed << ',' << r.oracle << ',' << r.sl_calls << ',' << r.expected_sl_calls << ','
       << r.pe_exact_calls << ',' << csv_number(r.error) << ',' << r.index << ','
       << r.reference_index << ',' << r.survivors << '\n';
  return os.str();
}

inline ExperimentOutcome run_bench_experiment(const ExperimentConfig& cfg) {
  const std::filesystem::path out_dir(cfg.output);
  std::vector<std::vector<OracleBenchRow>> results(cfg.seeds.size());
  std::vector<std::string> status(cfg.seeds.size(), "ok");
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
    try {
      results[i] = oracle_bench_seed(cfg, cfg.seeds[i]);
      write_text_file(out_dir / seed_file(cfg.seeds[i]), oracle_bench_csv(results[i], cfg.seeds[i]));
    } catch (const std::exception& e) {
      status[i] = std::string("failed: ") + e.what();
    }
  });
  ExperimentOutcome outcome;
  std::map<std::string, std::vector<double>> errors;
  bool counts_match = true;
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    seeds.push_back({{"seed", cfg.seeds[i]}, {"status", status[i]}});
    if (status[i] != "ok") {
      outcome.failures.push_back("seed " + std::to_string(cfg.seeds[i]) + ": " + status[i]);
      continue;
    }
    for (const auto& r : results[i]) {
      errors[r.oracle].push_back(r.error);
      counts_match = counts_match && r.sl_calls == r.expected_sl_calls;
    }
  }
  nlohmann::json agg = {{"kind", to_string(cfg.kind)},
                        {"seeds", seeds},
                        {"sl_counts_match", counts_match},
                        {"failed", outcome.failures.size()}};
  for (const auto& [name, errs] : errors) agg["error"][name] = to_json(summarize(errs));
  write_text_file(out_dir / "aggregate.json", dump_json(agg));
  if (!outcome.failures.empty()) outcome.exit_code = kExitRuntime;
  return outcome;
}

/// Runs every selected lemma sweep for one seed.
inline std::vector<LemmaReport> lemma_reports(const LemmaParams& p, std::uint64_t seed) {
  const auto want = [&](const std::string& id) { return !p.only || *p.only == id; };
  std::vector<LemmaReport> out;
  if (want("elliptical-potential")) out.push_back(elliptical_potential_sweep(p.elliptical, seed));
  if (want("tv-hellinger")) {
    const auto pairs = random_measure_pairs(p.tv_hellinger, seed);
    out.push_back(tv_hellinger_check(pairs));
  }
  if (want("md-stability")) out.push_back(md_stability_sweep(p.md_stability, seed));
  if (want("value-difference")) out.push_back(value_difference_sweep(p.value_difference, seed));
  return out;
}

inline nlohmann::json lemma_json(const LemmaParams& p, std::span<const std::uint64_t> seeds,
                                 int threads, bool& all_passed) {
  std::vector<std::vector<LemmaReport>> per_seed(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t i) { per_seed[i] = lemma_reports(p, seeds[i]); });
  nlohmann::json reports = nlohmann::json::array();
  all_passed = true;
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (const auto& r : per_seed[i]) {
      auto j = to_json(r);
      j["seed"] = seeds[i];
      reports.push_back(j);
      all_passed = all_passed && r.passed();
    }
  return {{"kind", "lemmas"}, {"reports", reports}, {"all_passed", all_passed}};
}

inline ExperimentOutcome run_lemmas_experiment(const ExperimentConfig& cfg) {
  bool passed = true;
  const auto j = lemma_json(cfg.lemmas, cfg.seeds, cfg.threads, passed);
  write_text_file(std::filesystem::path(cfg.output) / "lemmas.json", dump_json(j));
  ExperimentOutcome outcome;
  if (!passed) {
    outcome.exit_code = kExitRuntime;
    outcome.failures.push_back("lemma sweep reported violations");
  }
  return outcome;
}

/// Dispatches on the experiment kind, then writes the manifest.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::string& config_text) {
  ExperimentOutcome outcome;
  switch (cfg.kind) {
    case ExperimentKind::OptAc: outcome = run_optac_experiment(cfg); break;
    case ExperimentKind::OptAcMisspecified: outcome = run_misspecified_experiment(cfg); break;
    case ExperimentKind::CrffSweep: outcome = run_crff_experiment(cfg); break;
    case ExperimentKind::OracleBench: outcome = run_bench_experiment(cfg); break;
    case ExperimentKind::Lemmas: outcome = run_lemmas_experiment(cfg); break;
  }
  write_text_file(std::filesystem::path(cfg.output) / "manifest.json",
                  dump_json(manifest(cfg, config_text)));
  return outcome;
}

/// Loads, parses and runs a config file; returns the process exit code and
/// writes diagnostics to err.
inline int run_experiment_file(const std::string& path, std::ostream& err) {
  std::string text;
  ExperimentConfig cfg;
  try {
    text = read_text_file(path);
    cfg = parse_experiment_config(text);
  } catch (const std::exception& e) {
    err << path << ": " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    const auto outcome = run_experiment(cfg, text);
    for (const auto& f : outcome.failures) err << f << '\n';
    return outcome.exit_code;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------------------
// Plot data

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  const auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  if (!std::getline(is, line)) throw std::invalid_argument("empty CSV");
  t.header = split(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != t.header.size())
      throw std::invalid_argument("CSV row has " + std::to_string(row.size()) + " cells, expected " +
                                  std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Long-format series from per-seed metric files: one row per (file, iteration)
/// as "metric,x,y,seed". With two or more seeds, median/q25/q75 series over the
/// seeds present at each x follow, tagged with seed "all".
inline std::string emit_plot_data(const std::vector<std::string>& csv_texts,
                                  const std::string& metric, const std::string& x_column = "k") {
  if (csv_texts.empty()) throw std::invalid_argument("emit_plot_data: no input files");
  std::ostringstream os;
  os << "series,x,y,seed\n";
  std::map<double, std::vector<double>> by_x;
  std::map<double, std::string> x_text;
  std::size_t rows = 0;
  for (const auto& text : csv_texts) {
    const auto t = parse_csv(text);
    const auto cx = t.column(x_column), cy = t.column(metric), cs = t.column("seed");
    for (const auto& r : t.rows) {
      os << metric << ',' << r[cx] << ',' << r[cy] << ',' << r[cs] << '\n';
      const double x = std::stod(r[cx]);
      by_x[x].push_back(std::stod(r[cy]));
      x_text.emplace(x, r[cx]);
      ++rows;
    }
  }
  if (rows == 0) throw std::invalid_argument("emit_plot_data: inputs contain no rows");
  if (csv_texts.size() >= 2) {
    std::vector<std::pair<double, Summary>> stats;
    for (const auto& [x, ys] : by_x) stats.emplace_back(x, summarize(ys));
    const std::pair<const char*, double Summary::*> series[] = {
        {"median", &Summary::median}, {"q25", &Summary::q25}, {"q75", &Summary::q75}};
    for (const auto& [name, field] : series)
      for (const auto& [x, s] : stats)
        os << metric << ':' << name << ',' << x_text[x] << ',' << csv_number(s.*field) << ",all\n";
  }
  return os.str();
}

}  // namespace lowrank
