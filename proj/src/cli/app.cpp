#include "ttalab/cli/app.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "ttalab/cli/config.hpp"
#include "ttalab/defense/defense.hpp"
#include "ttalab/diagnostics/diagnostics.hpp"
#include "ttalab/nn/checkpoint.hpp"

namespace ttalab {

namespace fs = std::filesystem;

namespace {

// Flags shared by the subcommands. Unset optionals leave the config value alone.
struct Flags {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());

  std::optional<std::string> checkpoint;
  std::optional<std::size_t> epochs;
  std::optional<std::string> method;
  std::optional<double> eta;
  std::optional<std::string> kind;
  std::optional<std::size_t> n_mal;
  std::optional<double> epsilon;
  std::optional<double> alpha;
  std::optional<int> steps;
  bool bilevel = false;
  std::optional<double> omega;
  std::optional<int> restarts;
  std::optional<double> tau;
  std::optional<std::size_t> n_tr;
  std::optional<std::size_t> max_trials;
  std::vector<double> taus;
  std::vector<std::size_t> n_trs;
  std::vector<std::size_t> n_mal_list;

  int instances = 100;
  std::size_t trial = 0;
  std::string input;
};

void add_common(CLI::App* cmd, Flags& f, bool writes) {
  cmd->add_option("--seed", f.seed, "Master seed (overrides the config)");
  cmd->add_option("--config", f.config, "JSON config document")->check(CLI::ExistingFile);
  if (writes) cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--jobs", f.jobs, "Worker threads for TeBN trials")->check(CLI::PositiveNumber);
}

void add_model(CLI::App* cmd, Flags& f) {
  cmd->add_option("--checkpoint", f.checkpoint, "Load this checkpoint instead of training");
  cmd->add_option("--epochs", f.epochs, "Source training epochs");
  cmd->add_option("--method", f.method, "TTA method: tebn, tent, hard_pl, soft_pl, robust_pl, conjugate_pl");
  cmd->add_option("--eta", f.eta, "TTA learning rate");
  cmd->add_option("--max-trials", f.max_trials, "Stop after this many batches (0 = all)");
}

void add_attack(CLI::App* cmd, Flags& f) {
  cmd->add_option("--kind", f.kind, "Attack objective: targeted, indiscriminate, stealthy");
  cmd->add_option("--n-mal", f.n_mal, "Malicious rows per batch");
  cmd->add_option("--epsilon", f.epsilon, "l-inf radius (omit for unbounded)");
  cmd->add_option("--alpha", f.alpha, "Attack step size");
  cmd->add_option("--steps", f.steps, "Attack steps");
  cmd->add_flag("--bilevel", f.bilevel, "Differentiate through the TTA update");
  cmd->add_option("--omega", f.omega, "Stealthy weight on the benign rows");
  cmd->add_option("--restarts", f.restarts, "Random restarts after the zero start");
}

void add_defense(CLI::App* cmd, Flags& f) {
  cmd->add_option("--tau", f.tau, "Smoothing weight on training statistics");
  cmd->add_option("--n-tr", f.n_tr, "Final BN layers pinned to training statistics");
}

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config_file(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (f.method) cfg.tta.method = parse_tta_method(*f.method);
  if (f.eta) cfg.tta.eta = *f.eta;
  if (f.kind) cfg.attack.kind = parse_attack_kind(*f.kind);
  if (f.n_mal) cfg.attack.n_mal = *f.n_mal;
  if (f.epsilon) cfg.attack.epsilon = *f.epsilon;
  if (f.alpha) cfg.attack.alpha = *f.alpha;
  if (f.steps) cfg.attack.steps = *f.steps;
  if (f.bilevel) cfg.attack.bilevel = true;
  if (f.omega) cfg.attack.omega = *f.omega;
  if (f.restarts) cfg.attack.restarts = *f.restarts;
  if (f.tau || f.n_tr) {
    DefenseSpec d = cfg.defense.value_or(DefenseSpec{});
    if (f.tau) d.tau = *f.tau;
    if (f.n_tr) d.n_tr = *f.n_tr;
    cfg.defense = d;
  }
  if (f.max_trials) cfg.max_trials = *f.max_trials;
  if (!f.taus.empty()) cfg.sweep.taus = f.taus;
  if (!f.n_trs.empty()) cfg.sweep.n_trs = f.n_trs;
  if (!f.n_mal_list.empty()) cfg.sweep.n_mal = f.n_mal_list;
  cfg.finalize();
  cfg.benchmark.validate();
  cfg.tta.validate();
  return cfg;
}

Network obtain_network(const ExperimentConfig& cfg, const Benchmark& bench) {
  if (cfg.checkpoint) return read_checkpoint_file(*cfg.checkpoint);
  return train_source(bench.train, cfg.benchmark.n_classes, cfg.arch, cfg.train);
}

RunOptions run_options(const ExperimentConfig& cfg, std::size_t jobs, bool with_attack) {
  RunOptions o;
  o.tta = cfg.tta;
  if (with_attack) o.attack = cfg.attack;
  o.defense = cfg.defense;
  o.seed = Rng::derive(cfg.seed, 0x7e57);
  o.jobs = jobs;
  o.max_trials = cfg.max_trials;
  return o;
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + out + "': " + ec.message());
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  return f;
}

void write_summary_csv(const fs::path& path, const RunSummary& s) {
  auto f = open_output(path);
  f << "n_trials,asr,corruption_error_rate,corruption_accuracy,corruption_accuracy_degradation\n";
  f << s.records.size() << ',' << format_double(s.asr) << ',' << format_double(s.corruption_error_rate)
    << ',' << format_double(s.corruption_accuracy()) << ','
    << format_double(s.corruption_accuracy_degradation) << '\n';
}

void print_summary(std::ostream& out, const RunSummary& s) {
  char line[200];
  std::snprintf(line, sizeof line,
                "trials %zu  asr %.4f  corruption error %.4f  degradation %.4f\n", s.records.size(),
                s.asr, s.corruption_error_rate, s.corruption_accuracy_degradation);
  out << line;
}

int cmd_train_source(const Flags& f, std::ostream& out) {
  const auto cfg = resolve(f);
  const auto bench = generate_benchmark(cfg.benchmark);
  const auto net = train_source(bench.train, cfg.benchmark.n_classes, cfg.arch, cfg.train);
  const auto dir = prepare_out(f.out);
  write_checkpoint_file(net, dir / "source.ckpt");
  const std::size_t bs = cfg.benchmark.batch_size;
  const double clean = evaluate_accuracy(net, bench.clean_test, BnMode::train_stats(), bs);
  const double shifted = evaluate_accuracy(net, bench.shifted_test, BnMode::train_stats(), bs);
  const double tebn = evaluate_accuracy(net, bench.shifted_test, BnMode::test_stats(), bs);
  auto csv = open_output(dir / "summary.csv");
  csv << "clean_accuracy,shifted_accuracy,shifted_accuracy_tebn\n"
      << format_double(clean) << ',' << format_double(shifted) << ',' << format_double(tebn) << '\n';
  char line[160];
  std::snprintf(line, sizeof line, "clean %.4f  shifted %.4f  shifted+TeBN %.4f\n", clean, shifted,
                tebn);
  out << line;
  return kExitOk;
}

int cmd_attack(const Flags& f, std::ostream& out) {
  const auto cfg = resolve(f);
  const auto bench = generate_benchmark(cfg.benchmark);
  const auto net = obtain_network(cfg, bench);
  const auto summary =
      run_trials(net, bench.shifted_test, cfg.benchmark.batch_size, run_options(cfg, f.jobs, true));
  const auto dir = prepare_out(f.out);
  auto jsonl = open_output(dir / "trials.jsonl");
  write_trials_jsonl(jsonl, summary.records);
  write_summary_csv(dir / "summary.csv", summary);
  print_summary(out, summary);
  return kExitOk;
}

int cmd_defend(const Flags& f, std::ostream& out) {
  const auto cfg = resolve(f);
  const auto bench = generate_benchmark(cfg.benchmark);
  const auto net = obtain_network(cfg, bench);
  auto base = run_options(cfg, f.jobs, true);
  base.defense.reset();
  const auto cells = defense_sweep(net, bench.shifted_test, cfg.benchmark.batch_size, base,
                                   cfg.sweep.taus, cfg.sweep.n_trs);
  const auto dir = prepare_out(f.out);
  auto csv = open_output(dir / "defense.csv");
  write_defense_csv(csv, cells);
  for (const auto& c : cells) {
    char line[160];
    std::snprintf(line, sizeof line, "tau %.2f  n_tr %zu  asr %.4f  corruption accuracy %.4f\n",
                  c.defense.tau, c.defense.n_tr, c.summary.asr, c.summary.corruption_accuracy());
    out << line;
  }
  return kExitOk;
}

int cmd_sweep(const Flags& f, std::ostream& out) {
  const auto cfg = resolve(f);
  const auto bench = generate_benchmark(cfg.benchmark);
  const auto net = obtain_network(cfg, bench);
  const auto dir = prepare_out(f.out);
  auto csv = open_output(dir / "sweep.csv");
  csv << "n_mal,asr,corruption_error_rate,corruption_accuracy_degradation\n";
  for (std::size_t n_mal : cfg.sweep.n_mal) {
    auto opts = run_options(cfg, f.jobs, true);
    opts.attack->n_mal = n_mal;
    const auto s = run_trials(net, bench.shifted_test, cfg.benchmark.batch_size, opts);
    csv << n_mal << ',' << format_double(s.asr) << ',' << format_double(s.corruption_error_rate)
        << ',' << format_double(s.corruption_accuracy_degradation) << '\n';
    out << "n_mal " << n_mal << "  ";
    print_summary(out, s);
  }
  return kExitOk;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
  const auto cfg = resolve(f);
  const auto report = run_gradcheck(cfg.seed, f.instances);
  print_gradcheck(out, report);
  return report.passed() ? kExitOk : kExitGradcheck;
}

int cmd_drift(const Flags& f, std::ostream& out) {
  const auto cfg = resolve(f);
  const auto bench = generate_benchmark(cfg.benchmark);
  const auto net = obtain_network(cfg, bench);
  const std::size_t bs = cfg.benchmark.batch_size;
  if (f.trial >= cfg.benchmark.n_trials()) {
    throw ConfigError("--trial " + std::to_string(f.trial) + " is past the last batch");
  }
  const auto trace = trace_trial(net, bench.shifted_test.slice(f.trial * bs, bs), f.trial,
                                 run_options(cfg, f.jobs, true));
  const auto report = bn_drift_report(trace.clean_stats, trace.attacked_stats);
  const auto dir = prepare_out(f.out);
  auto csv = open_output(dir / "drift.csv");
  write_drift_csv(csv, report);
  out << drift_summary(report);
  return kExitOk;
}

int cmd_report(const Flags& f, std::ostream& out) {
  std::ifstream in(f.input);
  if (!in) throw ConfigError("cannot open trials file '" + f.input + "'");
  const auto summary = summarize(read_trials_jsonl(in));
  double drift = 0.0;
  std::size_t mal = 0;
  for (const auto& r : summary.records) {
    drift += r.bn_drift_max;
    mal = std::max(mal, r.n_mal);
  }
  drift /= static_cast<double>(summary.records.size());
  char line[256];
  std::snprintf(line, sizeof line,
                "%-14s %8s %8s %12s %12s %10s\n%-14s %8zu %8.4f %12.4f %12.4f %10.4f\n", "method",
                "trials", "asr", "corr_error", "degradation", "bn_drift", summary.records.front().method.c_str(),
                summary.records.size(), summary.asr, summary.corruption_error_rate,
                summary.corruption_accuracy_degradation, drift);
  out << line << "max malicious rows per batch: " << mal << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test-time adaptation attack laboratory", "ttalab"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train-source", "Train the source model and write a checkpoint");
  add_common(train, f, true);
  train->add_option("--epochs", f.epochs, "Source training epochs");

  auto* attack = app.add_subcommand("attack", "Run the attack trial protocol");
  add_common(attack, f, true);
  add_model(attack, f);
  add_attack(attack, f);
  add_defense(attack, f);

  auto* defend = app.add_subcommand("defend", "Sweep the BN smoothing defense grid");
  add_common(defend, f, true);
  add_model(defend, f);
  add_attack(defend, f);
  defend->add_option("--taus", f.taus, "Smoothing weights to sweep");
  defend->add_option("--n-trs", f.n_trs, "Pinned final-layer counts to sweep");

  auto* sweep = app.add_subcommand("sweep", "Vary the number of malicious rows");
  add_common(sweep, f, true);
  add_model(sweep, f);
  add_attack(sweep, f);
  add_defense(sweep, f);
  sweep->add_option("--n-mal-list", f.n_mal_list, "Malicious row counts to sweep");

  auto* grad = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  add_common(grad, f, false);
  grad->add_option("--instances", f.instances, "Random instances per check")->check(CLI::PositiveNumber);

  auto* drift = app.add_subcommand("drift", "BN statistic drift of one attacked batch");
  add_common(drift, f, true);
  add_model(drift, f);
  add_attack(drift, f);
  add_defense(drift, f);
  drift->add_option("--trial", f.trial, "Batch index");

  auto* report = app.add_subcommand("report", "Summarise a trials.jsonl file");
  report->add_option("--input", f.input, "trials.jsonl to read")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train_source(f, out);
    if (attack->parsed()) return cmd_attack(f, out);
    if (defend->parsed()) return cmd_defend(f, out);
    if (sweep->parsed()) return cmd_sweep(f, out);
    if (grad->parsed()) return cmd_gradcheck(f, out);
    if (drift->parsed()) return cmd_drift(f, out);
    return cmd_report(f, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  }
}

}  // namespace ttalab
