// Acceptance gate: runs criteria 1-8 and prints one PASS/FAIL line for each.
// `acceptance --calibrate` runs only the end-to-end trend suite and prints the
// measured values in the calibration file's format.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "instances.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "ttalab/attack/attack.hpp"
#include "ttalab/bench/trials.hpp"
#include "ttalab/cli/app.hpp"
#include "ttalab/cli/config.hpp"
#include "ttalab/defense/defense.hpp"
#include "ttalab/diagnostics/diagnostics.hpp"
#include "ttalab/nn/checkpoint.hpp"

using namespace ttalab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects the sub-checks of one criterion.
struct Criterion {
  int number;
  std::string title;
  bool ok = true;
  std::vector<std::string> notes;

  void check(bool cond, const std::string& what) {
    if (!cond) ok = false;
    notes.push_back(std::string(cond ? "ok   " : "FAIL ") + what);
  }
};

std::string fmt(const char* f, double a) {
  char b[96];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

std::string fmt(const char* f, double a, double b) {
  char s[160];
  std::snprintf(s, sizeof s, f, a, b);
  return s;
}

std::size_t jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

// --- 1 ---------------------------------------------------------------------

Criterion gradient_suite() {
  Criterion c{1, "gradient oracle suite"};
  const auto t0 = Clock::now();
  const auto report = run_gradcheck(20240601, 100);
  const double secs = seconds_since(t0);
  for (const auto& e : report.entries) {
    c.check(e.instances >= 100 && e.max_rel_error <= 1e-5,
            e.name + ": " + std::to_string(e.instances) + " instances, max rel error " +
                fmt("%.3e", e.max_rel_error));
  }
  c.check(report.entries.size() == 5, "five gradient checks ran");
  c.check(secs < 30.0, fmt("runtime %.2f s < 30 s", secs));
  return c;
}

// --- 2 ---------------------------------------------------------------------

Criterion bn_invariants() {
  Criterion c{2, "BN invariants"};
  Rng rng(2);
  double worst_mean = 0.0, worst_var_excess = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.index(30), ch = 1 + rng.index(8);
    const double eps = t % 2 ? 1e-5 : 1e-3;
    auto z = oracle::random_matrix(rng, n, ch, -3.0, 3.0);
    for (double& v : z.values()) v *= rng.uniform(0.1, 10.0);
    const auto out = bn_forward(BatchNormLayer::identity(ch, eps), z, 0.0);
    for (std::size_t j = 0; j < ch; ++j) {
      double m = 0.0, v = 0.0, m_in = 0.0, v_in = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        m += out.out(i, j) / n;
        m_in += z(i, j) / n;
      }
      for (std::size_t i = 0; i < n; ++i) {
        v += (out.out(i, j) - m) * (out.out(i, j) - m) / n;
        v_in += (z(i, j) - m_in) * (z(i, j) - m_in) / n;
      }
      worst_mean = std::max(worst_mean, std::abs(m));
      // Variance is v_in / (v_in + eps): short of 1 by at most eps / v_in.
      worst_var_excess = std::max(worst_var_excess, std::abs(1.0 - v) - eps / v_in);
    }
  }
  c.check(worst_mean < 1e-9, fmt("normalized channel means: max |mean| %.2e < 1e-9", worst_mean));
  c.check(worst_var_excess <= 1e-12,
          fmt("normalized channel variances: |var - 1| <= eps / sigma^2 (worst excess %.2e)",
              worst_var_excess));

  bool smoothed_zero = true, smoothed_one = true, equivariant = true;
  for (int t = 0; t < 100; ++t) {
    const Network net = oracle::random_network(rng, 5, {7, 6}, 4);
    const std::size_t n = 2 + rng.index(20);
    const auto x = oracle::random_matrix(rng, n, 5, 0.0, 1.0);
    smoothed_zero &= forward(net, x, BnMode::smoothed(0.0, 0)).logits ==
                     forward(net, x, BnMode::test_stats()).logits;
    const auto train = forward(net, x, BnMode::train_stats()).logits;
    for (std::size_t n_tr : {0, 1, 2}) smoothed_one &= forward(net, x, BnMode::smoothed(1.0, n_tr)).logits == train;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    Tensor xp = x;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 5; ++j) xp(i, j) = x(perm[i], j);
    for (const BnMode& mode : {BnMode::test_stats(), BnMode::smoothed(0.4, 1)}) {
      const auto a = forward(net, x, mode).logits, b = forward(net, xp, mode).logits;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < 4; ++k) equivariant &= std::abs(b(i, k) - a(perm[i], k)) <= 1e-12;
    }
  }
  c.check(smoothed_zero, "Smoothed(0,0) logits bit-identical to TestStats on 100 networks");
  c.check(smoothed_one, "Smoothed(1,n_tr) logits bit-identical to TrainStats for n_tr in {0,1,2}");
  c.check(equivariant, "permuting the batch permutes the logits (within 1e-12)");
  return c;
}

// --- 3 ---------------------------------------------------------------------

Criterion loss_identities() {
  Criterion c{3, "loss identities"};
  Rng rng(3);
  const Tensor none;
  double conj_gap = 0.0, mae_gap = 0.0;
  bool soft_exact = true;
  for (int t = 0; t < 500; ++t) {
    const auto logits = oracle::random_matrix(rng, 1 + rng.index(16), 2 + rng.index(12), -8.0, 8.0);
    const auto teacher = oracle::random_matrix(rng, logits.rows(), logits.cols(), -8.0, 8.0);
    const double tent = tta_loss(TtaMethod::Tent, logits, none, 0.8, 1.0);
    conj_gap = std::max(conj_gap, std::abs(tta_loss(TtaMethod::ConjugatePL, logits, none, 0.8, 1.0) - tent));
    soft_exact &= tta_loss(TtaMethod::SoftPL, logits, logits, 0.8, 1.0) == tent;
    const auto p = softmax(logits);
    const auto y = predict_logits(teacher);
    double want = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) want += 1.0 - p(i, static_cast<std::size_t>(y[i]));
    want /= static_cast<double>(logits.rows());
    mae_gap = std::max(mae_gap, std::abs(tta_loss(TtaMethod::RobustPL, logits, teacher, 1.0, 1.0) - want));
  }
  c.check(conj_gap <= 1e-9, fmt("ConjugatePL(T=1) vs TENT entropy: max gap %.2e <= 1e-9", conj_gap));
  c.check(soft_exact, "SoftPL with the model as its own teacher equals TENT exactly (500 batches)");
  c.check(mae_gap <= 1e-15, fmt("RobustPL(q=1) vs 1 - p: max gap %.2e", mae_gap));

  // q -> 0 limit over the probability range p in [0.01, 1].
  double worst = 0.0, worst_p = 0.0;
  for (int s = 0; s <= 99000; ++s) {
    const double p = 0.01 + s * 1e-5;
    const auto logits = Tensor::from_rows({{std::log(p), p < 1.0 ? std::log1p(-p) : -1e3}});
    const auto teacher = Tensor::from_rows({{1.0, 0.0}});
    const double gap = std::abs(tta_loss(TtaMethod::RobustPL, logits, teacher, 1e-4, 1.0) -
                                tta_loss(TtaMethod::HardPL, logits, teacher, 1e-4, 1.0));
    if (gap > worst) {
      worst = gap;
      worst_p = p;
    }
  }
  c.check(worst < 1e-3, fmt("RobustPL(q=1e-4) vs HardPL on p in [0.01, 1]: max gap %.4e at p=%.5f", worst,
                            worst_p) +
                            " (bound 1e-3; the exact gap is about q*log(p)^2/2, which exceeds 1e-3 "
                            "for p < 0.0114)");
  return c;
}

// --- 4 ---------------------------------------------------------------------

Criterion attack_oracle() {
  Criterion c{4, "attack grid oracle"};
  const auto t0 = Clock::now();
  Rng rng(4);
  double worst = -1e300;
  int n = 0;
  for (int t = 0; t < 60; ++t) {
    const auto inst = oracle::OneDInstance::random(rng);
    const double tau = (t % 3) * 0.3;
    const double eps = 0.1 + 0.1 * (t % 4);
    TtaConfig tta;
    tta.method = TtaMethod::TeBN;
    tta.bn_mode = BnMode::smoothed(tau, 0);
    AttackSpec spec;
    spec.objective = Targeted{0, inst.tgt_label};
    spec.mal_indices = {1};
    spec.epsilon = eps;
    // The loss has two basins (x_mal below or above x_tgt) and descent from
    // zero can settle in the worse one, so a few random starts are added.
    spec.restarts = 4;
    const auto res = dia_attack(inst.network(), inst.batch(), {}, tta, spec, rng);
    worst = std::max(worst, res.final_loss - inst.grid_min(eps, tau));
    ++n;
  }
  const double secs = seconds_since(t0);
  c.check(worst <= 1e-3,
          std::to_string(n) + " one-dimensional instances: final loss - grid minimum <= " + fmt("%.2e", worst) +
              " (bound 1e-3)");
  c.check(secs < 10.0, fmt("runtime %.2f s < 10 s", secs));
  return c;
}

// --- shared benchmark ------------------------------------------------------

struct World {
  ExperimentConfig cfg;
  Benchmark bench;
  Network net;
};

World make_world(std::uint64_t seed) {
  World w;
  w.cfg.seed = seed;
  w.cfg.finalize();
  w.bench = generate_benchmark(w.cfg.benchmark);
  w.net = train_source(w.bench.train, w.cfg.benchmark.n_classes, w.cfg.arch, w.cfg.train);
  return w;
}

RunOptions base_options(const World& w, int steps) {
  RunOptions o;
  o.tta.method = TtaMethod::Tent;
  o.seed = Rng::derive(w.cfg.seed, 0x7e57);
  o.jobs = jobs();
  AttackPlan plan;
  plan.steps = steps;
  o.attack = plan;
  return o;
}

// --- 5 ---------------------------------------------------------------------

Criterion bilevel_consistency(const World& w, const json& cal) {
  Criterion c{5, "bilevel consistency"};
  const auto t0 = Clock::now();
  const int steps = cal.at("bilevel_attack_steps").get<int>();
  const std::size_t n_mal = cal.at("bilevel_n_mal").get<std::size_t>();
  const std::size_t bs = w.cfg.benchmark.batch_size;

  // eta = 0: the inner step is the identity, so both modes agree bit for bit.
  bool identical = true;
  for (std::size_t t = 0; t < 3; ++t) {
    auto opts = base_options(w, 30);
    opts.tta.eta = 0.0;
    opts.attack->n_mal = n_mal;
    const auto batch = w.bench.shifted_test.slice(t * bs, bs);
    const auto a = trace_trial(w.net, batch, t, opts);
    opts.attack->bilevel = true;
    const auto b = trace_trial(w.net, batch, t, opts);
    identical &= a.record == b.record && save_checkpoint(a.adapted) == save_checkpoint(b.adapted);
  }
  c.check(identical, "eta = 0: bilevel and single-level trials bit-identical (3 trials)");

  // eta = 1e-3: every trial starts from the source model so the two modes see
  // the same victim state.
  int agree = 0, succ_single = 0, succ_bi = 0;
  const std::size_t trials = w.cfg.benchmark.n_trials();
  for (std::size_t t = 0; t < trials; ++t) {
    auto opts = base_options(w, steps);
    opts.attack->n_mal = n_mal;
    const auto batch = w.bench.shifted_test.slice(t * bs, bs);
    const bool s = trace_trial(w.net, batch, t, opts).record.success;
    opts.attack->bilevel = true;
    const bool b = trace_trial(w.net, batch, t, opts).record.success;
    agree += s == b;
    succ_single += s;
    succ_bi += b;
  }
  const double rate = static_cast<double>(agree) / static_cast<double>(trials);
  c.check(trials == 50 && rate >= 0.9,
          std::to_string(agree) + "/" + std::to_string(trials) + " trials agree on success (" +
              fmt("%.2f", rate) + " >= 0.90); ASR single " + fmt("%.2f", succ_single / double(trials)) +
              ", bilevel " + fmt("%.2f", succ_bi / double(trials)));
  c.notes.push_back(fmt("info runtime %.1f s", seconds_since(t0)));
  return c;
}

// --- 6 ---------------------------------------------------------------------

struct Trends {
  double source_accuracy = 0, tta_accuracy = 0;
  double asr_nm0 = 0, asr_nm2 = 0, asr_nm10 = 0, asr_nm40 = 0;
  double error_nm0 = 0, error_indiscriminate = 0;
  double degradation_omega0 = 0, degradation_omega01 = 0, asr_omega01 = 0;
  double asr_defended_tau0 = 0, asr_tau06 = 0, asr_tau06_ntr1 = 0;
  double seconds = 0;

  json to_json() const {
    return {{"source_accuracy", source_accuracy},
            {"tta_accuracy", tta_accuracy},
            {"asr_nm0", asr_nm0},
            {"asr_nm2", asr_nm2},
            {"asr_nm10", asr_nm10},
            {"asr_nm40", asr_nm40},
            {"error_nm0", error_nm0},
            {"error_indiscriminate", error_indiscriminate},
            {"degradation_omega0", degradation_omega0},
            {"degradation_omega01", degradation_omega01},
            {"asr_omega01", asr_omega01},
            {"asr_defended_tau0", asr_defended_tau0},
            {"asr_tau06", asr_tau06},
            {"asr_tau06_ntr1", asr_tau06_ntr1}};
  }
};

Trends measure_trends(const World& w, const json& cal) {
  const auto t0 = Clock::now();
  const int steps = cal.at("attack_steps").get<int>();
  const std::size_t defense_n_mal = cal.at("defense_n_mal").get<std::size_t>();
  const auto& shifted = w.bench.shifted_test;
  const std::size_t bs = w.cfg.benchmark.batch_size;
  Trends r;

  auto run = [&](AttackKind kind, std::size_t n_mal, double omega = 0.1) {
    auto o = base_options(w, steps);
    o.attack->kind = kind;
    o.attack->n_mal = n_mal;
    o.attack->omega = omega;
    return run_trials(w.net, shifted, bs, o);
  };

  r.source_accuracy = evaluate_accuracy(w.net, shifted, BnMode::train_stats(), bs);
  auto plain = base_options(w, steps);
  plain.attack.reset();
  r.tta_accuracy = run_trials(w.net, shifted, bs, plain).corruption_accuracy();

  r.asr_nm0 = run(AttackKind::Targeted, 0).asr;
  r.asr_nm2 = run(AttackKind::Targeted, 2).asr;
  const auto nm10 = run(AttackKind::Targeted, 10);
  r.asr_nm10 = nm10.asr;
  const auto nm40 = run(AttackKind::Targeted, 40);
  r.asr_nm40 = nm40.asr;

  r.error_nm0 = run(AttackKind::Indiscriminate, 0).corruption_error_rate;
  r.error_indiscriminate = run(AttackKind::Indiscriminate, 40).corruption_error_rate;

  r.degradation_omega0 = nm40.corruption_accuracy_degradation;
  const auto stealthy = run(AttackKind::Stealthy, 40, 0.1);
  r.degradation_omega01 = stealthy.corruption_accuracy_degradation;
  r.asr_omega01 = stealthy.asr;

  auto d = base_options(w, steps);
  d.attack->n_mal = defense_n_mal;
  const auto cells = defense_sweep(w.net, shifted, bs, d, {0.6}, {0, 1});
  if (defense_n_mal == 10) {
    r.asr_defended_tau0 = nm10.asr;
  } else if (defense_n_mal == 40) {
    r.asr_defended_tau0 = nm40.asr;
  } else {
    r.asr_defended_tau0 = run(AttackKind::Targeted, defense_n_mal).asr;
  }
  r.asr_tau06 = cells[0].summary.asr;
  r.asr_tau06_ntr1 = cells[1].summary.asr;
  r.seconds = seconds_since(t0);
  return r;
}

Criterion trend_suite(const World& w, const json& cal) {
  Criterion c{6, "end-to-end trends"};
  const auto r = measure_trends(w, cal);
  const json pinned = cal.at("values");
  const double band_rate = cal.at("band_rate").get<double>();
  const double band_asr = cal.at("band_asr").get<double>();

  c.check(r.tta_accuracy > r.source_accuracy,
          fmt("(a) TENT corruption accuracy %.4f > source-only %.4f", r.tta_accuracy, r.source_accuracy));
  c.check(r.asr_nm2 < r.asr_nm10 && r.asr_nm10 < r.asr_nm40,
          "(b) targeted ASR " + fmt("%.2f < %.2f", r.asr_nm2, r.asr_nm10) + fmt(" < %.2f", r.asr_nm40) +
              " for N_m = 2, 10, 40");
  c.check(r.error_indiscriminate > r.error_nm0,
          fmt("(c) indiscriminate N_m=40 benign error %.4f > N_m=0 error %.4f", r.error_indiscriminate,
              r.error_nm0));
  c.check(r.degradation_omega01 < r.degradation_omega0,
          fmt("(d) stealthy degradation %.4f (omega=0.1) < %.4f (omega=0)", r.degradation_omega01,
              r.degradation_omega0));
  c.check(r.asr_omega01 > r.asr_nm0,
          fmt("(d) stealthy ASR %.2f > chance baseline %.2f (N_m=0)", r.asr_omega01, r.asr_nm0));
  c.check(r.asr_tau06 < r.asr_defended_tau0,
          fmt("(e) ASR(tau=0.6) %.2f < ASR(tau=0) %.2f", r.asr_tau06, r.asr_defended_tau0) +
              " at N_m=" + std::to_string(cal.at("defense_n_mal").get<std::size_t>()));
  c.check(r.asr_tau06_ntr1 <= r.asr_tau06,
          fmt("(e) ASR(tau=0.6, n_tr=1) %.2f <= ASR(tau=0.6, n_tr=0) %.2f", r.asr_tau06_ntr1, r.asr_tau06));

  // Pinned calibration values guard against silent drift of the whole pipeline.
  const json now = r.to_json();
  double worst = 0.0;
  std::string worst_key;
  bool in_band = true;
  for (auto it = pinned.begin(); it != pinned.end(); ++it) {
    const double band = it.key().rfind("asr", 0) == 0 ? band_asr : band_rate;
    const double diff = std::abs(now.at(it.key()).get<double>() - it.value().get<double>());
    if (diff > band) in_band = false;
    if (diff / band > worst) {
      worst = diff / band;
      worst_key = it.key();
    }
  }
  const std::string largest =
      worst_key.empty() ? "every metric equals its pinned value"
                        : "largest deviation: " + worst_key + fmt(" at %.0f%% of its band", 100.0 * worst);
  c.check(in_band, "all " + std::to_string(pinned.size()) + " metrics within the calibration bands (" + largest + ")");
  c.check(r.seconds < 600.0, fmt("runtime %.1f s < 600 s", r.seconds));
  return c;
}

// --- 7 ---------------------------------------------------------------------

Criterion determinism() {
  Criterion c{7, "determinism"};
  const fs::path root = fs::temp_directory_path() / "ttalab_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "config.json") << R"({"seed": 11, "max_trials": 6,
      "attack": {"n_mal": 10, "steps": 25, "epsilon": null}})";
  }
  for (const char* method : {"tebn", "tent", "hard_pl"}) {
    std::vector<std::string> outputs;
    for (const char* j : {"1", "8", "1", "8"}) {
      const auto dir = root / (std::string(method) + std::to_string(outputs.size()));
      std::ostringstream out, err;
      const int code = run_cli({"attack", "--config", (root / "config.json").string(), "--method", method,
                                "--jobs", j, "--out", dir.string()},
                               out, err);
      std::ifstream in(dir / "trials.jsonl", std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      outputs.push_back(code == 0 ? ss.str() : "exit " + std::to_string(code) + ": " + err.str());
    }
    const bool same = !outputs[0].empty() && outputs[0].rfind("exit", 0) != 0 &&
                      std::all_of(outputs.begin(), outputs.end(), [&](const auto& s) { return s == outputs[0]; });
    c.check(same, std::string(method) + ": four runs with --jobs 1, 8, 1, 8 give byte-identical trials.jsonl");
  }
  fs::remove_all(root);
  return c;
}

// --- 8 ---------------------------------------------------------------------

Criterion projection_fuzz() {
  Criterion c{8, "projection soundness"};
  Rng rng(8);
  long violations = 0, steps = 0;
  for (int run = 0; run < 10; ++run) {
    const std::size_t rows = 1 + rng.index(5), cols = 1 + rng.index(20);
    const auto base = oracle::random_matrix(rng, rows, cols, 0.0, 1.0);
    std::optional<double> eps;
    if (run % 5 != 4) eps = rng.uniform(0.0, 0.3);
    Tensor delta = Tensor::matrix(rows, cols);
    for (int s = 0; s < 1000; ++s, ++steps) {
      Tensor g = oracle::random_matrix(rng, rows, cols);
      for (double& v : g.values())
        if (rng.uniform() < 0.1) v = 0.0;
      delta = sign_gradient_step(delta, g, rng.uniform(0.0, 0.1), eps, base, 0.0, 1.0);
      for (std::size_t k = 0; k < delta.size(); ++k) {
        const double x = base[k] + delta[k];
        if ((eps && std::abs(delta[k]) > *eps) || x < 0.0 || x > 1.0) ++violations;
      }
    }
  }
  c.check(steps == 10000 && violations == 0,
          std::to_string(steps) + " random sign-gradient steps, " + std::to_string(violations) +
              " l-inf or pixel-bound violations");
  return c;
}

json load_calibration() {
  std::ifstream in(CALIBRATION_FILE);
  if (!in) throw std::runtime_error(std::string("cannot open ") + CALIBRATION_FILE);
  return json::parse(in);
}

void report(const Criterion& c) {
  std::printf("%s criterion %d: %s\n", c.ok ? "PASS" : "FAIL", c.number, c.title.c_str());
  for (const auto& n : c.notes) std::printf("       %s\n", n.c_str());
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  const json cal = load_calibration();
  if (argc > 1 && std::string(argv[1]) == "--calibrate") {
    const World w = make_world(cal.at("seed").get<std::uint64_t>());
    const auto r = measure_trends(w, cal);
    json out = cal;
    out["values"] = r.to_json();
    std::cout << out.dump(2) << '\n';
    std::fprintf(stderr, "trend suite took %.1f s\n", r.seconds);
    return 0;
  }

  std::vector<Criterion> results;
  auto record = [&](Criterion c) {
    report(c);
    results.push_back(std::move(c));
  };
  record(gradient_suite());
  record(bn_invariants());
  record(loss_identities());
  record(attack_oracle());
  const World w = make_world(cal.at("seed").get<std::uint64_t>());
  record(bilevel_consistency(w, cal));
  record(trend_suite(w, cal));
  record(determinism());
  record(projection_fuzz());

  const auto passed = std::count_if(results.begin(), results.end(), [](const auto& c) { return c.ok; });
  std::printf("%ld/%zu criteria passed\n", static_cast<long>(passed), results.size());
  return passed == static_cast<long>(results.size()) ? 0 : 1;
}
