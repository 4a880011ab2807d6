#include "ttalab/bench/trials.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

#include "json.hpp"

#include "ttalab/diagnostics/diagnostics.hpp"

namespace ttalab {

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Targeted: return "targeted";
    case AttackKind::Indiscriminate: return "indiscriminate";
    case AttackKind::Stealthy: return "stealthy";
  }
  return "unknown";
}

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "targeted") return AttackKind::Targeted;
  if (name == "indiscriminate") return AttackKind::Indiscriminate;
  if (name == "stealthy") return AttackKind::Stealthy;
  throw ConfigError("unknown attack kind '" + std::string(name) +
                    "' (expected targeted, indiscriminate, stealthy)");
}

namespace {

std::size_t count_correct(const std::vector<int>& pred, const std::vector<int>& y,
                          const std::vector<bool>& eval) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += eval[i] && pred[i] == y[i] ? 1 : 0;
  return c;
}

TrialTrace run_one(const Network& net, const Dataset& batch, std::size_t trial,
                   const TtaConfig& tta, const RunOptions& options) {
  const std::size_t n_classes = net.output_dim();
  const std::size_t n = batch.size();
  TrialRecord rec;
  rec.trial_index = trial;
  rec.method = to_string(tta.method);
  rec.seed = Rng::derive(options.seed, trial);
  Rng rng(rec.seed);

  auto clean = tta_update(net, batch.x, tta);
  const auto clean_pred = predict(clean.net, batch.x, tta.bn_mode);

  if (!options.attack) {
    const std::vector<bool> eval(n, true);
    rec.n_eval = n;
    rec.correct_clean = rec.correct_attacked = count_correct(clean_pred, batch.y, eval);
    rec.benign_error_rate = 1.0 - static_cast<double>(rec.correct_clean) / static_cast<double>(n);
    auto stats = clean.snapshot;
    return {rec, std::move(clean.snapshot), std::move(stats), std::move(clean.net)};
  }

  const AttackPlan& plan = *options.attack;
  if (plan.n_mal + 1 > n) throw ConfigError("attack.n_mal leaves no benign rows in the batch");
  AttackSpec spec;
  spec.mal_indices = rng.sample_without_replacement(n, plan.n_mal);
  std::sort(spec.mal_indices.begin(), spec.mal_indices.end());
  std::vector<bool> eval(n, true);
  for (auto m : spec.mal_indices) eval[m] = false;

  if (plan.kind != AttackKind::Indiscriminate) {
    std::vector<std::size_t> benign;
    for (std::size_t i = 0; i < n; ++i)
      if (eval[i]) benign.push_back(i);
    const std::size_t tgt = benign[rng.index(benign.size())];
    // Uniform over the K - 1 labels other than the truth.
    int label = static_cast<int>(rng.index(n_classes - 1));
    if (label >= batch.y[tgt]) ++label;
    rec.tgt_index = static_cast<std::int64_t>(tgt);
    rec.tgt_label = label;
    eval[tgt] = false;
    if (plan.kind == AttackKind::Targeted) {
      spec.objective = Targeted{tgt, label};
    } else {
      spec.objective = StealthyTargeted{tgt, label, plan.omega};
    }
  } else {
    spec.objective = Indiscriminate{};
  }
  spec.epsilon = plan.epsilon;
  spec.alpha = plan.alpha;
  spec.n_steps = plan.steps;
  spec.bilevel = plan.bilevel;
  spec.restarts = plan.restarts;
  rec.n_mal = plan.n_mal;

  Tensor attacked_x = batch.x;
  if (plan.n_mal > 0) {
    const auto res = dia_attack(net, batch.x, batch.y, tta, spec, rng);
    attacked_x = apply_perturbation(batch.x, spec.mal_indices, res.perturbation);
    rec.attack_loss = res.final_loss;
  } else {
    // Nothing to optimise: report the objective of the untouched batch.
    const auto star = tta_update(net, batch.x, tta);
    rec.attack_loss = adversarial_loss(spec, star.net, batch.x, batch.y, tta.bn_mode);
  }

  auto attacked = tta_update(net, attacked_x, tta);
  const auto attacked_pred = predict(attacked.net, attacked_x, tta.bn_mode);
  if (rec.tgt_index >= 0) {
    rec.success = attacked_pred[static_cast<std::size_t>(rec.tgt_index)] == rec.tgt_label;
  }
  rec.n_eval = static_cast<std::size_t>(std::count(eval.begin(), eval.end(), true));
  rec.correct_clean = count_correct(clean_pred, batch.y, eval);
  rec.correct_attacked = count_correct(attacked_pred, batch.y, eval);
  const double ne = static_cast<double>(rec.n_eval);
  rec.benign_error_rate = 1.0 - static_cast<double>(rec.correct_attacked) / ne;
  rec.degradation = (static_cast<double>(rec.correct_clean) -
                     static_cast<double>(rec.correct_attacked)) / ne;
  rec.bn_drift_max = max_drift(bn_drift_report(clean.snapshot, attacked.snapshot));
  return {rec, std::move(clean.snapshot), std::move(attacked.snapshot), std::move(attacked.net)};
}

TtaConfig effective_tta(const Network& net, const RunOptions& options) {
  TtaConfig tta = options.tta;
  if (options.defense) tta.bn_mode = make_bn_mode(*options.defense, net.bn_count());
  tta.validate();
  return tta;
}

}  // namespace

TrialTrace trace_trial(const Network& net, const Dataset& batch, std::size_t trial_index,
                       const RunOptions& options) {
  return run_one(net, batch, trial_index, effective_tta(net, options), options);
}

RunSummary run_trials(const Network& net, const Dataset& shifted_test, std::size_t batch_size,
                      const RunOptions& options) {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  std::size_t n_trials = shifted_test.size() / batch_size;
  if (options.max_trials > 0) n_trials = std::min(n_trials, options.max_trials);
  if (n_trials == 0) throw ConfigError("shifted test set holds no full batch");

  const TtaConfig tta = effective_tta(net, options);

  std::vector<TrialRecord> records(n_trials);
  auto batch_of = [&](std::size_t t) { return shifted_test.slice(t * batch_size, batch_size); };

  if (tta.method != TtaMethod::TeBN) {
    // Adapted affine parameters flow from one trial into the next.
    Network state = net;
    for (std::size_t t = 0; t < n_trials; ++t) {
      auto out = run_one(state, batch_of(t), t, tta, options);
      records[t] = std::move(out.record);
      state = std::move(out.adapted);
    }
    return summarize(std::move(records));
  }

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, n_trials));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t t = next++; t < n_trials; t = next++) {
      try {
        records[t] = run_one(net, batch_of(t), t, tta, options).record;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n_trials;
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return summarize(std::move(records));
}

RunSummary summarize(std::vector<TrialRecord> records) {
  if (records.empty()) throw DomainError("cannot summarise an empty set of trials");
  RunSummary s;
  std::size_t successes = 0;
  for (const auto& r : records) {
    successes += r.success ? 1 : 0;
    s.corruption_error_rate += r.benign_error_rate;
    s.corruption_accuracy_degradation += r.degradation;
  }
  const double n = static_cast<double>(records.size());
  s.asr = static_cast<double>(successes) / n;
  s.corruption_error_rate /= n;
  s.corruption_accuracy_degradation /= n;
  s.records = std::move(records);
  return s;
}

void write_trials_jsonl(std::ostream& out, const std::vector<TrialRecord>& records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["trial_index"] = r.trial_index;
    j["method"] = r.method;
    j["success"] = r.success;
    j["benign_error_rate"] = r.benign_error_rate;
    j["degradation"] = r.degradation;
    j["bn_drift_max"] = r.bn_drift_max;
    j["seed"] = r.seed;
    j["tgt_index"] = r.tgt_index;
    j["tgt_label"] = r.tgt_label;
    j["n_mal"] = r.n_mal;
    j["n_eval"] = r.n_eval;
    j["correct_clean"] = r.correct_clean;
    j["correct_attacked"] = r.correct_attacked;
    j["attack_loss"] = r.attack_loss;
    out << j.dump() << '\n';
  }
}

std::vector<TrialRecord> read_trials_jsonl(std::istream& in) {
  std::vector<TrialRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TrialRecord r;
      r.trial_index = j.at("trial_index").get<std::size_t>();
      r.method = j.at("method").get<std::string>();
      r.success = j.at("success").get<bool>();
      r.benign_error_rate = j.at("benign_error_rate").get<double>();
      r.degradation = j.at("degradation").get<double>();
      r.bn_drift_max = j.at("bn_drift_max").get<double>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.tgt_index = j.value("tgt_index", std::int64_t{-1});
      r.tgt_label = j.value("tgt_label", -1);
      r.n_mal = j.value("n_mal", std::size_t{0});
      r.n_eval = j.value("n_eval", std::size_t{0});
      r.correct_clean = j.value("correct_clean", std::size_t{0});
      r.correct_attacked = j.value("correct_attacked", std::size_t{0});
      r.attack_loss = j.value("attack_loss", 0.0);
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("trials line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace ttalab
