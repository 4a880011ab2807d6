#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ttalab/attack/attack.hpp"
#include "ttalab/bench/benchmark.hpp"
#include "ttalab/defense/defense_spec.hpp"
#include "ttalab/tta/tta.hpp"

namespace ttalab {

enum class AttackKind { Targeted, Indiscriminate, Stealthy };

std::string to_string(AttackKind k);
AttackKind parse_attack_kind(std::string_view name);

// Attack settings realised freshly in every trial (malicious rows, target and
// target label are drawn from the trial's stream).
struct AttackPlan {
  AttackKind kind = AttackKind::Targeted;
  std::size_t n_mal = 10;
  std::optional<double> epsilon;
  double alpha = 1.0 / 255.0;
  int steps = 500;
  bool bilevel = false;
  double omega = 0.1;
  int restarts = 0;
};

struct TrialRecord {
  std::size_t trial_index = 0;
  std::string method;
  bool success = false;
  double benign_error_rate = 0.0;
  double degradation = 0.0;
  double bn_drift_max = 0.0;
  std::uint64_t seed = 0;
  // Bookkeeping for recounts.
  std::int64_t tgt_index = -1;
  int tgt_label = -1;
  std::size_t n_mal = 0;
  std::size_t n_eval = 0;  // rows outside target and malicious set
  std::size_t correct_clean = 0;
  std::size_t correct_attacked = 0;
  double attack_loss = 0.0;

  bool operator==(const TrialRecord&) const = default;
};

struct RunSummary {
  double asr = 0.0;
  double corruption_error_rate = 0.0;
  double corruption_accuracy_degradation = 0.0;
  std::vector<TrialRecord> records;

  double corruption_accuracy() const { return 1.0 - corruption_error_rate; }
};

struct RunOptions {
  TtaConfig tta;
  std::optional<AttackPlan> attack;
  std::optional<DefenseSpec> defense;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::size_t max_trials = 0;  // 0 = every full batch
};

// Runs the batches of `shifted_test` in order, one trial per batch. Methods
// other than TeBN carry the adapted BN affine parameters from trial to trial
// and therefore run serially; TeBN trials run on up to `jobs` threads.
RunSummary run_trials(const Network& net, const Dataset& shifted_test, std::size_t batch_size,
                      const RunOptions& options);

// One trial in full: the record plus the BN statistics the victim saw on the
// clean and on the attacked batch (equal when no attack is configured).
struct TrialTrace {
  TrialRecord record;
  BnSnapshot clean_stats;
  BnSnapshot attacked_stats;
  Network adapted;  // network after adapting to the batch it was served
};

// Runs trial `trial_index` on `batch` starting from `net`, with the defense in
// `options` (if any) already applied.
TrialTrace trace_trial(const Network& net, const Dataset& batch, std::size_t trial_index,
                       const RunOptions& options);

// Means over the records. Throws DomainError for an empty set.
RunSummary summarize(std::vector<TrialRecord> records);

void write_trials_jsonl(std::ostream& out, const std::vector<TrialRecord>& records);
std::vector<TrialRecord> read_trials_jsonl(std::istream& in);

}  // namespace ttalab
