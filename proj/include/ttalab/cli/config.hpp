#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttalab/bench/benchmark.hpp"
#include "ttalab/bench/trials.hpp"
#include "ttalab/defense/defense_spec.hpp"
#include "ttalab/tta/tta.hpp"

namespace ttalab {

struct SweepGrid {
  std::vector<std::size_t> n_mal = {1, 2, 5, 10, 20, 40, 80, 128};
  std::vector<double> taus = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::size_t> n_trs = {0, 1, 2};
};

// Everything one experiment needs. Seeds for data, training and trials are
// derived from `seed`.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  BenchmarkSpec benchmark;
  bool shift_explicit = false;  // false: preset shift derived from the seed
  Architecture arch;
  TrainOptions train;
  std::optional<std::string> checkpoint;  // load instead of training
  TtaConfig tta;
  AttackPlan attack;
  std::optional<DefenseSpec> defense;
  SweepGrid sweep;
  std::size_t max_trials = 0;

  // Fill seed-derived fields (preset shift, benchmark and training seeds).
  void finalize();
};

// Parses the JSON config document. Unknown keys and ill-typed values raise
// ConfigError naming the key path, e.g. "tta.eta".
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

}  // namespace ttalab
