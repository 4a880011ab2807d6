#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "ttalab/bench/trials.hpp"
#include "ttalab/defense/defense_spec.hpp"

namespace ttalab {

struct DefenseCell {
  DefenseSpec defense;
  RunSummary summary;
};

// Every (tau, n_tr) cell runs the full trial protocol with the defended
// statistics used both by the victim's adaptation and by the attacker's
// gradient. Cells share the base seed, so the (0, 0) cell reproduces an
// undefended run.
std::vector<DefenseCell> defense_sweep(const Network& net, const Dataset& shifted,
                                       std::size_t batch_size, const RunOptions& base,
                                       const std::vector<double>& taus,
                                       const std::vector<std::size_t>& n_trs);

// Columns: tau,n_tr,asr,corruption_accuracy,corruption_accuracy_degradation
void write_defense_csv(std::ostream& out, const std::vector<DefenseCell>& cells);

}  // namespace ttalab
