#include "ttalab/defense/defense.hpp"

#include <ostream>

namespace ttalab {

BnMode make_bn_mode(const DefenseSpec& spec, std::size_t bn_count) {
  if (!(spec.tau >= 0.0 && spec.tau <= 1.0)) {
    throw ConfigError("defense.tau must lie in [0, 1], got " + std::to_string(spec.tau));
  }
  if (spec.n_tr > bn_count) {
    throw ConfigError("defense.n_tr = " + std::to_string(spec.n_tr) + " exceeds the network's " +
                      std::to_string(bn_count) + " BN layers");
  }
  return BnMode::smoothed(spec.tau, spec.n_tr);
}

std::vector<DefenseCell> defense_sweep(const Network& net, const Dataset& shifted,
                                       std::size_t batch_size, const RunOptions& base,
                                       const std::vector<double>& taus,
                                       const std::vector<std::size_t>& n_trs) {
  // Validate the whole grid before spending time on any cell.
  for (double tau : taus)
    for (std::size_t n_tr : n_trs) make_bn_mode({tau, n_tr}, net.bn_count());
  std::vector<DefenseCell> cells;
  for (double tau : taus) {
    for (std::size_t n_tr : n_trs) {
      RunOptions opts = base;
      opts.defense = DefenseSpec{tau, n_tr};
      cells.push_back({*opts.defense, run_trials(net, shifted, batch_size, opts)});
    }
  }
  return cells;
}

void write_defense_csv(std::ostream& out, const std::vector<DefenseCell>& cells) {
  out << "tau,n_tr,asr,corruption_accuracy,corruption_accuracy_degradation\n";
  for (const auto& c : cells) {
    out << format_double(c.defense.tau) << ',' << c.defense.n_tr << ',' << format_double(c.summary.asr)
        << ',' << format_double(c.summary.corruption_accuracy()) << ','
        << format_double(c.summary.corruption_accuracy_degradation) << '\n';
  }
}

}  // namespace ttalab
