#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "ttalab/numeric/tensor.hpp"

namespace ttalab {

struct TrainStats {};
struct TestStats {};

// Convex blend of training and test statistics; the last `n_tr` BN layers
// (counted from the output end) use training statistics outright.
struct Smoothed {
  double tau = 0.0;
  std::size_t n_tr = 0;
};

// Selects which statistics a BN layer normalises with.
class BnMode {
 public:
  BnMode() : mode_(TestStats{}) {}
  BnMode(TrainStats m) : mode_(m) {}  // NOLINT(google-explicit-constructor)
  BnMode(TestStats m) : mode_(m) {}   // NOLINT(google-explicit-constructor)
  BnMode(Smoothed m);                 // NOLINT(google-explicit-constructor)

  static BnMode train_stats() { return TrainStats{}; }
  static BnMode test_stats() { return TestStats{}; }
  static BnMode smoothed(double tau, std::size_t n_tr) { return Smoothed{tau, n_tr}; }

  // Weight on the training statistics for BN layer `bn_index` of `bn_count`.
  double tau_for_layer(std::size_t bn_index, std::size_t bn_count) const;

  // True when at least one of `bn_count` layers reads the batch statistics.
  bool reads_batch(std::size_t bn_count) const;

  const std::variant<TrainStats, TestStats, Smoothed>& get() const { return mode_; }
  std::string describe() const;

 private:
  std::variant<TrainStats, TestStats, Smoothed> mode_;
};

// Channel statistics of one BN layer's input, as seen by a forward pass.
struct BnStats {
  Tensor mean;
  Tensor var;
};

// One entry per BN layer, in network order.
using BnSnapshot = std::vector<BnStats>;

}  // namespace ttalab
