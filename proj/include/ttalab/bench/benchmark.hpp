#pragma once

#include <cstdint>
#include <vector>

#include "ttalab/nn/network.hpp"

namespace ttalab {

struct Dataset {
  Tensor x;            // n × d, entries in [0, 1]
  std::vector<int> y;  // n labels in [0, K)

  std::size_t size() const { return y.size(); }
  Dataset slice(std::size_t begin, std::size_t count) const;
};

// Per-coordinate affine corruption x' = clip(scale ⊙ x + bias + noise).
struct ShiftSpec {
  Tensor bias;
  Tensor scale;
  double noise_std = 0.0;

  static ShiftSpec none(std::size_t dim);
  // Seeded preset used when a config does not spell out the shift.
  static ShiftSpec preset(std::size_t dim, std::uint64_t seed);
};

struct BenchmarkSpec {
  std::size_t n_classes = 10;
  std::size_t dim = 32;
  std::size_t train_size = 5000;
  std::size_t test_size = 10000;
  std::size_t batch_size = 200;
  double center_low = 0.4;  // class centres drawn uniformly in [low, high]^d
  double center_high = 0.6;
  double class_spread = 0.1;  // per-coordinate standard deviation
  ShiftSpec shift;
  std::uint64_t seed = 0;

  // Default benchmark with the preset shift derived from `seed`.
  static BenchmarkSpec defaults(std::uint64_t seed);

  void validate() const;
  std::size_t n_trials() const { return test_size / batch_size; }
};

struct Benchmark {
  Dataset train;
  Dataset clean_test;
  Dataset shifted_test;
};

// K Gaussian class clusters clipped to [0, 1]^d. The shifted split is a fresh
// draw from the same clusters passed through the shift.
Benchmark generate_benchmark(const BenchmarkSpec& spec);

struct Architecture {
  std::vector<std::size_t> hidden = {64, 64};
};

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 100;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

// Minibatch SGD on cross-entropy with BN normalising by minibatch statistics.
// Afterwards the BN source statistics are set from one pass over the full
// training set. Throws NumericError if the loss diverges.
Network train_source(const Dataset& train, std::size_t n_classes, const Architecture& arch,
                     const TrainOptions& options);

// Accuracy of `net` over `data`, evaluated in consecutive batches.
double evaluate_accuracy(const Network& net, const Dataset& data, const BnMode& mode,
                         std::size_t batch_size);

}  // namespace ttalab
