#pragma once

// A seconds-scale benchmark and trained source model for harness tests.

#include "ttalab/bench/benchmark.hpp"

namespace oracle {

struct SmallWorld {
  ttalab::BenchmarkSpec spec;
  ttalab::Benchmark data;
  ttalab::Network net;
};

inline ttalab::BenchmarkSpec small_spec(std::uint64_t seed) {
  auto spec = ttalab::BenchmarkSpec::defaults(seed);
  spec.n_classes = 4;
  spec.dim = 8;
  spec.train_size = 800;
  spec.test_size = 240;
  spec.batch_size = 40;
  spec.shift = ttalab::ShiftSpec::preset(spec.dim, seed);
  return spec;
}

inline SmallWorld make_small_world(std::uint64_t seed = 3) {
  SmallWorld w;
  w.spec = small_spec(seed);
  w.data = ttalab::generate_benchmark(w.spec);
  ttalab::TrainOptions opts;
  opts.epochs = 8;
  opts.batch_size = 50;
  opts.seed = seed + 1;
  w.net = ttalab::train_source(w.data.train, w.spec.n_classes, ttalab::Architecture{{16, 16}}, opts);
  return w;
}

}  // namespace oracle
