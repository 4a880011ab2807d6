#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "small_world.hpp"
#include "ttalab/bench/trials.hpp"
#include "ttalab/nn/checkpoint.hpp"

using namespace ttalab;

namespace {

const oracle::SmallWorld& world() {
  static const oracle::SmallWorld w = oracle::make_small_world();
  return w;
}

RunOptions attacked(TtaMethod method, std::size_t n_mal) {
  RunOptions o;
  o.tta.method = method;
  o.attack = AttackPlan{};
  o.attack->n_mal = n_mal;
  o.attack->steps = 10;
  o.attack->alpha = 0.02;
  o.seed = 99;
  return o;
}

double column_mean(const Tensor& x, std::size_t j) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, j);
  return s / static_cast<double>(x.rows());
}

}  // namespace

TEST(Benchmark, SameSeedSameData) {
  const auto spec = oracle::small_spec(5);
  const auto a = generate_benchmark(spec), b = generate_benchmark(spec);
  EXPECT_EQ(a.train.x, b.train.x);
  EXPECT_EQ(a.train.y, b.train.y);
  EXPECT_EQ(a.shifted_test.x, b.shifted_test.x);
  EXPECT_NE(generate_benchmark(oracle::small_spec(6)).train.x, a.train.x);
}

TEST(Benchmark, PointsStayInUnitCubeWithBalancedLabels) {
  const auto spec = oracle::small_spec(5);
  const auto b = generate_benchmark(spec);
  for (const Dataset* d : {&b.train, &b.clean_test, &b.shifted_test}) {
    for (double v : d->x.values()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    std::vector<int> counts(spec.n_classes, 0);
    for (int y : d->y) ++counts[static_cast<std::size_t>(y)];
    for (int c : counts) EXPECT_EQ(c, static_cast<int>(d->size() / spec.n_classes));
  }
}

TEST(Benchmark, ZeroShiftMatchesCleanDistribution) {
  auto spec = oracle::small_spec(7);
  spec.test_size = 4000;
  spec.shift = ShiftSpec::none(spec.dim);
  const auto b = generate_benchmark(spec);
  EXPECT_NE(b.clean_test.x, b.shifted_test.x);  // fresh draws
  for (std::size_t j = 0; j < spec.dim; ++j)
    EXPECT_NEAR(column_mean(b.clean_test.x, j), column_mean(b.shifted_test.x, j), 0.01);
}

TEST(Benchmark, RejectsDegenerateSpecs) {
  auto spec = oracle::small_spec(1);
  spec.n_classes = 1;
  EXPECT_THROW(generate_benchmark(spec), ConfigError);
  spec = oracle::small_spec(1);
  spec.test_size = 250;  // not a multiple of the batch
  EXPECT_THROW(generate_benchmark(spec), ConfigError);
  spec = oracle::small_spec(1);
  spec.dim = 0;
  EXPECT_THROW(generate_benchmark(spec), ConfigError);
}

TEST(TrainSource, ShiftedSplitIsHarderAndTebnHelps) {
  const auto& w = world();
  const double clean = evaluate_accuracy(w.net, w.data.clean_test, BnMode::train_stats(), 40);
  const double shifted = evaluate_accuracy(w.net, w.data.shifted_test, BnMode::train_stats(), 40);
  const double tebn = evaluate_accuracy(w.net, w.data.shifted_test, BnMode::test_stats(), 40);
  EXPECT_GT(clean, shifted);
  EXPECT_GT(tebn, shifted);
}

TEST(TrainSource, SeparableBlobsAreLearned) {
  Rng rng(1);
  Dataset d{Tensor::matrix(400, 2), std::vector<int>(400)};
  for (std::size_t i = 0; i < 400; ++i) {
    const int y = static_cast<int>(i % 2);
    d.y[i] = y;
    d.x(i, 0) = std::clamp(rng.normal(y ? 0.75 : 0.25, 0.05), 0.0, 1.0);
    d.x(i, 1) = std::clamp(rng.normal(0.5, 0.05), 0.0, 1.0);
  }
  TrainOptions opts;
  opts.epochs = 10;
  opts.batch_size = 40;
  const Network net = train_source(d, 2, Architecture{{8}}, opts);
  EXPECT_GE(evaluate_accuracy(net, d, BnMode::train_stats(), 40), 0.99);
}

TEST(TrainSource, SameSeedSameCheckpoint) {
  const auto& w = world();
  TrainOptions opts;
  opts.epochs = 2;
  opts.seed = 17;
  const auto a = train_source(w.data.train, w.spec.n_classes, Architecture{{8, 8}}, opts);
  const auto b = train_source(w.data.train, w.spec.n_classes, Architecture{{8, 8}}, opts);
  EXPECT_EQ(save_checkpoint(a), save_checkpoint(b));
  opts.seed = 18;
  EXPECT_NE(save_checkpoint(train_source(w.data.train, w.spec.n_classes, Architecture{{8, 8}}, opts)),
            save_checkpoint(a));
}

TEST(TrainSource, SourceStatisticsComeFromFullTrainingSet) {
  const auto& w = world();
  const auto full = forward(w.net, w.data.train.x, BnMode::test_stats()).snapshot;
  const auto src = w.net.source_stats();
  ASSERT_EQ(src.size(), full.size());
  for (std::size_t k = 0; k < src.size(); ++k) {
    EXPECT_LT(max_abs_diff(src[k].mean, full[k].mean), 1e-12);
    EXPECT_LT(max_abs_diff(src[k].var, full[k].var), 1e-12);
  }
}

TEST(TrainSource, DivergenceIsANumericError) {
  const auto& w = world();
  TrainOptions opts;
  opts.epochs = 3;
  opts.lr = 1e12;
  EXPECT_THROW(train_source(w.data.train, w.spec.n_classes, Architecture{{8}}, opts), NumericError);
}

TEST(Summarize, MeansOverRecords) {
  std::vector<TrialRecord> recs(4);
  for (std::size_t i = 0; i < 4; ++i) {
    recs[i].success = i != 2;
    recs[i].benign_error_rate = 0.1 * static_cast<double>(i);
    recs[i].degradation = 0.0;
  }
  const auto s = summarize(recs);
  EXPECT_EQ(s.asr, 0.75);
  EXPECT_NEAR(s.corruption_error_rate, 0.15, 1e-15);
  EXPECT_EQ(s.corruption_accuracy_degradation, 0.0);
  EXPECT_THROW(summarize({}), DomainError);
}

TEST(RunTrials, PlainTtaMatchesBatchwiseAccuracy) {
  const auto& w = world();
  RunOptions o;
  o.tta.method = TtaMethod::TeBN;
  const auto s = run_trials(w.net, w.data.shifted_test, 40, o);
  EXPECT_EQ(s.records.size(), 6u);
  EXPECT_NEAR(s.corruption_accuracy(), evaluate_accuracy(w.net, w.data.shifted_test, BnMode::test_stats(), 40),
              1e-12);
  for (const auto& r : s.records) {
    EXPECT_FALSE(r.success);
    EXPECT_EQ(r.degradation, 0.0);
  }
}

TEST(RunTrials, RecountAgreesWithRecordedRates) {
  const auto& w = world();
  const auto s = run_trials(w.net, w.data.shifted_test, 40, attacked(TtaMethod::Tent, 5));
  double err = 0.0, deg = 0.0;
  int hits = 0;
  for (const auto& r : s.records) {
    EXPECT_EQ(r.n_eval, 40u - 5u - 1u);
    const double ne = static_cast<double>(r.n_eval);
    EXPECT_DOUBLE_EQ(r.benign_error_rate, 1.0 - r.correct_attacked / ne);
    EXPECT_DOUBLE_EQ(r.degradation, (static_cast<double>(r.correct_clean) - r.correct_attacked) / ne);
    EXPECT_GE(r.benign_error_rate, 0.0);
    EXPECT_LE(r.benign_error_rate, 1.0);
    EXPECT_NE(r.tgt_label, w.data.shifted_test.y[r.trial_index * 40 + static_cast<std::size_t>(r.tgt_index)]);
    err += r.benign_error_rate;
    deg += r.degradation;
    hits += r.success;
  }
  EXPECT_NEAR(s.corruption_error_rate, err / 6.0, 1e-15);
  EXPECT_NEAR(s.corruption_accuracy_degradation, deg / 6.0, 1e-15);
  EXPECT_EQ(s.asr * 6.0, hits);
}

TEST(RunTrials, NoMaliciousRowsMeansChanceSuccess) {
  const auto& w = world();
  const auto opts = attacked(TtaMethod::TeBN, 0);
  const auto s = run_trials(w.net, w.data.shifted_test, 40, opts);
  for (const auto& r : s.records) {
    EXPECT_EQ(r.correct_clean, r.correct_attacked);
    EXPECT_EQ(r.bn_drift_max, 0.0);
    const auto batch = w.data.shifted_test.slice(r.trial_index * 40, 40);
    const auto pred = predict(w.net, batch.x, BnMode::test_stats());
    EXPECT_EQ(r.success, pred[static_cast<std::size_t>(r.tgt_index)] == r.tgt_label);
  }
}

TEST(RunTrials, TebnTrialsDoNotDependOnOrder) {
  const auto& w = world();
  const auto opts = attacked(TtaMethod::TeBN, 5);
  const auto s = run_trials(w.net, w.data.shifted_test, 40, opts);
  for (std::size_t t = 6; t-- > 0;) {
    const auto tr = trace_trial(w.net, w.data.shifted_test.slice(t * 40, 40), t, opts);
    EXPECT_EQ(tr.record, s.records[t]);
  }
}

TEST(RunTrials, StatefulMethodsChainAdaptation) {
  const auto& w = world();
  const auto opts = attacked(TtaMethod::Tent, 5);
  const auto s = run_trials(w.net, w.data.shifted_test, 40, opts);
  Network state = w.net;
  for (std::size_t t = 0; t < 3; ++t) {
    auto tr = trace_trial(state, w.data.shifted_test.slice(t * 40, 40), t, opts);
    EXPECT_EQ(tr.record, s.records[t]);
    state = std::move(tr.adapted);
  }
  // Starting trial 2 from the source model generally changes its outcome.
  const auto fresh = trace_trial(w.net, w.data.shifted_test.slice(80, 40), 2, opts);
  EXPECT_NE(fresh.record.attack_loss, s.records[2].attack_loss);
}

TEST(RunTrials, ThreadCountDoesNotChangeResults) {
  const auto& w = world();
  auto opts = attacked(TtaMethod::TeBN, 5);
  opts.jobs = 1;
  const auto a = run_trials(w.net, w.data.shifted_test, 40, opts);
  opts.jobs = 8;
  const auto b = run_trials(w.net, w.data.shifted_test, 40, opts);
  EXPECT_EQ(a.records, b.records);
  const auto c = run_trials(w.net, w.data.shifted_test, 40, opts);
  EXPECT_EQ(b.records, c.records);
}

TEST(RunTrials, RejectsImpossibleAttacks) {
  const auto& w = world();
  EXPECT_THROW(run_trials(w.net, w.data.shifted_test, 40, attacked(TtaMethod::TeBN, 40)), ConfigError);
}

TEST(TrialsJsonl, RoundTrip) {
  const auto& w = world();
  auto opts = attacked(TtaMethod::Tent, 5);
  opts.max_trials = 3;
  const auto s = run_trials(w.net, w.data.shifted_test, 40, opts);
  std::stringstream io;
  write_trials_jsonl(io, s.records);
  EXPECT_EQ(read_trials_jsonl(io), s.records);
  std::stringstream bad("{\"trial_index\": 0}\nnot json\n");
  try {
    read_trials_jsonl(bad);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
}

TEST(AttackKind, NamesRoundTrip) {
  for (auto k : {AttackKind::Targeted, AttackKind::Indiscriminate, AttackKind::Stealthy})
    EXPECT_EQ(parse_attack_kind(to_string(k)), k);
  EXPECT_THROW(parse_attack_kind("poison"), ConfigError);
}
