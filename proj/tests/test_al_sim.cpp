#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "activeprune/al_sim.hpp"
#include "activeprune/ngram_lm.hpp"
#include "activeprune/synthetic.hpp"
#include "oracle/selection_oracles.hpp"

using namespace activeprune;

namespace {

SparseVector dense2(double x, double y) { return SparseVector::from_pairs({{0, x}, {1, y}}); }

// Two Gaussian blobs in 3 dimensions plus a coordinate that is always on.
struct Blobs {
  std::vector<SparseVector> x;
  std::vector<int> y;
  std::vector<LabeledExample> examples() const {
    std::vector<LabeledExample> out;
    for (std::size_t i = 0; i < x.size(); ++i) out.push_back({&x[i], y[i]});
    return out;
  }
};

Blobs blobs(std::size_t n, double separation, std::uint64_t seed, int classes = 2) {
  Rng rng(seed);
  Blobs b;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    const double cx = separation * std::cos(2.0 * 3.14159265358979 * c / classes);
    const double cy = separation * std::sin(2.0 * 3.14159265358979 * c / classes);
    b.x.push_back(SparseVector::from_pairs({{0, cx + rng.normal()}, {1, cy + rng.normal()}, {2, 0.3 * rng.normal()}}));
    b.y.push_back(c);
  }
  return b;
}

struct SimFixture {
  synthetic::LabeledPool train;
  synthetic::LabeledPool test;
  std::map<DocId, double> ppl;
};

SimFixture make_sim(std::size_t n, std::uint64_t seed) {
  const synthetic::Generator gen;
  SimFixture f{synthetic::make_classification_pool(gen, n, 0.05, seed),
               synthetic::make_classification_pool(gen, 300, 0.0, seed + 1, 10'000'000, "test"),
               {}};
  const auto ref = synthetic::make_reference_corpus(gen, 3000, seed + 2);
  const auto vocab = build_vocabulary(ref, 1);
  f.ppl = perplexity_values(score_pool(train_ngram_from_text(ref, 3, vocab), f.train.dataset));
  return f;
}

}  // namespace

TEST(Featurize, NormalizedDeterministicAndDegenerate) {
  const Vocabulary v({"good", "bad", "movie"}, 1);
  const Document d{1, "Good movie, good movie!", 0};
  const auto a = featurize(d, v, 1u << 12);
  EXPECT_EQ(a, featurize(d, v, 1u << 12));
  double n2 = 0.0;
  for (double x : a.value) n2 += x * x;
  EXPECT_NEAR(n2, 1.0, 1e-12);
  for (std::size_t i = 1; i < a.nnz(); ++i) EXPECT_LT(a.index[i - 1], a.index[i]);
  const auto empty = featurize({2, "   \t ", 0}, v, 1u << 10);
  EXPECT_EQ(empty.index, (std::vector<std::uint32_t>{0}));
  EXPECT_EQ(empty.value, (std::vector<double>{1.0}));
  EXPECT_THROW(featurize(d, v, 1000), Error);
  EXPECT_THROW(featurize(d, v, 512), Error);
}

TEST(Classifier, GradientMatchesFiniteDifferences) {
  const auto b = blobs(30, 1.0, 3, 3);
  const auto ex = b.examples();
  LinearModel m = LinearModel::zeros(3, 8);
  Rng rng(9);
  for (double& w : m.weights) w = rng.normal() * 0.5;
  for (double& w : m.bias) w = rng.normal() * 0.5;
  const double l2 = 0.01;
  const auto g = loss_and_gradient(m, ex, l2);
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t idx = static_cast<std::size_t>(rng.below(3)) * 8 + rng.below(3);
    LinearModel plus = m, minus = m;
    plus.weights[idx] += h;
    minus.weights[idx] -= h;
    const double fd = (loss_and_gradient(plus, ex, l2).loss - loss_and_gradient(minus, ex, l2).loss) / (2 * h);
    const double rel = std::fabs(fd - g.grad_w[idx]) / std::max(1e-8, std::fabs(fd) + std::fabs(g.grad_w[idx]));
    EXPECT_LT(rel, 1e-4) << "coordinate " << idx;
  }
}

TEST(Classifier, SeparableToyReachesPerfectAccuracy) {
  const auto b = blobs(20, 6.0, 1);
  TrainOptions opt;
  opt.epochs = 50;
  const auto m = train_classifier(b.examples(), 2, 4, opt);
  for (std::size_t i = 0; i < b.x.size(); ++i) EXPECT_EQ(predict(m, b.x[i]), b.y[i]);
}

TEST(Classifier, FullBatchLossNonIncreasingOnConvexFixture) {
  const auto b = blobs(40, 1.5, 2);
  const auto ex = b.examples();
  TrainOptions opt;
  opt.batch_size = 0;
  opt.lr = 0.5;
  opt.l2 = 1e-3;
  opt.epochs = 60;
  double prev = std::numeric_limits<double>::infinity();
  train_classifier(ex, 2, 4, opt, [&](int, const LinearModel& m) {
    const double loss = loss_and_gradient(m, ex, opt.l2).loss;
    EXPECT_LE(loss, prev + 1e-6);
    prev = loss;
  });
}

TEST(Classifier, SeedFixesWeights) {
  const auto b = blobs(50, 2.0, 5);
  TrainOptions opt;
  opt.seed = 42;
  EXPECT_EQ(train_classifier(b.examples(), 2, 4, opt), train_classifier(b.examples(), 2, 4, opt));
}

TEST(Classifier, MissingClass) {
  auto b = blobs(10, 2.0, 5);
  for (int& y : b.y) y = 0;
  try {
    train_classifier(b.examples(), 2, 4, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingClass);
    EXPECT_EQ(e.value(), 1);
  }
}

TEST(PredictProba, UniformSumsAndDim) {
  const auto m = LinearModel::zeros(4, 16);
  const auto p = predict_proba(m, dense2(3.0, -1.0));
  for (double x : p) EXPECT_DOUBLE_EQ(x, 0.25);
  const auto b = blobs(60, 1.0, 8, 3);
  TrainOptions opt;
  const auto trained = train_classifier(b.examples(), 3, 4, opt);
  for (const auto& x : b.x) {
    const auto q = predict_proba(trained, x);
    double s = 0.0;
    for (double v : q) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  EXPECT_THROW(predict_proba(m, SparseVector::from_pairs({{16, 1.0}})), Error);
}

TEST(PredictProba, ArgmaxInvariantUnderLogitShift) {
  const auto b = blobs(30, 1.0, 4, 3);
  auto m = train_classifier(b.examples(), 3, 4, {});
  std::vector<int> before;
  for (const auto& x : b.x) before.push_back(predict(m, x));
  for (double& v : m.bias) v += 123.0;
  for (std::size_t i = 0; i < b.x.size(); ++i) EXPECT_EQ(predict(m, b.x[i]), before[i]);
}

TEST(Acquire, LeastConfidencePicksMostUncertain) {
  // Two features, one per document: doc a gets P = (0.9, 0.1), doc b (0.55, 0.45).
  LinearModel m = LinearModel::zeros(2, 2);
  m.w(0, 0) = std::log(0.9 / 0.1);
  m.w(0, 1) = std::log(0.55 / 0.45);
  FeatureStore f{{1, SparseVector::from_pairs({{0, 1.0}})}, {2, SparseVector::from_pairs({{1, 1.0}})}};
  FilteredPool pool;
  pool.ids = pool.from_perplexity = {1, 2};
  AcquisitionStrategy s{AcquisitionKind::kLeastConfidence, {}};
  EXPECT_EQ(acquire(s, &m, pool, 1, 0, f, {}), (std::vector<DocId>{2}));
  // Ties go to the smaller id.
  const auto zero = LinearModel::zeros(2, 2);
  EXPECT_EQ(acquire(s, &zero, pool, 1, 0, f, {}), (std::vector<DocId>{1}));
}

TEST(Acquire, CoresetCollinear) {
  FeatureStore f{{1, dense2(0, 0)}, {2, dense2(1, 0)}, {3, dense2(5, 0)}};
  FilteredPool pool;
  pool.ids = {2, 3};
  AcquisitionStrategy s{AcquisitionKind::kCoreset, {}};
  EXPECT_EQ(acquire(s, nullptr, pool, 1, 0, f, {1}), (std::vector<DocId>{3}));
  pool.ids = {1, 2, 3};
  EXPECT_EQ(acquire(s, nullptr, pool, 2, 0, f, {}), (std::vector<DocId>{1, 3}));
}

TEST(Acquire, CoresetMatchesBruteForceGreedy) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    FeatureStore f;
    std::vector<DocId> cand, labeled;
    for (DocId id = 0; id < 50; ++id) {
      f[id] = dense2(rng.uniform(-1, 1), rng.uniform(-1, 1));
      (id % 10 == 3 ? labeled : cand).push_back(id);
    }
    FilteredPool pool;
    pool.ids = cand;
    AcquisitionStrategy s{AcquisitionKind::kCoreset, {}};
    EXPECT_EQ(acquire(s, nullptr, pool, 5, 0, f, labeled), oracle::coreset(cand, labeled, 5, f)) << seed;
  }
}

TEST(Acquire, RandomIsSeededSampleWithoutReplacement) {
  FilteredPool pool;
  for (DocId i = 0; i < 100; ++i) pool.ids.push_back(i * 2);
  AcquisitionStrategy s{AcquisitionKind::kRandom, {}};
  const auto a = acquire(s, nullptr, pool, 30, 7, {}, {});
  EXPECT_EQ(a, acquire(s, nullptr, pool, 30, 7, {}, {}));
  EXPECT_EQ(std::set<DocId>(a.begin(), a.end()).size(), 30u);
  for (DocId id : a) EXPECT_TRUE(pool.contains(id));
  try {
    acquire(s, nullptr, pool, 101, 7, {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBatchTooLarge);
  }
}

TEST(MacroF1, Examples) {
  EXPECT_DOUBLE_EQ(macro_f1({0, 1, 1, 0}, {0, 1, 1, 0}, 2), 1.0);
  EXPECT_NEAR(macro_f1({0, 0, 0, 0}, {0, 0, 1, 1}, 2), 1.0 / 3.0, 1e-15);
  try {
    macro_f1({0}, {0, 1}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLengthMismatch);
  }
}

TEST(MacroF1, MatchesConfusionMatrixOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const int classes = 2 + static_cast<int>(rng.below(4));
    std::vector<int> p, g;
    for (int i = 0; i < 200; ++i) {
      g.push_back(static_cast<int>(rng.below(classes)));
      p.push_back(rng.uniform() < 0.6 ? g.back() : static_cast<int>(rng.below(classes)));
    }
    EXPECT_NEAR(macro_f1(p, g, classes), oracle::macro_f1(p, g, classes), 1e-12);
  }
}

TEST(RunActiveLearning, SingleRoundRandomFullPool) {
  const auto f = make_sim(300, 3);
  AlConfig cfg;
  cfg.iterations = 1;
  cfg.prune.keep_fraction = 1.0;
  cfg.prune.mode = PruneMode::kRandom;
  cfg.label_fraction = 0.1;
  cfg.feature_dim = 1u << 12;
  const auto r = run_active_learning(f.train.dataset, f.test.dataset, f.ppl, cfg, nullptr);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].labeled_count, 30u);
  EXPECT_GE(r.metrics[0].f1_macro, 0.0);
  EXPECT_LE(r.metrics[0].f1_macro, 1.0);
}

TEST(RunActiveLearning, BudgetAccountingOnTenThousand) {
  const auto f = make_sim(10000, 5);
  AlConfig cfg;
  cfg.iterations = 5;
  cfg.feature_dim = 1u << 14;
  MockScorer scorer(Vocabulary{});
  std::vector<std::size_t> labeled;
  const auto r = run_active_learning(f.train.dataset, f.test.dataset, f.ppl, cfg, &scorer, std::nullopt,
                                     [&](const IterationRecord& rec) {
                                       for (DocId id : rec.acquired) EXPECT_TRUE(rec.pool.contains(id));
                                       EXPECT_EQ(rec.pool.ids.size(),
                                                 static_cast<std::size_t>(std::llround(
                                                     0.25 * static_cast<double>(rec.state.unlabeled_ids.size() + 100))));
                                       labeled.push_back(rec.state.labeled_ids.size());
                                       EXPECT_EQ(rec.state.labeled_ids.size() + rec.state.unlabeled_ids.size(), 10000u);
                                     });
  EXPECT_EQ(labeled, (std::vector<std::size_t>{100, 200, 300, 400, 500}));
  EXPECT_EQ(r.state.labeled_ids.size(), 500u);
  for (const auto& m : r.metrics) {
    EXPECT_GE(m.pruning_ms, 0);
    EXPECT_GE(m.scoring_ms, 0);
    EXPECT_GE(m.acquisition_ms, 0);
    EXPECT_GE(m.training_ms, 0);
    EXPECT_LE(m.scorer_calls, 1000u);
  }
}

TEST(RunActiveLearning, CheckpointReplayReproducesLaterIterations) {
  const auto f = make_sim(2000, 7);
  const auto dir = (std::filesystem::temp_directory_path() / "ap_replay").string();
  std::filesystem::remove_all(dir);
  for (auto kind : {AcquisitionKind::kLeastConfidence, AcquisitionKind::kCoreset, AcquisitionKind::kRandom}) {
    AlConfig cfg;
    cfg.iterations = 5;
    cfg.feature_dim = 1u << 12;
    cfg.strategy.kind = kind;
    cfg.checkpoint_dir = dir;
    MockScorer scorer(Vocabulary{});
    const auto full = run_active_learning(f.train.dataset, f.test.dataset, f.ppl, cfg, &scorer);
    auto state = load_state(checkpoint_path(dir, 3));
    cfg.checkpoint_dir.clear();
    const auto resumed = run_active_learning(f.train.dataset, f.test.dataset, {}, cfg, &scorer, state);
    ASSERT_EQ(resumed.metrics.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(resumed.metrics[i].f1_macro, full.metrics[i].f1_macro) << to_string(kind) << " iteration " << i + 1;
      EXPECT_EQ(resumed.metrics[i].labeled_count, full.metrics[i].labeled_count);
    }
    EXPECT_EQ(resumed.state.labeled_ids, full.state.labeled_ids);
    EXPECT_EQ(resumed.state.perplexity, full.state.perplexity);
  }
}

TEST(RunActiveLearning, Errors) {
  const auto f = make_sim(200, 9);
  AlConfig cfg;
  cfg.feature_dim = 1u << 10;
  cfg.label_fraction = 0.001;
  EXPECT_THROW(run_active_learning(f.train.dataset, f.test.dataset, f.ppl, cfg, nullptr), Error);
  cfg.label_fraction = 0.3;
  cfg.prune.quality_share = 0.0;
  cfg.prune.keep_fraction = 1.0;
  cfg.iterations = 4;
  try {
    run_active_learning(f.train.dataset, f.test.dataset, f.ppl, cfg, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnlabeledExhausted);
  }
  cfg.iterations = 1;
  cfg.prune.keep_fraction = 0.1;  // pool of 20 < batch of 60
  try {
    run_active_learning(f.train.dataset, f.test.dataset, f.ppl, cfg, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBatchTooLarge);
  }
}

TEST(IterationMetrics, CsvShape) {
  IterationMetrics m;
  m.iteration = 1;
  m.f1_macro = 0.5;
  m.labeled_count = 10;
  const auto csv = metrics_csv({m});
  EXPECT_EQ(csv, std::string(kMetricsCsvHeader) + "\n1,0.5,10,0,0,0,0,0\n");
  EXPECT_EQ(IterationMetrics::from_json(m.to_json()).f1_macro, 0.5);
}
