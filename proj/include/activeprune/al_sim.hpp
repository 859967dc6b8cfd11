#pragma once

// Pool-based active-learning simulation: a hashed-feature multinomial
// logistic regression as the acquisition model, random / least-confidence /
// coreset acquisition, gold-label oracle, and the prune-acquire-train-reweight
// loop with per-iteration checkpoints.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "activeprune/corpus.hpp"
#include "activeprune/error.hpp"
#include "activeprune/prune.hpp"
#include "activeprune/quality.hpp"
#include "activeprune/tokenizer.hpp"
#include "activeprune/util.hpp"

namespace activeprune {

// ---------------------------------------------------------------------------
// Features

/// Sparse vector with strictly increasing indices.
struct SparseVector {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  std::size_t nnz() const noexcept { return index.size(); }

  static SparseVector from_pairs(std::vector<std::pair<std::uint32_t, double>> pairs) {
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    SparseVector v;
    for (const auto& [i, x] : pairs) {
      if (!v.index.empty() && v.index.back() == i) {
        v.value.back() += x;
      } else {
        v.index.push_back(i);
        v.value.push_back(x);
      }
    }
    return v;
  }

  friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

inline double squared_distance(const SparseVector& a, const SparseVector& b) {
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.nnz() || j < b.nnz()) {
    if (j == b.nnz() || (i < a.nnz() && a.index[i] < b.index[j])) {
      d += a.value[i] * a.value[i];
      ++i;
    } else if (i == a.nnz() || b.index[j] < a.index[i]) {
      d += b.value[j] * b.value[j];
      ++j;
    } else {
      const double diff = a.value[i] - b.value[j];
      d += diff * diff;
      ++i;
      ++j;
    }
  }
  return d;
}

inline constexpr std::uint64_t kUnigramSalt = 0x756e69ULL;
inline constexpr std::uint64_t kBigramSalt = 0x626967ULL;

/// Signed-hash bag of unigrams (content tokens) and bigrams (over the
/// BOS/EOS-wrapped sequence), L2-normalized. A document with no content
/// tokens maps to the single bias feature {0: 1}.
inline SparseVector featurize(const Document& doc, const Vocabulary& vocab, std::uint32_t dim) {
  if (dim < (1u << 10) || (dim & (dim - 1)) != 0) {
    throw Error(ErrorCode::kInvalidArgument, "feature dim must be a power of two >= 1024");
  }
  const auto ids = tokenize(vocab, doc.text);
  const auto bias_only = [] {
    SparseVector v;
    v.index.push_back(0);
    v.value.push_back(1.0);
    return v;
  };
  if (ids.size() <= 2) return bias_only();
  std::vector<std::pair<std::uint32_t, double>> pairs;
  pairs.reserve(2 * ids.size());
  const auto emit = [&](std::uint64_t h) {
    const double sign = (h >> 63) != 0 ? -1.0 : 1.0;
    pairs.emplace_back(static_cast<std::uint32_t>(h & (dim - 1)), sign);
  };
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) emit(mix64((ids[i] + 1ULL) ^ (kUnigramSalt << 32)));
  for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
    emit(mix64(mix64(ids[i] + 1ULL) ^ ((ids[i + 1] + 1ULL) * 0x9E3779B97F4A7C15ULL) ^ (kBigramSalt << 32)));
  }
  SparseVector v = SparseVector::from_pairs(std::move(pairs));
  SparseVector out;
  double norm2 = 0.0;
  for (std::size_t i = 0; i < v.nnz(); ++i) {
    if (v.value[i] != 0.0) {
      out.index.push_back(v.index[i]);
      out.value.push_back(v.value[i]);
      norm2 += v.value[i] * v.value[i];
    }
  }
  if (out.nnz() == 0) return bias_only();
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : out.value) x *= inv;
  return out;
}

using FeatureStore = std::unordered_map<DocId, SparseVector>;

inline FeatureStore featurize_all(const Dataset& ds, const Vocabulary& vocab, std::uint32_t dim, unsigned threads = 1) {
  const auto& docs = ds.documents();
  std::vector<SparseVector> feats(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) feats[i] = featurize(docs[i], vocab, dim);
  });
  FeatureStore out;
  out.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) out.emplace(docs[i].id, std::move(feats[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Classifier

struct LinearModel {
  int classes = 2;
  std::uint32_t num_features = 0;
  std::vector<double> weights;  // classes x num_features, row-major
  std::vector<double> bias;

  static LinearModel zeros(int classes, std::uint32_t num_features) {
    if (classes < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two classes");
    LinearModel m;
    m.classes = classes;
    m.num_features = num_features;
    m.weights.assign(static_cast<std::size_t>(classes) * num_features, 0.0);
    m.bias.assign(static_cast<std::size_t>(classes), 0.0);
    return m;
  }

  double& w(int c, std::uint32_t f) { return weights[static_cast<std::size_t>(c) * num_features + f]; }
  double w(int c, std::uint32_t f) const { return weights[static_cast<std::size_t>(c) * num_features + f]; }

  friend bool operator==(const LinearModel&, const LinearModel&) = default;
};

struct LabeledExample {
  const SparseVector* x = nullptr;
  int label = 0;
};

inline void check_dim(const LinearModel& m, const SparseVector& x) {
  if (!x.index.empty() && x.index.back() >= m.num_features) {
    throw Error(ErrorCode::kDimMismatch, "feature index " + std::to_string(x.index.back()) + " outside model dim " +
                                             std::to_string(m.num_features));
  }
}

inline std::vector<double> logits(const LinearModel& m, const SparseVector& x) {
  check_dim(m, x);
  std::vector<double> z(m.bias);
  for (int c = 0; c < m.classes; ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.nnz(); ++k) s += m.w(c, x.index[k]) * x.value[k];
    z[c] += s;
  }
  return z;
}

inline std::vector<double> softmax(std::vector<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

inline std::vector<double> predict_proba(const LinearModel& m, const SparseVector& x) { return softmax(logits(m, x)); }

/// Most probable class; ties go to the lower class id.
inline int predict(const LinearModel& m, const SparseVector& x) {
  const auto p = logits(m, x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad_w;  // same layout as LinearModel::weights
  std::vector<double> grad_b;
};

/// Mean cross-entropy plus (l2 / 2) * ||W||^2 (bias unregularized), with its
/// exact gradient.
inline LossGradient loss_and_gradient(const LinearModel& m, std::span<const LabeledExample> data, double l2) {
  LossGradient g;
  g.grad_w.assign(m.weights.size(), 0.0);
  g.grad_b.assign(m.bias.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (const auto& ex : data) {
    const auto p = predict_proba(m, *ex.x);
    g.loss -= std::log(std::max(p[ex.label], std::numeric_limits<double>::min())) * inv_n;
    for (int c = 0; c < m.classes; ++c) {
      const double r = (p[c] - (c == ex.label ? 1.0 : 0.0)) * inv_n;
      g.grad_b[c] += r;
      for (std::size_t k = 0; k < ex.x->nnz(); ++k) {
        g.grad_w[static_cast<std::size_t>(c) * m.num_features + ex.x->index[k]] += r * ex.x->value[k];
      }
    }
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    sq += m.weights[i] * m.weights[i];
    g.grad_w[i] += l2 * m.weights[i];
  }
  g.loss += 0.5 * l2 * sq;
  return g;
}

struct TrainOptions {
  int epochs = 50;
  double lr = 1.0;
  double l2 = 1e-4;
  /// Step size at epoch e is lr / sqrt(1 + lr_decay * e).
  double lr_decay = 0.0;
  /// 0 means full-batch gradient descent.
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
};

/// Multinomial logistic regression by mini-batch gradient descent. The L2
/// shrinkage is applied through a running scale factor so each step only
/// touches the features present in the batch.
inline LinearModel train_classifier(const std::vector<LabeledExample>& data, int classes, std::uint32_t num_features,
                                    const TrainOptions& opt,
                                    const std::function<void(int, const LinearModel&)>& on_epoch = nullptr) {
  if (classes < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two classes");
  std::vector<std::size_t> per_class(static_cast<std::size_t>(classes), 0);
  for (const auto& ex : data) {
    if (ex.label < 0 || ex.label >= classes) throw Error(ErrorCode::kInvalidArgument, "label out of range");
    ++per_class[ex.label];
  }
  for (int c = 0; c < classes; ++c) {
    if (per_class[c] == 0) throw Error(ErrorCode::kMissingClass, "no example of class " + std::to_string(c), c);
  }
  LinearModel m = LinearModel::zeros(classes, num_features);
  for (const auto& ex : data) check_dim(m, *ex.x);

  // True weights are scale * weights.
  double scale = 1.0;
  const std::size_t bs = opt.batch_size == 0 ? data.size() : std::min(opt.batch_size, data.size());
  std::vector<std::size_t> order(data.size());
  std::vector<double> residual(static_cast<std::size_t>(classes));
  std::unordered_map<std::size_t, double> step;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr = opt.lr / std::sqrt(1.0 + opt.lr_decay * epoch);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (opt.batch_size != 0) Rng(derive_seed(opt.seed, epoch, 0x7368756666ULL)).shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const double inv_n = 1.0 / static_cast<double>(end - start);
      step.clear();
      std::vector<double> grad_b(static_cast<std::size_t>(classes), 0.0);
      for (std::size_t t = start; t < end; ++t) {
        const auto& ex = data[order[t]];
        std::vector<double> z(m.bias);
        for (int c = 0; c < classes; ++c) {
          double s = 0.0;
          for (std::size_t k = 0; k < ex.x->nnz(); ++k) s += m.w(c, ex.x->index[k]) * ex.x->value[k];
          z[c] += scale * s;
        }
        const auto p = softmax(std::move(z));
        for (int c = 0; c < classes; ++c) {
          const double r = (p[c] - (c == ex.label ? 1.0 : 0.0)) * inv_n;
          grad_b[c] += r;
          for (std::size_t k = 0; k < ex.x->nnz(); ++k) {
            step[static_cast<std::size_t>(c) * num_features + ex.x->index[k]] += r * ex.x->value[k];
          }
        }
      }
      // W <- W - lr * (g + l2 W)  ==  (1 - lr l2) W - lr g
      scale *= (1.0 - lr * opt.l2);
      for (const auto& [idx, gval] : step) m.weights[idx] -= lr * gval / scale;
      for (int c = 0; c < classes; ++c) m.bias[c] -= lr * grad_b[c];
      if (scale < 1e-6) {
        for (double& wv : m.weights) wv *= scale;
        scale = 1.0;
      }
    }
    if (on_epoch) {
      LinearModel snapshot = m;
      for (double& wv : snapshot.weights) wv *= scale;
      on_epoch(epoch, snapshot);
    }
  }
  for (double& wv : m.weights) wv *= scale;
  return m;
}

// ---------------------------------------------------------------------------
// Metrics

/// Unweighted mean of per-class F1; a class with no predictions or no gold
/// instances contributes 0.
inline double macro_f1(const std::vector<int>& predictions, const std::vector<int>& gold, int classes) {
  if (predictions.size() != gold.size() || gold.empty()) {
    throw Error(ErrorCode::kLengthMismatch, "predictions and gold must have equal, non-zero length");
  }
  std::vector<std::uint64_t> tp(static_cast<std::size_t>(classes), 0), fp(tp), fn(tp);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predictions[i] < 0 || predictions[i] >= classes || gold[i] < 0 || gold[i] >= classes) {
      throw Error(ErrorCode::kInvalidArgument, "label outside [0, classes)");
    }
    if (predictions[i] == gold[i]) {
      ++tp[gold[i]];
    } else {
      ++fp[predictions[i]];
      ++fn[gold[i]];
    }
  }
  double sum = 0.0;
  for (int c = 0; c < classes; ++c) {
    if (tp[c] + fp[c] == 0 || tp[c] + fn[c] == 0) continue;
    const double precision = static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]);
    const double recall = static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fn[c]);
    if (precision + recall > 0.0) sum += 2.0 * precision * recall / (precision + recall);
  }
  return sum / static_cast<double>(classes);
}

// ---------------------------------------------------------------------------
// Acquisition

enum class AcquisitionKind { kRandom, kLeastConfidence, kCoreset };

inline std::string_view to_string(AcquisitionKind k) {
  switch (k) {
    case AcquisitionKind::kRandom: return "random";
    case AcquisitionKind::kLeastConfidence: return "least_confidence";
    case AcquisitionKind::kCoreset: return "coreset";
  }
  return "unknown";
}

inline AcquisitionKind parse_acquisition(std::string_view s) {
  if (s == "random") return AcquisitionKind::kRandom;
  if (s == "least_confidence" || s == "lc") return AcquisitionKind::kLeastConfidence;
  if (s == "coreset") return AcquisitionKind::kCoreset;
  throw Error(ErrorCode::kConfig, "unknown acquisition strategy '" + std::string(s) + "'");
}

struct AcquisitionStrategy {
  AcquisitionKind kind = AcquisitionKind::kLeastConfidence;
  std::map<std::string, std::string> params;
};

inline std::vector<DocId> acquire_random(const std::vector<DocId>& candidates, std::size_t batch, std::uint64_t seed) {
  std::vector<DocId> ids = candidates;
  Rng rng(seed);
  for (std::size_t i = 0; i < batch; ++i) std::swap(ids[i], ids[i + rng.below(ids.size() - i)]);
  ids.resize(batch);
  return ids;
}

/// Ids with the smallest max-class probability, ties by ascending id.
inline std::vector<DocId> acquire_least_confidence(const LinearModel& model, const std::vector<DocId>& candidates,
                                                   std::size_t batch, const FeatureStore& features) {
  std::vector<std::pair<double, DocId>> conf;
  conf.reserve(candidates.size());
  for (DocId id : candidates) {
    const auto p = predict_proba(model, features.at(id));
    conf.emplace_back(*std::max_element(p.begin(), p.end()), id);
  }
  std::partial_sort(conf.begin(), conf.begin() + static_cast<std::ptrdiff_t>(batch), conf.end());
  std::vector<DocId> out;
  for (std::size_t i = 0; i < batch; ++i) out.push_back(conf[i].second);
  return out;
}

/// Greedy k-center: repeatedly take the candidate farthest (Euclidean) from
/// its nearest center, where centers are the labeled points plus earlier
/// picks. Ties go to the smaller id; with no labeled points every distance
/// starts at infinity, so the smallest id is the first center.
inline std::vector<DocId> acquire_coreset(const std::vector<DocId>& candidates, const std::vector<DocId>& labeled,
                                          std::size_t batch, const FeatureStore& features) {
  std::vector<DocId> ids = candidates;
  std::sort(ids.begin(), ids.end());
  std::vector<double> nearest(ids.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const SparseVector& x = features.at(ids[i]);
    for (DocId l : labeled) nearest[i] = std::min(nearest[i], squared_distance(x, features.at(l)));
  }
  std::vector<char> taken(ids.size(), 0);
  std::vector<DocId> out;
  for (std::size_t round = 0; round < batch; ++round) {
    std::size_t best = ids.size();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (taken[i]) continue;
      if (best == ids.size() || nearest[i] > nearest[best]) best = i;
    }
    taken[best] = 1;
    out.push_back(ids[best]);
    const SparseVector& c = features.at(ids[best]);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!taken[i]) nearest[i] = std::min(nearest[i], squared_distance(features.at(ids[i]), c));
    }
  }
  return out;
}

inline std::vector<DocId> acquire(const AcquisitionStrategy& strategy, const LinearModel* model,
                                  const FilteredPool& pool, std::size_t batch, std::uint64_t seed,
                                  const FeatureStore& features, const std::vector<DocId>& labeled) {
  if (batch > pool.ids.size()) {
    throw Error(ErrorCode::kBatchTooLarge, "batch " + std::to_string(batch) + " exceeds filtered pool of " +
                                               std::to_string(pool.ids.size()));
  }
  switch (strategy.kind) {
    case AcquisitionKind::kRandom:
      return acquire_random(pool.ids, batch, seed);
    case AcquisitionKind::kLeastConfidence:
      // Without a model every candidate is equally uncertain.
      if (model == nullptr) return acquire_random(pool.ids, batch, seed);
      return acquire_least_confidence(*model, pool.ids, batch, features);
    case AcquisitionKind::kCoreset:
      return acquire_coreset(pool.ids, labeled, batch, features);
  }
  return {};
}

// ---------------------------------------------------------------------------
// The active-learning loop

struct IterationMetrics {
  std::uint32_t iteration = 0;
  double f1_macro = 0.0;
  std::size_t labeled_count = 0;
  std::int64_t pruning_ms = 0;
  std::int64_t scoring_ms = 0;
  std::int64_t acquisition_ms = 0;
  std::int64_t training_ms = 0;
  std::uint64_t scorer_calls = 0;

  nlohmann::json to_json() const {
    return {{"iteration", iteration},         {"f1_macro", format_double(f1_macro)},
            {"labeled_count", labeled_count}, {"pruning_ms", pruning_ms},
            {"scoring_ms", scoring_ms},       {"acquisition_ms", acquisition_ms},
            {"training_ms", training_ms},     {"scorer_calls", scorer_calls}};
  }

  static IterationMetrics from_json(const nlohmann::json& j) {
    IterationMetrics m;
    m.iteration = j.at("iteration").get<std::uint32_t>();
    m.f1_macro = parse_double(j.at("f1_macro").get<std::string>());
    m.labeled_count = j.at("labeled_count").get<std::size_t>();
    m.pruning_ms = j.at("pruning_ms").get<std::int64_t>();
    m.scoring_ms = j.at("scoring_ms").get<std::int64_t>();
    m.acquisition_ms = j.at("acquisition_ms").get<std::int64_t>();
    m.training_ms = j.at("training_ms").get<std::int64_t>();
    m.scorer_calls = j.at("scorer_calls").get<std::uint64_t>();
    return m;
  }
};

inline constexpr std::string_view kMetricsCsvHeader =
    "iteration,f1_macro,labeled_count,pruning_ms,scoring_ms,acquisition_ms,training_ms,scorer_calls";

inline std::string metrics_csv(const std::vector<IterationMetrics>& rows) {
  std::string out(kMetricsCsvHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + format_double(r.f1_macro) + "," + std::to_string(r.labeled_count) + "," +
           std::to_string(r.pruning_ms) + "," + std::to_string(r.scoring_ms) + "," + std::to_string(r.acquisition_ms) +
           "," + std::to_string(r.training_ms) + "," + std::to_string(r.scorer_calls) + "\n";
  }
  return out;
}

struct AlConfig {
  PruneConfig prune;
  AcquisitionStrategy strategy;
  std::uint32_t iterations = 5;
  double label_fraction = 0.01;
  std::uint64_t seed = 1;
  TrainOptions train;
  std::uint32_t feature_dim = 1u << 18;
  TaskType task = TaskType::sentiment();
  unsigned threads = 1;
  /// Written after every iteration when non-empty.
  std::string checkpoint_dir;
};

/// Everything observable about one finished iteration.
struct IterationRecord {
  const RunState& state;
  const IterationMetrics& metrics;
  const FilteredPool& pool;
  const PruneReport& prune;
  const std::vector<DocId>& acquired;
};

struct AlResult {
  std::vector<IterationMetrics> metrics;
  RunState state;
};

inline std::string checkpoint_path(const std::string& dir, std::uint32_t iteration) {
  return (std::filesystem::path(dir) / ("state_iter_" + std::to_string(iteration) + ".json")).string();
}

/// Simulated active learning over `train`, scored on `test`. Starts from
/// `initial` when given (a checkpoint), otherwise from a fresh state over
/// `perplexity`. Runs until cfg.iterations iterations have completed.
inline AlResult run_active_learning(const Dataset& train, const Dataset& test,
                                    const std::map<DocId, double>& perplexity, const AlConfig& cfg_in,
                                    Scorer* scorer, std::optional<RunState> initial = std::nullopt,
                                    const std::function<void(const IterationRecord&)>& observer = nullptr) {
  using Clock = std::chrono::steady_clock;
  const auto ms_since = [](Clock::time_point t0) {
    return static_cast<std::int64_t>(
        std::llround(std::chrono::duration<double, std::milli>(Clock::now() - t0).count()));
  };
  AlConfig cfg = cfg_in;
  cfg.prune.seed = cfg.seed;
  cfg.prune.validate();
  if (cfg.iterations < 1) throw Error(ErrorCode::kConfig, "iterations must be >= 1");
  const auto batch = static_cast<std::size_t>(round_count(cfg.label_fraction * static_cast<double>(train.size())));
  if (batch < 1) throw Error(ErrorCode::kConfig, "label_fraction * N must be at least 1");
  const int classes = std::max(train.num_classes(), test.num_classes());
  if (classes < 2) throw Error(ErrorCode::kConfig, "need a labeled dataset with at least two classes");
  for (const auto& d : train.documents()) {
    if (!d.label) throw Error(ErrorCode::kInvalidArgument, "training document " + std::to_string(d.id) + " has no label");
  }
  for (const auto& d : test.documents()) {
    if (!d.label) throw Error(ErrorCode::kInvalidArgument, "test document " + std::to_string(d.id) + " has no label");
  }

  RunState state;
  std::vector<IterationMetrics> history;
  if (initial) {
    state = std::move(*initial);
    state.validate_against(train);
    if (state.metadata.contains("history")) {
      for (const auto& h : state.metadata["history"]) history.push_back(IterationMetrics::from_json(h));
    }
    if (history.size() != state.iteration) throw Error(ErrorCode::kCorruptState, "metrics history does not match iteration");
  } else {
    if (perplexity.size() != train.size()) {
      throw Error(ErrorCode::kInvalidArgument, "need one perplexity per training document");
    }
    state = RunState::fresh(perplexity, cfg.seed);
    state.validate_against(train);
  }

  // The feature vocabulary comes from the pool text itself, which is
  // available before any label is bought.
  std::vector<std::string> texts;
  for (const auto& d : train.documents()) texts.push_back(d.text);
  const Vocabulary feature_vocab = build_vocabulary(texts, 1);
  const FeatureStore train_features = featurize_all(train, feature_vocab, cfg.feature_dim, cfg.threads);
  const FeatureStore test_features = featurize_all(test, feature_vocab, cfg.feature_dim, cfg.threads);

  std::optional<LinearModel> model;
  // Seeded by the number of the iteration that produced the labeled set, so
  // a resumed run refits exactly the model the original run held.
  const auto fit = [&](std::size_t iteration) {
    std::vector<LabeledExample> data;
    for (DocId id : state.labeled_ids) data.push_back({&train_features.at(id), *train.at(id).label});
    TrainOptions opt = cfg.train;
    opt.seed = derive_seed(cfg.seed, iteration, 0x747261696eULL);
    model = train_classifier(data, classes, cfg.feature_dim, opt);
  };
  // A resumed run needs the model trained on the checkpointed labeled set.
  if (!state.labeled_ids.empty()) fit(state.iteration);

  std::map<DocId, double> quality_cache;
  while (state.iteration < cfg.iterations) {
    if (state.unlabeled_ids.size() < batch) {
      throw Error(ErrorCode::kUnlabeledExhausted, "only " + std::to_string(state.unlabeled_ids.size()) +
                                                      " unlabeled documents left for a batch of " + std::to_string(batch));
    }
    IterationMetrics m;
    m.iteration = state.iteration + 1;

    PruneOutcome pruned = prune_step(state, cfg.prune, train, scorer, cfg.task, cfg.threads, &quality_cache);

    auto t0 = Clock::now();
    std::vector<DocId> labeled_vec(state.labeled_ids.begin(), state.labeled_ids.end());
    const auto acquired = acquire(cfg.strategy, model ? &*model : nullptr, pruned.pool, batch,
                                  derive_seed(cfg.seed, state.iteration, 0x6163717569ULL), train_features, labeled_vec);
    m.acquisition_ms = ms_since(t0);

    // Oracle labeling: move the batch from U to L, keeping its perplexity.
    for (DocId id : acquired) {
      state.labeled_perplexity[id] = state.perplexity.at(id);
      state.perplexity.erase(id);
      state.unlabeled_ids.erase(id);
      state.labeled_ids.insert(id);
    }
    state.last_batch = acquired;

    t0 = Clock::now();
    fit(state.iteration + 1);
    std::vector<int> pred, gold;
    for (const auto& d : test.documents()) {
      pred.push_back(predict(*model, test_features.at(d.id)));
      gold.push_back(*d.label);
    }
    m.f1_macro = macro_f1(pred, gold, classes);
    m.training_ms = ms_since(t0);

    t0 = Clock::now();
    state.perplexity = reweight(state, acquired, cfg.prune.effective_beta(), cfg.prune.cumulative_reweight);
    const std::int64_t reweight_ms = ms_since(t0);

    m.labeled_count = state.labeled_ids.size();
    m.scorer_calls = pruned.report.scorer_calls;
    m.pruning_ms = static_cast<std::int64_t>(std::llround(pruned.report.perplexity_stage_ms)) + reweight_ms;
    m.scoring_ms = static_cast<std::int64_t>(std::llround(pruned.report.quality_stage_ms));
    state.iteration += 1;
    history.push_back(m);

    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : history) hist.push_back(h.to_json());
    state.metadata["history"] = hist;
    state.metadata["prune_mode"] = std::string(to_string(cfg.prune.mode));
    state.metadata["strategy"] = std::string(to_string(cfg.strategy.kind));
    if (!cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      save_state(state, checkpoint_path(cfg.checkpoint_dir, state.iteration));
    }
    if (observer) observer(IterationRecord{state, m, pruned.pool, pruned.report, acquired});
  }
  return {history, state};
}

}  // namespace activeprune
