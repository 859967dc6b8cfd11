#pragma once

// Two-stage pool pruning: bottom-k perplexity plus top-k quality among the
// top-m highest-perplexity leftovers, and the per-iteration perplexity
// reweighting that pulls far-from-labeled documents toward selection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "activeprune/corpus.hpp"
#include "activeprune/error.hpp"
#include "activeprune/quality.hpp"
#include "activeprune/util.hpp"

namespace activeprune {

enum class PruneMode { kActivePrune, kRandom, kPerplexityOnly, kQualityOnly };

inline std::string_view to_string(PruneMode m) {
  switch (m) {
    case PruneMode::kActivePrune: return "active_prune";
    case PruneMode::kRandom: return "random";
    case PruneMode::kPerplexityOnly: return "perplexity_only";
    case PruneMode::kQualityOnly: return "quality_only";
  }
  return "unknown";
}

inline PruneMode parse_prune_mode(std::string_view s) {
  if (s == "active_prune") return PruneMode::kActivePrune;
  if (s == "random") return PruneMode::kRandom;
  if (s == "perplexity_only" || s == "perplexity") return PruneMode::kPerplexityOnly;
  if (s == "quality_only" || s == "ask_llm") return PruneMode::kQualityOnly;
  throw Error(ErrorCode::kConfig, "unknown prune mode '" + std::string(s) + "'");
}

struct PruneConfig {
  double keep_fraction = 0.25;
  double quality_share = 0.2;
  /// High-perplexity candidates rescored per iteration; 2 * k_q when unset.
  std::optional<std::uint64_t> m;
  double beta = 0.1;
  PruneMode mode = PruneMode::kActivePrune;
  std::uint64_t seed = 1;
  /// Reweight against every labeled document instead of the latest batch.
  bool cumulative_reweight = false;
  /// Reuse quality scores across iterations instead of rescoring.
  bool cache_quality = false;

  void validate() const {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
      throw Error(ErrorCode::kConfig, "keep_fraction must be in (0, 1]");
    }
    if (!(quality_share >= 0.0 && quality_share <= 1.0)) {
      throw Error(ErrorCode::kConfig, "quality_share must be in [0, 1]");
    }
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error(ErrorCode::kConfig, "beta must be >= 0");
  }

  std::size_t pool_size(std::size_t unlabeled) const {
    return static_cast<std::size_t>(round_count(keep_fraction * static_cast<double>(unlabeled)));
  }

  /// Documents chosen by quality score; zero outside active_prune.
  std::size_t quality_count(std::size_t unlabeled) const {
    if (mode != PruneMode::kActivePrune) return 0;
    return static_cast<std::size_t>(round_count(quality_share * static_cast<double>(pool_size(unlabeled))));
  }

  std::size_t candidate_count(std::size_t unlabeled) const {
    if (mode != PruneMode::kActivePrune) return 0;
    return m ? static_cast<std::size_t>(*m) : 2 * quality_count(unlabeled);
  }

  /// Reweighting strength actually applied; perplexity_only never reweights.
  double effective_beta() const { return mode == PruneMode::kPerplexityOnly ? 0.0 : beta; }

  void check_feasible(std::size_t unlabeled) const {
    validate();
    const std::size_t kq = quality_count(unlabeled);
    if (kq > candidate_count(unlabeled)) {
      throw Error(ErrorCode::kConfigInfeasible,
                  "quality picks (" + std::to_string(kq) + ") exceed scored candidates m (" +
                      std::to_string(candidate_count(unlabeled)) + ")");
    }
  }
};

struct FilteredPool {
  std::vector<DocId> ids;              // ascending
  std::vector<DocId> from_perplexity;  // ascending
  std::vector<DocId> from_quality;     // ascending

  bool contains(DocId id) const { return std::binary_search(ids.begin(), ids.end(), id); }

  /// One id per line, ascending.
  std::string serialize() const {
    std::string out;
    for (DocId id : ids) out += std::to_string(id) + "\n";
    return out;
  }

  friend bool operator==(const FilteredPool&, const FilteredPool&) = default;
};

// ---------------------------------------------------------------------------
// Selection primitives. Ties always break by ascending id.

inline std::vector<DocId> select_bottom_k_perplexity(const std::map<DocId, double>& ppl, std::size_t k) {
  if (k > ppl.size()) {
    throw Error(ErrorCode::kKTooLarge, "k=" + std::to_string(k) + " exceeds " + std::to_string(ppl.size()) + " scores");
  }
  std::vector<std::pair<double, DocId>> v;
  v.reserve(ppl.size());
  for (const auto& [id, p] : ppl) v.emplace_back(p, id);
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  std::vector<DocId> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(v[i].second);
  return out;
}

/// The m highest-perplexity ids outside `exclude`, descending; m is clipped
/// to what is available.
inline std::vector<DocId> select_top_m_high_perplexity(const std::map<DocId, double>& ppl,
                                                       const std::set<DocId>& exclude, std::size_t m) {
  std::vector<std::pair<double, DocId>> v;
  v.reserve(ppl.size());
  for (const auto& [id, p] : ppl) {
    if (!exclude.contains(id)) v.emplace_back(p, id);
  }
  m = std::min(m, v.size());
  const auto cmp = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end(), cmp);
  std::vector<DocId> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(v[i].second);
  return out;
}

/// The k highest quality scores, descending.
inline std::vector<DocId> select_top_k_quality(const std::vector<QualityScore>& scores, std::size_t k) {
  if (k > scores.size()) {
    throw Error(ErrorCode::kKTooLarge, "k=" + std::to_string(k) + " exceeds " + std::to_string(scores.size()) + " scores");
  }
  std::vector<std::pair<double, DocId>> v;
  v.reserve(scores.size());
  for (const auto& s : scores) v.emplace_back(s.q, s.doc_id);
  const auto cmp = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), cmp);
  std::vector<DocId> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(v[i].second);
  return out;
}

/// Ids that need a quality score this iteration: the top-m high-perplexity
/// documents left after the bottom-k_p perplexity picks (active_prune), or
/// the whole pool (quality_only).
inline std::vector<DocId> quality_candidates(const RunState& state, const PruneConfig& cfg) {
  const std::size_t U = state.unlabeled_ids.size();
  switch (cfg.mode) {
    case PruneMode::kActivePrune: {
      cfg.check_feasible(U);
      const std::size_t kp = cfg.pool_size(U) - cfg.quality_count(U);
      const auto low = select_bottom_k_perplexity(state.perplexity, kp);
      return select_top_m_high_perplexity(state.perplexity, std::set<DocId>(low.begin(), low.end()),
                                          cfg.candidate_count(U));
    }
    case PruneMode::kQualityOnly:
      return {state.unlabeled_ids.begin(), state.unlabeled_ids.end()};
    case PruneMode::kRandom:
    case PruneMode::kPerplexityOnly:
      return {};
  }
  return {};
}

/// Builds this iteration's filtered pool. Quality picks are taken first and
/// perplexity picks then fill the remaining slots from the documents not
/// already chosen, so the pool size is exactly round(keep_fraction * |U|).
inline FilteredPool build_filtered_pool(const RunState& state, const std::vector<QualityScore>& scores,
                                        const PruneConfig& cfg) {
  const std::size_t U = state.unlabeled_ids.size();
  cfg.check_feasible(U);
  const std::size_t n = cfg.pool_size(U);
  FilteredPool pool;
  switch (cfg.mode) {
    case PruneMode::kRandom: {
      std::vector<DocId> all(state.unlabeled_ids.begin(), state.unlabeled_ids.end());
      Rng rng(derive_seed(cfg.seed, state.iteration, 0x706f6f6cULL));
      // Partial Fisher-Yates over the first n slots.
      for (std::size_t i = 0; i < n; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
      pool.from_perplexity.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    }
    case PruneMode::kQualityOnly: {
      for (const auto& s : scores) {
        if (!state.unlabeled_ids.contains(s.doc_id)) {
          throw Error(ErrorCode::kInvalidArgument, "score for non-pool id " + std::to_string(s.doc_id));
        }
      }
      if (scores.size() != U) throw Error(ErrorCode::kInvalidArgument, "quality_only needs a score for every document");
      pool.from_quality = select_top_k_quality(scores, n);
      break;
    }
    case PruneMode::kActivePrune:
    case PruneMode::kPerplexityOnly: {
      const std::size_t kq = cfg.quality_count(U);
      for (const auto& s : scores) {
        if (!state.unlabeled_ids.contains(s.doc_id)) {
          throw Error(ErrorCode::kInvalidArgument, "score for non-pool id " + std::to_string(s.doc_id));
        }
      }
      if (kq > scores.size()) {
        throw Error(ErrorCode::kConfigInfeasible, "only " + std::to_string(scores.size()) +
                                                      " scored candidates for " + std::to_string(kq) + " quality picks");
      }
      pool.from_quality = select_top_k_quality(scores, kq);
      const std::set<DocId> taken(pool.from_quality.begin(), pool.from_quality.end());
      std::map<DocId, double> rest;
      for (const auto& [id, p] : state.perplexity) {
        if (!taken.contains(id)) rest.emplace_hint(rest.end(), id, p);
      }
      pool.from_perplexity = select_bottom_k_perplexity(rest, n - kq);
      break;
    }
  }
  std::sort(pool.from_perplexity.begin(), pool.from_perplexity.end());
  std::sort(pool.from_quality.begin(), pool.from_quality.end());
  std::merge(pool.from_perplexity.begin(), pool.from_perplexity.end(), pool.from_quality.begin(),
             pool.from_quality.end(), std::back_inserter(pool.ids));
  return pool;
}

// ---------------------------------------------------------------------------
// Reweighting

/// P_new(x) = P(x) - beta * mean_{l in batch} |P(x) - P(l)| for every
/// unlabeled x, all adjustments computed from the pre-update values. P(l) is
/// the snapshot taken when l was acquired. With `cumulative`, the reference
/// set is every labeled document instead of the latest batch.
inline std::map<DocId, double> reweight(const RunState& state, const std::vector<DocId>& newly_labeled, double beta,
                                        bool cumulative = false) {
  if (newly_labeled.empty()) throw Error(ErrorCode::kEmptyLabelBatch, "no newly labeled documents");
  if (!(beta >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "beta must be >= 0");
  std::vector<double> ref;
  const auto snapshot = [&](DocId id) {
    auto it = state.labeled_perplexity.find(id);
    if (it == state.labeled_perplexity.end()) {
      throw Error(ErrorCode::kInvalidArgument, "no perplexity snapshot for labeled id " + std::to_string(id));
    }
    return it->second;
  };
  if (cumulative) {
    for (DocId id : state.labeled_ids) ref.push_back(snapshot(id));
  } else {
    for (DocId id : newly_labeled) ref.push_back(snapshot(id));
  }
  const double inv = 1.0 / static_cast<double>(ref.size());
  std::map<DocId, double> out;
  for (const auto& [id, p] : state.perplexity) {
    double sum = 0.0;
    for (double l : ref) sum += std::abs(p - l);
    out.emplace_hint(out.end(), id, p - beta * (sum * inv));
  }
  return out;
}

/// Iterations after which an instance whose adjustment exceeds every other's
/// by at least delta - epsilon closes an initial perplexity gap D0:
/// ceil(D0 / (beta * (delta - epsilon))).
inline std::uint64_t convergence_bound(double d0, double delta, double epsilon, double beta) {
  if (!(delta > epsilon)) throw Error(ErrorCode::kInvalidGap, "delta must exceed epsilon");
  if (!(epsilon >= 0.0) || !(beta > 0.0) || !(d0 >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "need epsilon >= 0, beta > 0, D0 >= 0");
  }
  const double q = d0 / (beta * (delta - epsilon));
  // Absorb representation error so that e.g. 7 / 0.7 rounds to 10, not 11.
  return static_cast<std::uint64_t>(std::ceil(q - 1e-12 * std::max(1.0, q)));
}

// ---------------------------------------------------------------------------
// One pruning step with instrumentation

struct PruneReport {
  std::uint32_t iteration = 0;
  std::size_t kept = 0;
  std::size_t from_perplexity = 0;
  std::size_t from_quality = 0;
  std::uint64_t scorer_calls = 0;
  double perplexity_stage_ms = 0.0;
  double quality_stage_ms = 0.0;
  std::map<std::string, std::uint64_t> score_variants;

  nlohmann::json to_json() const {
    return {{"iteration", iteration},
            {"kept", kept},
            {"from_perplexity", from_perplexity},
            {"from_quality", from_quality},
            {"scorer_calls", scorer_calls},
            {"wallclock_ms", {{"perplexity_stage", perplexity_stage_ms}, {"quality_stage", quality_stage_ms}}},
            {"score_variants", score_variants}};
  }
};

struct PruneOutcome {
  FilteredPool pool;
  std::vector<QualityScore> scores;
  PruneReport report;
};

/// Runs candidate selection, quality scoring and pool construction for the
/// current state. `quality_cache` (optional) holds scores reused across
/// iterations when cfg.cache_quality is set.
inline PruneOutcome prune_step(const RunState& state, const PruneConfig& cfg, const Dataset& dataset, Scorer* scorer,
                               const TaskType& task, unsigned parallelism = 1,
                               std::map<DocId, double>* quality_cache = nullptr) {
  using Clock = std::chrono::steady_clock;
  const auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  PruneOutcome out;
  out.report.iteration = state.iteration;
  const auto t0 = Clock::now();
  const std::vector<DocId> candidates = quality_candidates(state, cfg);
  out.report.perplexity_stage_ms = ms_since(t0);

  const auto t1 = Clock::now();
  if (!candidates.empty()) {
    if (scorer == nullptr) throw Error(ErrorCode::kConfig, "this prune mode needs a quality scorer");
    std::vector<Document> to_score;
    std::vector<QualityScore> cached;
    for (DocId id : candidates) {
      if (cfg.cache_quality && quality_cache != nullptr) {
        auto it = quality_cache->find(id);
        if (it != quality_cache->end()) {
          cached.push_back({id, it->second});
          continue;
        }
      }
      to_score.push_back(dataset.at(id));
    }
    ScorerBudget budget{0, static_cast<std::uint64_t>(candidates.size())};
    auto report = score_documents_report(*scorer, to_score, task, budget, parallelism);
    out.report.scorer_calls = budget.calls_made;
    out.report.score_variants = report.variants;
    if (cfg.cache_quality && quality_cache != nullptr) {
      for (const auto& s : report.scores) (*quality_cache)[s.doc_id] = s.q;
    }
    std::map<DocId, double> by_id;
    for (const auto& s : report.scores) by_id[s.doc_id] = s.q;
    for (const auto& s : cached) by_id[s.doc_id] = s.q;
    for (DocId id : candidates) out.scores.push_back({id, by_id.at(id)});
  }
  out.pool = build_filtered_pool(state, out.scores, cfg);
  out.report.quality_stage_ms = ms_since(t1);
  out.report.kept = out.pool.ids.size();
  out.report.from_perplexity = out.pool.from_perplexity.size();
  out.report.from_quality = out.pool.from_quality.size();
  return out;
}

}  // namespace activeprune
