#pragma once

// Brute-force reference implementations of the selection rules. They favor
// obviousness over speed: full sorts, recomputed distances, explicit
// confusion matrices.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "activeprune/al_sim.hpp"
#include "activeprune/prune.hpp"

namespace oracle {

using activeprune::DocId;

/// Ids ordered by value, ties by ascending id.
inline std::vector<DocId> sorted_ids(const std::map<DocId, double>& m, bool descending) {
  std::vector<std::pair<double, DocId>> v;
  for (const auto& [id, p] : m) v.emplace_back(p, id);
  std::stable_sort(v.begin(), v.end(), [&](const auto& a, const auto& b) {
    if (a.first == b.first) return a.second < b.second;
    return descending ? a.first > b.first : a.first < b.first;
  });
  std::vector<DocId> out;
  for (const auto& [p, id] : v) out.push_back(id);
  return out;
}

inline std::size_t rounded(double x) { return static_cast<std::size_t>(std::llround(x)); }

/// Candidates for quality scoring: the m highest perplexities among the
/// documents not in the bottom (n - k_q).
inline std::vector<DocId> candidates(const activeprune::RunState& s, double keep, double share, std::size_t m) {
  const std::size_t n = rounded(keep * static_cast<double>(s.unlabeled_ids.size()));
  const std::size_t kq = rounded(share * static_cast<double>(n));
  const auto asc = sorted_ids(s.perplexity, false);
  const std::set<DocId> low(asc.begin(), asc.begin() + static_cast<std::ptrdiff_t>(n - kq));
  std::map<DocId, double> rest;
  for (const auto& [id, p] : s.perplexity) {
    if (!low.contains(id)) rest[id] = p;
  }
  auto desc = sorted_ids(rest, true);
  if (desc.size() > m) desc.resize(m);
  return desc;
}

/// Pool: the k_q best quality scores, then the lowest perplexities among the
/// rest until the pool holds round(keep * |U|) ids.
inline activeprune::FilteredPool pool(const activeprune::RunState& s, const std::vector<activeprune::QualityScore>& scores,
                                      double keep, double share) {
  const std::size_t n = rounded(keep * static_cast<double>(s.unlabeled_ids.size()));
  const std::size_t kq = rounded(share * static_cast<double>(n));
  std::map<DocId, double> q;
  for (const auto& x : scores) q[x.doc_id] = x.q;
  auto by_q = sorted_ids(q, true);
  by_q.resize(kq);
  const std::set<DocId> chosen(by_q.begin(), by_q.end());
  std::map<DocId, double> rest;
  for (const auto& [id, p] : s.perplexity) {
    if (!chosen.contains(id)) rest[id] = p;
  }
  auto by_p = sorted_ids(rest, false);
  by_p.resize(n - kq);
  activeprune::FilteredPool out;
  out.from_quality = by_q;
  out.from_perplexity = by_p;
  std::sort(out.from_quality.begin(), out.from_quality.end());
  std::sort(out.from_perplexity.begin(), out.from_perplexity.end());
  std::set<DocId> all(by_q.begin(), by_q.end());
  all.insert(by_p.begin(), by_p.end());
  out.ids.assign(all.begin(), all.end());
  return out;
}

inline double distance(const activeprune::SparseVector& a, const activeprune::SparseVector& b) {
  std::map<std::uint32_t, double> diff;
  for (std::size_t i = 0; i < a.nnz(); ++i) diff[a.index[i]] += a.value[i];
  for (std::size_t i = 0; i < b.nnz(); ++i) diff[b.index[i]] -= b.value[i];
  double s = 0.0;
  for (const auto& [k, v] : diff) s += v * v;
  return std::sqrt(s);
}

/// Greedy k-center recomputing every point-to-center distance each round.
inline std::vector<DocId> coreset(const std::vector<DocId>& cand, const std::vector<DocId>& labeled, std::size_t k,
                                  const activeprune::FeatureStore& f) {
  std::vector<DocId> centers = labeled, picked;
  std::set<DocId> left(cand.begin(), cand.end());
  for (std::size_t r = 0; r < k; ++r) {
    DocId best = 0;
    double best_d = -1.0;
    for (DocId id : left) {
      double d = std::numeric_limits<double>::infinity();
      for (DocId c : centers) d = std::min(d, distance(f.at(id), f.at(c)));
      if (d > best_d) {
        best_d = d;
        best = id;
      }
    }
    picked.push_back(best);
    centers.push_back(best);
    left.erase(best);
  }
  return picked;
}

inline double macro_f1(const std::vector<int>& p, const std::vector<int>& g, int classes) {
  std::vector<std::vector<long>> cm(classes, std::vector<long>(classes, 0));
  for (std::size_t i = 0; i < p.size(); ++i) ++cm[g[i]][p[i]];
  double total = 0.0;
  for (int c = 0; c < classes; ++c) {
    long tp = cm[c][c], pred = 0, gold = 0;
    for (int k = 0; k < classes; ++k) {
      pred += cm[k][c];
      gold += cm[c][k];
    }
    if (pred == 0 || gold == 0 || tp == 0) continue;
    const double prec = static_cast<double>(tp) / pred, rec = static_cast<double>(tp) / gold;
    total += 2 * prec * rec / (prec + rec);
  }
  return total / classes;
}

}  // namespace oracle
