#pragma once

// Interpolated modified Kneser-Ney n-gram language model (orders 1..5).
//
// Probabilities are kept in backoff form, exactly as an ARPA file stores them:
// every observed n-gram carries its interpolated log10 probability, and every
// observed context carries log10 of its interpolation weight as a backoff.
// Queries go through per-order open-addressing tables keyed by 64-bit
// fingerprints of the id sequence.

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "activeprune/corpus.hpp"
#include "activeprune/error.hpp"
#include "activeprune/tokenizer.hpp"
#include "activeprune/util.hpp"

namespace activeprune {

inline constexpr int kMaxOrder = 5;

/// Modified-KN discounts for one order. `fallback` is set when the
/// counts-of-counts were degenerate and the fixed discount was used.
struct Discounts {
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
  bool fallback = false;

  double for_count(std::uint64_t c) const noexcept {
    return c == 0 ? 0.0 : c == 1 ? d1 : c == 2 ? d2 : d3;
  }

  friend bool operator==(const Discounts&, const Discounts&) = default;
};

inline constexpr double kFallbackDiscount = 0.75;

/// Discounts from counts-of-counts n[1..4]: D_k = k - (k+1) Y n_{k+1} / n_k
/// with Y = n1 / (n1 + 2 n2). Any zero count-of-count among n1..n3 or a
/// discount outside (0, k] falls back to the fixed discount.
inline Discounts compute_discounts(const std::array<std::uint64_t, 5>& n) {
  Discounts d;
  if (n[1] == 0 || n[2] == 0 || n[3] == 0) {
    d.d1 = d.d2 = d.d3 = kFallbackDiscount;
    d.fallback = true;
    return d;
  }
  const double n1 = static_cast<double>(n[1]), n2 = static_cast<double>(n[2]);
  const double n3 = static_cast<double>(n[3]), n4 = static_cast<double>(n[4]);
  const double y = n1 / (n1 + 2.0 * n2);
  d.d1 = 1.0 - 2.0 * y * n2 / n1;
  d.d2 = 2.0 - 3.0 * y * n3 / n2;
  d.d3 = 3.0 - 4.0 * y * n4 / n3;
  if (!(d.d1 > 0.0 && d.d1 <= 1.0 && d.d2 > 0.0 && d.d2 <= 2.0 && d.d3 > 0.0 && d.d3 <= 3.0)) {
    d = Discounts{kFallbackDiscount, kFallbackDiscount, kFallbackDiscount, true};
  }
  return d;
}

struct PerplexityScore {
  DocId doc_id = 0;
  double ppl = 0.0;
  std::uint32_t token_count = 0;
  double log10_sum = 0.0;

  friend bool operator==(const PerplexityScore&, const PerplexityScore&) = default;
};

namespace detail {

inline constexpr std::uint64_t kFingerprintMul = 0xD6E8FEB86659FD93ULL;

/// Fingerprint of the one-token suffix ending at `word`.
constexpr std::uint64_t fingerprint_start(TokenId word) noexcept {
  return mix64(static_cast<std::uint64_t>(word) + 1);
}

/// Extends a fingerprint one token to the left.
constexpr std::uint64_t fingerprint_extend(std::uint64_t h, TokenId left) noexcept {
  return mix64(h ^ ((static_cast<std::uint64_t>(left) + 1) * kFingerprintMul));
}

inline std::uint64_t fingerprint(std::span<const TokenId> ngram) noexcept {
  std::uint64_t h = fingerprint_start(ngram.back());
  for (std::size_t i = ngram.size() - 1; i-- > 0;) h = fingerprint_extend(h, ngram[i]);
  return h;
}

/// Linear-probing hash table from fingerprint to (log10 p, log10 backoff).
class ProbingTable {
 public:
  struct Slot {
    std::uint64_t key = 0;
    double logp = 0.0;
    double bow = 0.0;
  };

  ProbingTable() = default;

  explicit ProbingTable(std::size_t entries) {
    std::size_t cap = 16;
    while (cap < entries * 2) cap <<= 1;
    slots_.assign(cap, Slot{});
    mask_ = cap - 1;
  }

  /// Returns false when the key is already present.
  bool insert(std::uint64_t key, double logp, double bow) {
    key = normalize(key);
    std::size_t i = key & mask_;
    while (slots_[i].key != 0) {
      if (slots_[i].key == key) return false;
      i = (i + 1) & mask_;
    }
    slots_[i] = Slot{key, logp, bow};
    return true;
  }

  const Slot* find(std::uint64_t key) const noexcept {
    if (slots_.empty()) return nullptr;
    key = normalize(key);
    std::size_t i = key & mask_;
    while (true) {
      const Slot& s = slots_[i];
      if (s.key == key) return &s;
      if (s.key == 0) return nullptr;
      i = (i + 1) & mask_;
    }
  }

 private:
  static constexpr std::uint64_t normalize(std::uint64_t key) noexcept { return key == 0 ? 1 : key; }

  std::vector<Slot> slots_;
  std::size_t mask_ = 0;
};

}  // namespace detail

/// One order's n-grams in insertion order; ids are flattened with stride n.
struct NGramLevel {
  int n = 1;
  std::vector<TokenId> ids;
  std::vector<double> logp;
  std::vector<double> bow;
  std::vector<std::uint8_t> has_bow;

  std::size_t size() const noexcept { return logp.size(); }
  std::span<const TokenId> ngram(std::size_t i) const noexcept {
    return {ids.data() + i * static_cast<std::size_t>(n), static_cast<std::size_t>(n)};
  }
};

class NGramModel {
 public:
  NGramModel() = default;

  /// Assembles a model from explicit levels. levels[0] must hold one unigram
  /// per vocabulary id in id order.
  NGramModel(Vocabulary vocab, std::vector<NGramLevel> levels, std::vector<Discounts> discounts = {})
      : vocab_(std::move(vocab)), levels_(std::move(levels)), discounts_(std::move(discounts)) {
    if (levels_.empty() || levels_.size() > static_cast<std::size_t>(kMaxOrder)) {
      throw Error(ErrorCode::kInvalidArgument, "order must be 1..5");
    }
    if (levels_[0].size() != vocab_.size()) {
      throw Error(ErrorCode::kInvalidArgument, "unigram level must cover the vocabulary");
    }
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
      if (levels_[0].ids[i] != i) throw Error(ErrorCode::kInvalidArgument, "unigrams must be in id order");
    }
    build_tables();
  }

  int order() const noexcept { return static_cast<int>(levels_.size()); }
  std::size_t vocab_size() const noexcept { return vocab_.size(); }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const std::vector<Discounts>& discounts() const noexcept { return discounts_; }
  const NGramLevel& level(int n) const { return levels_.at(static_cast<std::size_t>(n - 1)); }
  std::size_t ngram_count(int n) const { return level(n).size(); }

  /// log10 P(word | last order-1 ids of context), backing off through lower
  /// orders. OOV words must already be mapped to unk by the caller.
  double log_prob(std::span<const TokenId> context, TokenId word) const {
    check_id(word);
    const std::size_t hist = std::min<std::size_t>(context.size(), levels_.size() - 1);
    const TokenId* h = context.data() + context.size() - hist;

    double logp = levels_[0].logp[word];
    std::size_t matched = 0;
    std::uint64_t key = detail::fingerprint_start(word);
    for (std::size_t j = 1; j <= hist; ++j) {
      key = detail::fingerprint_extend(key, h[hist - j]);
      const auto* slot = tables_[j].find(key);
      if (slot == nullptr) break;
      logp = slot->logp;
      matched = j;
    }
    // Backoff weights of the unmatched contexts, shortest first.
    std::uint64_t ckey = 0;
    for (std::size_t j = 1; j <= hist; ++j) {
      const TokenId left = h[hist - j];
      ckey = j == 1 ? detail::fingerprint_start(left) : detail::fingerprint_extend(ckey, left);
      double bow = 0.0;
      if (j == 1) {
        check_id(left);
        bow = levels_[0].bow[left];
      } else {
        const auto* slot = tables_[j - 1].find(ckey);
        if (slot == nullptr) break;
        bow = slot->bow;
      }
      if (j > matched) logp += bow;
    }
    return logp;
  }

  /// Perplexity of a BOS-wrapped sequence. BOS is context only; every later
  /// position, EOS included, is scored.
  PerplexityScore perplexity(std::span<const TokenId> tokens, DocId doc_id = 0) const {
    if (tokens.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least one scored position");
    const std::size_t max_ctx = levels_.size() - 1;
    // Backoffs of the current context suffixes: bows[j-1] belongs to the
    // suffix of length j.
    std::array<double, kMaxOrder> bows{};
    std::array<double, kMaxOrder> next_bows{};
    std::size_t ctx_len = 0;
    if (max_ctx > 0) {
      check_id(tokens[0]);
      bows[0] = levels_[0].bow[tokens[0]];
      ctx_len = 1;
    }
    double total = 0.0;
    for (std::size_t pos = 1; pos < tokens.size(); ++pos) {
      const TokenId word = tokens[pos];
      check_id(word);
      double logp = levels_[0].logp[word];
      next_bows[0] = levels_[0].bow[word];
      std::size_t matched = 0;
      std::uint64_t key = detail::fingerprint_start(word);
      for (std::size_t j = 1; j <= ctx_len; ++j) {
        key = detail::fingerprint_extend(key, tokens[pos - j]);
        const auto* slot = tables_[j].find(key);
        if (slot == nullptr) break;
        logp = slot->logp;
        if (j < max_ctx) next_bows[j] = slot->bow;
        matched = j;
      }
      for (std::size_t j = matched + 1; j <= ctx_len; ++j) logp += bows[j - 1];
      total += logp;
      ctx_len = std::min(matched + 1, max_ctx);
      bows = next_bows;
    }
    PerplexityScore s;
    s.doc_id = doc_id;
    s.token_count = static_cast<std::uint32_t>(tokens.size() - 1);
    s.log10_sum = total;
    s.ppl = std::pow(10.0, -total / static_cast<double>(s.token_count));
    return s;
  }

 private:
  void check_id(TokenId id) const {
    if (id >= vocab_.size()) throw Error(ErrorCode::kInvalidArgument, "token id out of range");
  }

  void build_tables() {
    tables_.clear();
    tables_.emplace_back();  // unigrams are indexed directly
    for (std::size_t li = 1; li < levels_.size(); ++li) {
      const NGramLevel& lv = levels_[li];
      if (lv.n != static_cast<int>(li + 1) || lv.ids.size() != lv.size() * lv.n || lv.bow.size() != lv.size() ||
          lv.has_bow.size() != lv.size()) {
        throw Error(ErrorCode::kInvalidArgument, "inconsistent level " + std::to_string(li + 1));
      }
      detail::ProbingTable table(lv.size());
      for (std::size_t i = 0; i < lv.size(); ++i) {
        for (TokenId id : lv.ngram(i)) check_id(id);
        if (!table.insert(detail::fingerprint(lv.ngram(i)), lv.logp[i], lv.has_bow[i] ? lv.bow[i] : 0.0)) {
          throw Error(ErrorCode::kHashCollision,
                      "duplicate or colliding " + std::to_string(li + 1) + "-gram fingerprint");
        }
      }
      tables_.push_back(std::move(table));
    }
  }

  Vocabulary vocab_;
  std::vector<NGramLevel> levels_;
  std::vector<Discounts> discounts_;
  std::vector<detail::ProbingTable> tables_;
};

// ---------------------------------------------------------------------------
// Training

namespace detail {

using Gram = std::array<TokenId, kMaxOrder>;

struct CountedGrams {
  std::vector<Gram> grams;  // sorted, unique; unused tail slots are zero
  std::vector<std::uint64_t> counts;

  std::size_t find(const Gram& g) const {
    auto it = std::lower_bound(grams.begin(), grams.end(), g);
    if (it == grams.end() || *it != g) return static_cast<std::size_t>(-1);
    return static_cast<std::size_t>(it - grams.begin());
  }
};

inline CountedGrams count_sorted(std::vector<Gram> grams) {
  std::sort(grams.begin(), grams.end());
  CountedGrams out;
  for (std::size_t i = 0; i < grams.size();) {
    std::size_t j = i + 1;
    while (j < grams.size() && grams[j] == grams[i]) ++j;
    out.grams.push_back(grams[i]);
    out.counts.push_back(j - i);
    i = j;
  }
  return out;
}

inline Gram drop_first(const Gram& g, int n) {
  Gram s{};
  for (int k = 1; k < n; ++k) s[k - 1] = g[k];
  return s;
}

inline Gram drop_last(const Gram& g, int n) {
  Gram s = g;
  s[n - 1] = 0;
  return s;
}

}  // namespace detail

/// Trains an interpolated modified-KN model on BOS/EOS-wrapped sequences.
///
/// Counts at the top order are raw counts; lower orders use continuation
/// counts (number of distinct left extensions), except n-grams that begin
/// with BOS, which cannot be extended and keep raw counts. BOS is never
/// predicted, so its unigram only receives the uniform share.
template <typename Range>
NGramModel train_ngram(const Range& corpus, int order, const Vocabulary& vocab) {
  using detail::Gram;
  if (order < 1 || order > kMaxOrder) throw Error(ErrorCode::kInvalidArgument, "order must be 1..5");
  const std::size_t V = vocab.size();
  const TokenId bos = vocab.bos_id();

  std::vector<std::vector<Gram>> raw(static_cast<std::size_t>(order));
  bool any = false;
  for (const auto& seq_ref : corpus) {
    std::span<const TokenId> seq(seq_ref);
    if (seq.size() < 2 || seq.front() != bos || seq.back() != vocab.eos_id()) {
      throw Error(ErrorCode::kInvalidArgument, "training sequences must be BOS/EOS wrapped");
    }
    any = true;
    for (TokenId id : seq) {
      if (id >= V) throw Error(ErrorCode::kInvalidArgument, "token id out of vocabulary range");
    }
    for (std::size_t i = 1; i < seq.size(); ++i) {
      if (seq[i] == bos) throw Error(ErrorCode::kInvalidArgument, "BOS inside a sequence");
      for (int n = 1; n <= order && static_cast<std::size_t>(n) <= i + 1; ++n) {
        Gram g{};
        for (int k = 0; k < n; ++k) g[k] = seq[i + 1 - n + k];
        raw[n - 1].push_back(g);
      }
    }
  }
  if (!any) throw Error(ErrorCode::kEmptyCorpus, "no training sentences");

  std::vector<detail::CountedGrams> counted(static_cast<std::size_t>(order));
  for (int n = 1; n <= order; ++n) {
    counted[n - 1] = detail::count_sorted(std::move(raw[n - 1]));
    raw[n - 1] = {};
  }

  // Adjusted counts.
  std::vector<std::vector<std::uint64_t>> adjusted(static_cast<std::size_t>(order));
  adjusted[order - 1] = counted[order - 1].counts;
  for (int n = order - 1; n >= 1; --n) {
    std::vector<Gram> suffixes;
    suffixes.reserve(counted[n].grams.size());
    for (const Gram& g : counted[n].grams) suffixes.push_back(detail::drop_first(g, n + 1));
    const auto cont = detail::count_sorted(std::move(suffixes));
    auto& adj = adjusted[n - 1];
    const auto& lv = counted[n - 1];
    adj.resize(lv.grams.size());
    std::size_t c = 0;
    for (std::size_t i = 0; i < lv.grams.size(); ++i) {
      if (lv.grams[i][0] == bos) {
        adj[i] = lv.counts[i];
        continue;
      }
      while (c < cont.grams.size() && cont.grams[c] < lv.grams[i]) ++c;
      adj[i] = (c < cont.grams.size() && cont.grams[c] == lv.grams[i]) ? cont.counts[c] : 0;
    }
  }

  std::vector<Discounts> discounts(static_cast<std::size_t>(order));
  for (int n = 1; n <= order; ++n) {
    std::array<std::uint64_t, 5> coc{};
    for (std::uint64_t a : adjusted[n - 1]) {
      if (a >= 1 && a <= 4) ++coc[a];
    }
    discounts[n - 1] = compute_discounts(coc);
  }

  // Linear probabilities and interpolation weights, bottom-up.
  std::vector<NGramLevel> levels(static_cast<std::size_t>(order));
  std::vector<double> uni_prob(V, 0.0), uni_gamma(V, 0.0);
  std::vector<std::uint8_t> uni_has_gamma(V, 0);
  {
    const Discounts& d = discounts[0];
    std::vector<std::uint64_t> a(V, 0);
    const auto& lv = counted[0];
    for (std::size_t i = 0; i < lv.grams.size(); ++i) a[lv.grams[i][0]] = adjusted[0][i];
    double total = 0.0, discounted = 0.0;
    for (std::size_t w = 0; w < V; ++w) {
      total += static_cast<double>(a[w]);
      discounted += d.for_count(a[w]);
    }
    const double gamma = discounted / total;
    for (std::size_t w = 0; w < V; ++w) {
      const double own = a[w] == 0 ? 0.0 : (static_cast<double>(a[w]) - d.for_count(a[w])) / total;
      uni_prob[w] = own + gamma / static_cast<double>(V);
    }
  }
  std::vector<std::vector<double>> prob(static_cast<std::size_t>(order));
  std::vector<std::vector<double>> gamma_of(static_cast<std::size_t>(order));
  std::vector<std::vector<std::uint8_t>> has_gamma(static_cast<std::size_t>(order));
  for (int n = 2; n <= order; ++n) {
    const auto& lv = counted[n - 1];
    const auto& adj = adjusted[n - 1];
    const Discounts& d = discounts[n - 1];
    prob[n - 1].assign(lv.grams.size(), 0.0);
    gamma_of[n - 2].resize(counted[n - 2].grams.size(), 0.0);
    has_gamma[n - 2].resize(counted[n - 2].grams.size(), 0);
    for (std::size_t begin = 0; begin < lv.grams.size();) {
      const Gram ctx = detail::drop_last(lv.grams[begin], n);
      std::size_t end = begin;
      double total = 0.0, discounted = 0.0;
      while (end < lv.grams.size() && detail::drop_last(lv.grams[end], n) == ctx) {
        total += static_cast<double>(adj[end]);
        discounted += d.for_count(adj[end]);
        ++end;
      }
      const double gamma = discounted / total;
      for (std::size_t i = begin; i < end; ++i) {
        const Gram suffix = detail::drop_first(lv.grams[i], n);
        double lower;
        if (n == 2) {
          lower = uni_prob[suffix[0]];
        } else {
          const std::size_t si = counted[n - 2].find(suffix);
          if (si == static_cast<std::size_t>(-1)) throw Error(ErrorCode::kInvalidArgument, "missing lower-order n-gram");
          lower = prob[n - 2][si];
        }
        prob[n - 1][i] = (static_cast<double>(adj[i]) - d.for_count(adj[i])) / total + gamma * lower;
      }
      if (n == 2) {
        uni_gamma[ctx[0]] = gamma;
        uni_has_gamma[ctx[0]] = 1;
      } else {
        const std::size_t ci = counted[n - 2].find(ctx);
        if (ci == static_cast<std::size_t>(-1)) throw Error(ErrorCode::kInvalidArgument, "missing context n-gram");
        gamma_of[n - 2][ci] = gamma;
        has_gamma[n - 2][ci] = 1;
      }
      begin = end;
    }
  }

  NGramLevel& u = levels[0];
  u.n = 1;
  for (std::size_t w = 0; w < V; ++w) {
    u.ids.push_back(static_cast<TokenId>(w));
    u.logp.push_back(std::log10(uni_prob[w]));
    u.bow.push_back(uni_has_gamma[w] ? std::log10(uni_gamma[w]) : 0.0);
    u.has_bow.push_back(uni_has_gamma[w]);
  }
  for (int n = 2; n <= order; ++n) {
    NGramLevel& lv = levels[n - 1];
    lv.n = n;
    const auto& grams = counted[n - 1].grams;
    for (std::size_t i = 0; i < grams.size(); ++i) {
      for (int k = 0; k < n; ++k) lv.ids.push_back(grams[i][k]);
      lv.logp.push_back(std::log10(prob[n - 1][i]));
      const bool hb = n < order && has_gamma[n - 1][i];
      lv.bow.push_back(hb ? std::log10(gamma_of[n - 1][i]) : 0.0);
      lv.has_bow.push_back(hb ? 1 : 0);
    }
  }
  return NGramModel(vocab, std::move(levels), std::move(discounts));
}

inline NGramModel train_ngram_from_text(const std::vector<std::string>& sentences, int order,
                                        const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(sentences.size());
  for (const auto& s : sentences) {
    if (has_visible_text(s)) seqs.push_back(tokenize(vocab, s));
  }
  return train_ngram(seqs, order, vocab);
}

/// Scores every document; the result does not depend on `threads`.
inline std::map<DocId, PerplexityScore> score_pool(const NGramModel& model, const Dataset& docs,
                                                   unsigned threads = 1) {
  const auto& all = docs.documents();
  std::vector<PerplexityScore> scores(all.size());
  parallel_for(all.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      scores[i] = model.perplexity(tokenize(model.vocab(), all[i].text), all[i].id);
    }
  });
  std::map<DocId, PerplexityScore> out;
  for (auto& s : scores) out.emplace(s.doc_id, s);
  return out;
}

inline std::map<DocId, double> perplexity_values(const std::map<DocId, PerplexityScore>& scores) {
  std::map<DocId, double> out;
  for (const auto& [id, s] : scores) out.emplace(id, s.ppl);
  return out;
}

// ---------------------------------------------------------------------------
// ARPA

inline std::string export_arpa_string(const NGramModel& m) {
  std::string out = "\\data\\\n";
  for (int n = 1; n <= m.order(); ++n) {
    out += "ngram " + std::to_string(n) + "=" + std::to_string(m.ngram_count(n)) + "\n";
  }
  for (int n = 1; n <= m.order(); ++n) {
    out += "\n\\" + std::to_string(n) + "-grams:\n";
    const NGramLevel& lv = m.level(n);
    for (std::size_t i = 0; i < lv.size(); ++i) {
      out += format_double(lv.logp[i]);
      out += '\t';
      bool first = true;
      for (TokenId id : lv.ngram(i)) {
        if (!first) out += ' ';
        out += m.vocab().token(id);
        first = false;
      }
      if (lv.has_bow[i]) {
        out += '\t';
        out += format_double(lv.bow[i]);
      }
      out += '\n';
    }
  }
  out += "\n\\end\\\n";
  return out;
}

inline void export_arpa(const NGramModel& m, const std::string& path) { write_file(path, export_arpa_string(m)); }

/// Log10 probability given to vocabulary items an ARPA file does not list
/// when it has no <unk> entry either.
inline constexpr double kArpaMissingLogProb = -99.0;

/// Parses ARPA text against a vocabulary. With `strict`, a token missing from
/// the vocabulary is an UnknownToken error; otherwise n-grams containing it
/// are dropped. Vocabulary items without a unigram inherit the <unk> entry.
inline NGramModel import_arpa_string(std::string_view text, const Vocabulary& vocab, bool strict = true) {
  const auto fail = [](std::size_t line, const std::string& why) {
    return Error(ErrorCode::kArpaFormat, "line " + std::to_string(line) + ": " + why, static_cast<std::int64_t>(line));
  };
  auto lines = split(text, '\n');
  std::size_t li = 0;
  const auto line_at = [&](std::size_t i) {
    std::string_view l = lines[i];
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    return l;
  };
  while (li < lines.size() && trim(line_at(li)).empty()) ++li;
  if (li >= lines.size() || trim(line_at(li)) != "\\data\\") throw fail(li + 1, "expected \\data\\ header");
  ++li;
  std::vector<std::size_t> declared;
  for (; li < lines.size(); ++li) {
    const auto l = trim(line_at(li));
    if (l.empty()) continue;
    if (!l.starts_with("ngram ")) break;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos) throw fail(li + 1, "malformed ngram count line");
    int n;
    std::size_t count;
    try {
      n = parse_int<int>(trim(l.substr(6, eq - 6)));
      count = parse_int<std::size_t>(trim(l.substr(eq + 1)));
    } catch (const Error&) {
      throw fail(li + 1, "malformed ngram count line");
    }
    if (n != static_cast<int>(declared.size()) + 1 || n > kMaxOrder) throw fail(li + 1, "unexpected order in header");
    declared.push_back(count);
  }
  if (declared.empty()) throw fail(li + 1, "no ngram counts declared");
  const int order = static_cast<int>(declared.size());

  std::vector<NGramLevel> levels(static_cast<std::size_t>(order));
  std::vector<std::vector<std::size_t>> source_line(static_cast<std::size_t>(order));
  for (int n = 1; n <= order; ++n) levels[n - 1].n = n;
  bool ended = false;
  int current = 0;
  std::size_t seen_in_section = 0;
  const auto close_section = [&](std::size_t line) {
    if (current > 0 && seen_in_section != declared[current - 1]) {
      throw fail(line, std::to_string(current) + "-gram count does not match header");
    }
  };
  for (; li < lines.size(); ++li) {
    const auto l = line_at(li);
    const auto tl = trim(l);
    if (tl.empty()) continue;
    if (tl == "\\end\\") {
      close_section(li + 1);
      ended = true;
      break;
    }
    if (tl.front() == '\\') {
      close_section(li + 1);
      const std::string expect = "\\" + std::to_string(current + 1) + "-grams:";
      if (tl != expect) throw fail(li + 1, "expected section " + expect);
      ++current;
      if (current > order) throw fail(li + 1, "section beyond declared order");
      seen_in_section = 0;
      continue;
    }
    if (current == 0) throw fail(li + 1, "entry outside a section");
    auto fields = split(tl, '\t');
    if (fields.size() < 2 || fields.size() > 3) throw fail(li + 1, "expected prob<TAB>ngram[<TAB>backoff]");
    double logp, bow = 0.0;
    try {
      logp = parse_double(trim(fields[0]));
      if (fields.size() == 3) bow = parse_double(trim(fields[2]));
    } catch (const Error&) {
      throw fail(li + 1, "malformed number");
    }
    std::vector<TokenId> ids;
    bool unknown = false;
    for (auto w : split(trim(fields[1]), ' ')) {
      if (w.empty()) continue;
      if (!vocab.contains(w)) {
        if (strict) {
          throw Error(ErrorCode::kUnknownToken, "line " + std::to_string(li + 1) + ": token '" + std::string(w) + "'",
                      static_cast<std::int64_t>(li + 1));
        }
        unknown = true;
      }
      ids.push_back(vocab.lookup(w));
    }
    if (static_cast<int>(ids.size()) != current) throw fail(li + 1, "wrong number of tokens");
    ++seen_in_section;
    if (unknown) continue;
    NGramLevel& lv = levels[current - 1];
    lv.ids.insert(lv.ids.end(), ids.begin(), ids.end());
    lv.logp.push_back(logp);
    lv.bow.push_back(bow);
    lv.has_bow.push_back(fields.size() == 3 ? 1 : 0);
    source_line[current - 1].push_back(li + 1);
  }
  if (!ended) throw fail(lines.size(), "missing \\end\\");
  if (current != order) throw fail(lines.size(), "missing n-gram sections");

  // Unigrams are stored densely in id order.
  NGramLevel uni;
  uni.n = 1;
  const std::size_t V = vocab.size();
  std::vector<std::int64_t> pos(V, -1);
  for (std::size_t i = 0; i < levels[0].size(); ++i) {
    const TokenId id = levels[0].ids[i];
    if (pos[id] >= 0) throw fail(source_line[0][i], "duplicate unigram");
    pos[id] = static_cast<std::int64_t>(i);
  }
  const double missing_logp = pos[vocab.unk_id()] >= 0 ? levels[0].logp[pos[vocab.unk_id()]] : kArpaMissingLogProb;
  for (std::size_t w = 0; w < V; ++w) {
    uni.ids.push_back(static_cast<TokenId>(w));
    if (pos[w] >= 0) {
      uni.logp.push_back(levels[0].logp[pos[w]]);
      uni.bow.push_back(levels[0].bow[pos[w]]);
      uni.has_bow.push_back(levels[0].has_bow[pos[w]]);
    } else {
      uni.logp.push_back(missing_logp);
      uni.bow.push_back(0.0);
      uni.has_bow.push_back(0);
    }
  }
  levels[0] = std::move(uni);

  // Queries assume every n-gram's context and suffix are themselves present.
  for (int n = 2; n <= order; ++n) {
    const NGramLevel& lv = levels[n - 1];
    if (n > 2) {
      std::unordered_map<std::uint64_t, char> lower;
      const NGramLevel& lo = levels[n - 2];
      for (std::size_t i = 0; i < lo.size(); ++i) lower.emplace(detail::fingerprint(lo.ngram(i)), 0);
      for (std::size_t i = 0; i < lv.size(); ++i) {
        const auto g = lv.ngram(i);
        if (!lower.contains(detail::fingerprint(g.first(n - 1))) || !lower.contains(detail::fingerprint(g.last(n - 1)))) {
          throw fail(source_line[n - 1][i], "n-gram whose context or suffix is missing");
        }
      }
    }
  }
  try {
    return NGramModel(vocab, std::move(levels));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kHashCollision) throw fail(0, "duplicate n-gram");
    throw;
  }
}

inline NGramModel import_arpa(const std::string& path, const Vocabulary& vocab, bool strict = true) {
  return import_arpa_string(read_file(path), vocab, strict);
}

// ---------------------------------------------------------------------------
// Binary cache
//
// Layout (little endian):
//   char[8]  magic "APLM1\0\0\0"
//   u32      format version (1)
//   u32      order
//   u32      vocabulary min_count
//   u64      vocabulary size, then per token: u32 length + bytes
//   per order: f64 d1, f64 d2, f64 d3, u8 fallback, u8 present
//   per order: u64 entry count, then per entry: u32 ids[n], f64 logp, f64 bow, u8 has_bow

inline constexpr char kBinaryMagic[8] = {'A', 'P', 'L', 'M', '1', 0, 0, 0};
inline constexpr std::uint32_t kBinaryVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "binary cache assumes a little-endian host");

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_bytes(std::string_view s) { buf_.append(s); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw Error(ErrorCode::kBinaryFormat, "truncated model file");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view get_bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::kBinaryFormat, "truncated model file");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string save_binary_string(const NGramModel& m) {
  detail::ByteWriter w;
  w.put_bytes(std::string_view(kBinaryMagic, sizeof(kBinaryMagic)));
  w.put<std::uint32_t>(kBinaryVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.order()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.vocab().min_count()));
  w.put<std::uint64_t>(m.vocab().size());
  for (const auto& t : m.vocab().tokens()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.size()));
    w.put_bytes(t);
  }
  for (int n = 1; n <= m.order(); ++n) {
    const bool present = m.discounts().size() == static_cast<std::size_t>(m.order());
    const Discounts d = present ? m.discounts()[n - 1] : Discounts{};
    w.put<double>(d.d1);
    w.put<double>(d.d2);
    w.put<double>(d.d3);
    w.put<std::uint8_t>(d.fallback ? 1 : 0);
    w.put<std::uint8_t>(present ? 1 : 0);
  }
  for (int n = 1; n <= m.order(); ++n) {
    const NGramLevel& lv = m.level(n);
    w.put<std::uint64_t>(lv.size());
    for (std::size_t i = 0; i < lv.size(); ++i) {
      for (TokenId id : lv.ngram(i)) w.put<std::uint32_t>(id);
      w.put<double>(lv.logp[i]);
      w.put<double>(lv.bow[i]);
      w.put<std::uint8_t>(lv.has_bow[i]);
    }
  }
  return w.data();
}

inline NGramModel load_binary_string(std::string_view data) {
  detail::ByteReader r(data);
  if (r.get_bytes(sizeof(kBinaryMagic)) != std::string_view(kBinaryMagic, sizeof(kBinaryMagic))) {
    throw Error(ErrorCode::kBinaryFormat, "bad magic; not an APLM1 model");
  }
  if (r.get<std::uint32_t>() != kBinaryVersion) throw Error(ErrorCode::kBinaryFormat, "unsupported model version");
  const auto order = static_cast<int>(r.get<std::uint32_t>());
  if (order < 1 || order > kMaxOrder) throw Error(ErrorCode::kBinaryFormat, "bad order");
  const auto min_count = static_cast<int>(r.get<std::uint32_t>());
  const auto vsize = r.get<std::uint64_t>();
  if (vsize < 3 || vsize > (1ULL << 32)) throw Error(ErrorCode::kBinaryFormat, "bad vocabulary size");
  std::vector<std::string> tokens;
  for (std::uint64_t i = 0; i < vsize; ++i) {
    const auto len = r.get<std::uint32_t>();
    tokens.emplace_back(r.get_bytes(len));
  }
  if (tokens[0] != Vocabulary::kUnkToken || tokens[1] != Vocabulary::kBosToken || tokens[2] != Vocabulary::kEosToken) {
    throw Error(ErrorCode::kBinaryFormat, "vocabulary specials missing");
  }
  Vocabulary vocab(std::vector<std::string>(tokens.begin() + 3, tokens.end()), min_count);
  std::vector<Discounts> discounts;
  bool have_discounts = true;
  for (int n = 1; n <= order; ++n) {
    Discounts d;
    d.d1 = r.get<double>();
    d.d2 = r.get<double>();
    d.d3 = r.get<double>();
    d.fallback = r.get<std::uint8_t>() != 0;
    have_discounts = r.get<std::uint8_t>() != 0 && have_discounts;
    discounts.push_back(d);
  }
  if (!have_discounts) discounts.clear();
  std::vector<NGramLevel> levels(static_cast<std::size_t>(order));
  for (int n = 1; n <= order; ++n) {
    NGramLevel& lv = levels[n - 1];
    lv.n = n;
    const auto count = r.get<std::uint64_t>();
    if (count > data.size()) throw Error(ErrorCode::kBinaryFormat, "bad entry count");
    for (std::uint64_t i = 0; i < count; ++i) {
      for (int k = 0; k < n; ++k) lv.ids.push_back(r.get<std::uint32_t>());
      lv.logp.push_back(r.get<double>());
      lv.bow.push_back(r.get<double>());
      lv.has_bow.push_back(r.get<std::uint8_t>());
    }
  }
  if (!r.done()) throw Error(ErrorCode::kBinaryFormat, "trailing bytes");
  try {
    return NGramModel(std::move(vocab), std::move(levels), std::move(discounts));
  } catch (const Error& e) {
    throw Error(ErrorCode::kBinaryFormat, e.what());
  }
}

inline void save_binary(const NGramModel& m, const std::string& path) { write_file(path, save_binary_string(m)); }

inline NGramModel load_binary(const std::string& path) { return load_binary_string(read_file(path)); }

}  // namespace activeprune
