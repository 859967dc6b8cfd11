#pragma once

// Deterministic synthetic text: a Zipf-distributed shared vocabulary,
// per-class topical words, and injected noise documents made of symbol soup.
// Used by the tests, the acceptance suite and the benchmarks.

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "activeprune/corpus.hpp"
#include "activeprune/util.hpp"

namespace activeprune::synthetic {

/// Pronounceable pseudo-words, unique, 2-4 syllables.
inline std::vector<std::string> make_words(std::size_t count, std::uint64_t seed) {
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                            "s", "t", "v", "z", "br", "st", "tr", "pl", "gr", "sh"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ea"};
  Rng rng(seed);
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    const auto syllables = 2 + rng.below(3);
    for (std::uint64_t s = 0; s < syllables; ++s) {
      w += kOnsets[rng.below(std::size(kOnsets))];
      w += kVowels[rng.below(std::size(kVowels))];
    }
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

/// Sampler for ranks 0..n-1 with P(r) proportional to 1/(r+1)^s.
class Zipf {
 public:
  Zipf(std::size_t n, double s) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
      cdf_[r] = acc;
    }
    for (double& c : cdf_) c /= acc;
  }

  std::size_t operator()(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return it == cdf_.end() ? cdf_.size() - 1 : static_cast<std::size_t>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

struct TextGenerator {
  std::size_t shared_words = 3000;
  std::size_t class_words = 300;
  int classes = 2;
  double zipf_s = 1.0;
  /// Probability that a token is drawn from the document's class list.
  double class_rate = 0.3;
  std::size_t min_len = 10;
  std::size_t max_len = 30;
  std::uint64_t lexicon_seed = 7;

  struct Lexicon {
    std::vector<std::string> shared;
    std::vector<std::vector<std::string>> per_class;
  };

  Lexicon lexicon() const {
    const auto all = make_words(shared_words + class_words * static_cast<std::size_t>(classes), lexicon_seed);
    Lexicon lx;
    lx.shared.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(shared_words));
    for (int c = 0; c < classes; ++c) {
      const auto b = all.begin() + static_cast<std::ptrdiff_t>(shared_words + class_words * static_cast<std::size_t>(c));
      lx.per_class.emplace_back(b, b + static_cast<std::ptrdiff_t>(class_words));
    }
    return lx;
  }
};

class Generator {
 public:
  explicit Generator(TextGenerator params = {})
      : p_(params), lx_(p_.lexicon()), shared_(p_.shared_words, p_.zipf_s), topical_(p_.class_words, p_.zipf_s) {}

  std::string sentence(Rng& rng, int label, std::size_t len) const {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
      if (i) s += ' ';
      if (rng.uniform() < p_.class_rate) {
        s += lx_.per_class[static_cast<std::size_t>(label)][topical_(rng)];
      } else {
        s += lx_.shared[shared_(rng)];
      }
    }
    return s;
  }

  std::string sentence(Rng& rng, int label) const {
    return sentence(rng, label, p_.min_len + rng.below(p_.max_len - p_.min_len + 1));
  }

  /// Symbol soup: tokens of punctuation with the odd letter or digit.
  static std::string noise(Rng& rng, std::size_t len) {
    static constexpr std::string_view kSymbols = "#@!%$&*^~|<>{}[]+=?;:";
    static constexpr std::string_view kAlnum = "qxzj0123456789";
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
      if (i) s += ' ';
      const auto chars = 2 + rng.below(6);
      for (std::uint64_t c = 0; c < chars; ++c) {
        s += rng.uniform() < 0.8 ? kSymbols[rng.below(kSymbols.size())] : kAlnum[rng.below(kAlnum.size())];
      }
    }
    return s;
  }

  const TextGenerator& params() const noexcept { return p_; }

 private:
  TextGenerator p_;
  TextGenerator::Lexicon lx_;
  Zipf shared_;
  Zipf topical_;
};

struct LabeledPool {
  Dataset dataset;
  std::set<DocId> noise_ids;
};

/// Balanced labels; a `noise_fraction` share of documents are replaced by
/// symbol soup that keeps a random label. Ids are first_id, first_id+1, ...
inline LabeledPool make_classification_pool(const Generator& gen, std::size_t n, double noise_fraction,
                                            std::uint64_t seed, DocId first_id = 0, std::string name = "synthetic") {
  Rng rng(seed);
  const auto noise_count = static_cast<std::size_t>(round_count(noise_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<char> is_noise(n, 0);
  for (std::size_t i = 0; i < noise_count; ++i) is_noise[order[i]] = 1;

  std::vector<Document> docs;
  std::set<DocId> noise_ids;
  const int classes = gen.params().classes;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    Document d;
    d.id = first_id + i;
    d.label = label;
    if (is_noise[i]) {
      d.text = Generator::noise(rng, gen.params().min_len + rng.below(gen.params().max_len - gen.params().min_len + 1));
      noise_ids.insert(d.id);
    } else {
      d.text = gen.sentence(rng, label);
    }
    docs.push_back(std::move(d));
  }
  std::vector<std::string> names;
  for (int c = 0; c < classes; ++c) names.push_back("class" + std::to_string(c));
  return {Dataset(std::move(name), std::move(docs), std::move(names)), std::move(noise_ids)};
}

/// Clean reference sentences with classes drawn uniformly, for LM training.
inline std::vector<std::string> make_reference_corpus(const Generator& gen, std::size_t sentences, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(sentences);
  for (std::size_t i = 0; i < sentences; ++i) {
    out.push_back(gen.sentence(rng, static_cast<int>(rng.below(static_cast<std::uint64_t>(gen.params().classes)))));
  }
  return out;
}

}  // namespace activeprune::synthetic
