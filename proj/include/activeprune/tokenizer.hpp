#pragma once

// Word-level tokenization shared by the n-gram model and the classifier
// features: ASCII lowercasing, Unicode whitespace splitting, and leading or
// trailing ASCII punctuation peeled off into single-character tokens.

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "activeprune/error.hpp"
#include "activeprune/util.hpp"

namespace activeprune {

using TokenId = std::uint32_t;

namespace detail {

// Decodes one UTF-8 code point starting at s[i]; malformed bytes decode as
// themselves so tokenization never fails.
inline char32_t decode_utf8(std::string_view s, std::size_t i, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  const auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    len = 1;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) {
      len = 2;
      return static_cast<char32_t>(((b0 & 0x1F) << 6) | c1);
    }
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) {
      len = 3;
      return static_cast<char32_t>(((b0 & 0x0F) << 12) | (c1 << 6) | c2);
    }
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
      len = 4;
      return static_cast<char32_t>(((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3);
    }
  }
  len = 1;
  return b0;
}

constexpr bool is_unicode_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
         c == 0x3000;
}

constexpr bool is_ascii_punct(char c) {
  return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
         (c >= 0x7B && c <= 0x7E);
}

}  // namespace detail

/// Splits text into surface tokens (no vocabulary lookup).
inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  const auto flush_chunk = [&](std::string_view chunk) {
    if (chunk.empty()) return;
    std::size_t lo = 0, hi = chunk.size();
    while (lo < hi && detail::is_ascii_punct(chunk[lo])) ++lo;
    while (hi > lo && detail::is_ascii_punct(chunk[hi - 1])) --hi;
    for (std::size_t i = 0; i < lo; ++i) out.emplace_back(1, chunk[i]);
    if (lo < hi) {
      std::string word(chunk.substr(lo, hi - lo));
      for (char& c : word) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      }
      out.push_back(std::move(word));
    }
    for (std::size_t i = hi; i < chunk.size(); ++i) out.emplace_back(1, chunk[i]);
  };
  std::size_t start = 0, i = 0;
  while (i < text.size()) {
    std::size_t len = 1;
    const char32_t cp = detail::decode_utf8(text, i, len);
    if (detail::is_unicode_space(cp)) {
      flush_chunk(text.substr(start, i - start));
      start = i + len;
    }
    i += len;
  }
  flush_chunk(text.substr(start));
  return out;
}

class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kBosToken = "<s>";
  static constexpr std::string_view kEosToken = "</s>";

  Vocabulary() : Vocabulary(std::vector<std::string>{}, 1) {}

  /// Builds from regular tokens in id order; specials are prepended.
  Vocabulary(const std::vector<std::string>& regular_tokens, int min_count) : min_count_(min_count) {
    add(std::string(kUnkToken));
    add(std::string(kBosToken));
    add(std::string(kEosToken));
    for (const auto& t : regular_tokens) {
      if (!add(t)) throw Error(ErrorCode::kInvalidArgument, "duplicate vocabulary token '" + t + "'");
    }
  }

  TokenId unk_id() const noexcept { return kUnk; }
  TokenId bos_id() const noexcept { return kBos; }
  TokenId eos_id() const noexcept { return kEos; }
  int min_count() const noexcept { return min_count_; }
  std::size_t size() const noexcept { return id_to_token_.size(); }

  /// Id of a token, or unk_id() when absent.
  TokenId lookup(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const { return token_to_id_.contains(std::string(token)); }

  const std::string& token(TokenId id) const {
    if (id >= id_to_token_.size()) throw Error(ErrorCode::kInvalidArgument, "token id out of range");
    return id_to_token_[id];
  }

  const std::vector<std::string>& tokens() const noexcept { return id_to_token_; }

  /// Text form: a header line, then one token per line in id order.
  std::string serialize() const {
    std::string out = "#activeprune-vocab v1 min_count=" + std::to_string(min_count_) + "\n";
    for (const auto& t : id_to_token_) {
      out += t;
      out += '\n';
    }
    return out;
  }

  static Vocabulary deserialize(std::string_view text) {
    auto lines = split(text, '\n');
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    constexpr std::string_view kHeader = "#activeprune-vocab v1 min_count=";
    if (lines.empty() || !lines[0].starts_with(kHeader)) {
      throw Error(ErrorCode::kParse, "missing vocabulary header", 1);
    }
    const int min_count = parse_int<int>(trim(lines[0].substr(kHeader.size())));
    if (lines.size() < 4 || lines[1] != kUnkToken || lines[2] != kBosToken || lines[3] != kEosToken) {
      throw Error(ErrorCode::kParse, "vocabulary must start with <unk>, <s>, </s>", 2);
    }
    std::vector<std::string> regular;
    for (std::size_t i = 4; i < lines.size(); ++i) regular.emplace_back(lines[i]);
    return Vocabulary(regular, min_count);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.min_count_ == b.min_count_ && a.id_to_token_ == b.id_to_token_;
  }

 private:
  bool add(std::string token) {
    const auto id = static_cast<TokenId>(id_to_token_.size());
    if (!token_to_id_.emplace(token, id).second) return false;
    id_to_token_.push_back(std::move(token));
    return true;
  }

  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  int min_count_ = 1;
};

/// Collects every token seen at least `min_count` times. Ids are assigned by
/// descending frequency, ties broken by byte order of the token, so the
/// result depends only on the multiset of tokens.
template <typename Range>
Vocabulary build_vocabulary(const Range& corpus, int min_count) {
  if (min_count < 1) throw Error(ErrorCode::kInvalidArgument, "min_count must be >= 1");
  std::unordered_map<std::string, std::uint64_t> counts;
  bool any = false;
  for (const auto& text : corpus) {
    any = true;
    for (auto& tok : split_tokens(std::string_view(text))) ++counts[std::move(tok)];
  }
  if (!any) throw Error(ErrorCode::kEmptyCorpus, "cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= static_cast<std::uint64_t>(min_count) && tok != Vocabulary::kUnkToken &&
        tok != Vocabulary::kBosToken && tok != Vocabulary::kEosToken) {
      kept.emplace_back(tok, n);
    }
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, _] : kept) tokens.push_back(std::move(tok));
  return Vocabulary(tokens, min_count);
}

/// Token ids wrapped in BOS/EOS; unknown tokens map to unk.
inline std::vector<TokenId> tokenize(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> ids;
  ids.push_back(vocab.bos_id());
  for (const auto& tok : split_tokens(text)) ids.push_back(vocab.lookup(tok));
  ids.push_back(vocab.eos_id());
  return ids;
}

inline Vocabulary load_vocabulary(const std::string& path) { return Vocabulary::deserialize(read_file(path)); }

inline void save_vocabulary(const Vocabulary& v, const std::string& path) { write_file(path, v.serialize()); }

}  // namespace activeprune
