#pragma once

// LLM data-quality scores: q(x) is the softmax probability of the "yes"
// token for a prompt asking whether x belongs in the training set.

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

#include "activeprune/corpus.hpp"
#include "activeprune/error.hpp"
#include "activeprune/tokenizer.hpp"
#include "activeprune/util.hpp"

#ifndef ACTIVEPRUNE_DATA_DIR
#define ACTIVEPRUNE_DATA_DIR "share"
#endif

namespace activeprune {

class TaskType {
 public:
  enum class Kind { kTranslation, kSentiment, kTopic, kSummarization, kCustom };

  static TaskType translation() { return TaskType(Kind::kTranslation, "translation"); }
  static TaskType sentiment() { return TaskType(Kind::kSentiment, "sentiment"); }
  static TaskType topic() { return TaskType(Kind::kTopic, "topic"); }
  static TaskType summarization() { return TaskType(Kind::kSummarization, "summarization"); }
  static TaskType custom(std::string name) {
    if (trim(name).empty()) throw Error(ErrorCode::kInvalidArgument, "custom task name must be non-empty");
    return TaskType(Kind::kCustom, std::move(name));
  }

  /// Known names map to their kind; anything else becomes a custom task.
  static TaskType parse(const std::string& name) {
    if (name == "translation") return translation();
    if (name == "sentiment") return sentiment();
    if (name == "topic") return topic();
    if (name == "summarization") return summarization();
    return custom(name);
  }

  Kind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }

  friend bool operator==(const TaskType&, const TaskType&) = default;

 private:
  TaskType(Kind kind, std::string name) : kind_(kind), name_(std::move(name)) {}

  Kind kind_;
  std::string name_;
};

struct QualityScore {
  DocId doc_id = 0;
  double q = 0.0;

  friend bool operator==(const QualityScore&, const QualityScore&) = default;
};

struct ScorerBudget {
  std::uint64_t calls_made = 0;
  std::uint64_t calls_allowed = 0;

  std::uint64_t remaining() const noexcept { return calls_allowed > calls_made ? calls_allowed - calls_made : 0; }
};

// ---------------------------------------------------------------------------
// Prompts

/// A prompt template with {TASK} and {TEXT} placeholders, loaded from a
/// versioned text file.
class PromptTemplate {
 public:
  explicit PromptTemplate(std::string text) : text_(std::move(text)) {
    if (text_.find("{TEXT}") == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "prompt template lacks a {TEXT} placeholder");
    }
  }

  static PromptTemplate load(const std::string& path) { return PromptTemplate(read_file(path)); }

  static std::string default_path() { return std::string(ACTIVEPRUNE_DATA_DIR) + "/prompts/quality_v1.txt"; }

  static PromptTemplate load_default() { return load(default_path()); }

  /// Single left-to-right pass, so placeholder-like text inside the document
  /// is copied verbatim.
  std::string render(std::string_view task, std::string_view text) const {
    std::string out;
    out.reserve(text_.size() + text.size() + 2 * task.size());
    std::size_t i = 0;
    while (i < text_.size()) {
      if (text_.compare(i, 6, "{TASK}") == 0) {
        out += task;
        i += 6;
      } else if (text_.compare(i, 6, "{TEXT}") == 0) {
        out += text;
        i += 6;
      } else {
        out += text_[i++];
      }
    }
    return out;
  }

  const std::string& text() const noexcept { return text_; }

 private:
  std::string text_;
};

inline std::string build_prompt(const Document& doc, const TaskType& task, const PromptTemplate& tmpl) {
  if (!has_visible_text(doc.text)) throw Error(ErrorCode::kInvalidArgument, "document text is empty");
  return tmpl.render(task.name(), doc.text);
}

// ---------------------------------------------------------------------------
// Score math

/// Softmax probability of the "yes" entry, computed with max subtraction.
inline double score_from_logits(const std::map<std::string, double>& logits) {
  auto yes = logits.find("yes");
  if (yes == logits.end()) throw Error(ErrorCode::kMissingYesLogit, "logits have no \"yes\" entry");
  double max_logit = -std::numeric_limits<double>::infinity();
  for (const auto& [tok, z] : logits) {
    if (!std::isfinite(z)) throw Error(ErrorCode::kNonFiniteLogit, "logit for '" + tok + "' is not finite");
    max_logit = std::max(max_logit, z);
  }
  double denom = 0.0;
  for (const auto& [tok, z] : logits) denom += std::exp(z - max_logit);
  return std::exp(yes->second - max_logit) / denom;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline constexpr double kMockCleanWeight = 4.0;
inline constexpr double kMockNoiseWeight = 6.0;

/// Deterministic stand-in for an LLM judge: sigma(4 * clean - 6 * noise),
/// where clean is the fraction of tokens found in the vocabulary and noise the
/// fraction of non-whitespace characters that are ASCII non-alphanumerics.
/// The task does not influence the score.
inline double mock_score(const Document& doc, const TaskType& /*task*/, const Vocabulary& vocab) {
  const auto tokens = split_tokens(doc.text);
  std::size_t known = 0;
  for (const auto& t : tokens) known += vocab.contains(t) ? 1 : 0;
  const double clean = tokens.empty() ? 0.0 : static_cast<double>(known) / static_cast<double>(tokens.size());
  std::size_t visible = 0, noisy = 0;
  const std::string_view text = doc.text;
  for (std::size_t i = 0; i < text.size();) {
    std::size_t len = 1;
    const char32_t cp = detail::decode_utf8(text, i, len);
    i += len;
    if (detail::is_unicode_space(cp)) continue;
    ++visible;
    const bool alnum = (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    if (cp < 0x80 && !alnum) ++noisy;
  }
  const double noise = visible == 0 ? 0.0 : static_cast<double>(noisy) / static_cast<double>(visible);
  return logistic(kMockCleanWeight * clean - kMockNoiseWeight * noise);
}

// ---------------------------------------------------------------------------
// Scorers

/// How a score was normalized: over whatever logits the host returned, or
/// taken directly from a host-computed q.
enum class ScoreVariant { kMock, kLogits, kDirect };

inline std::string_view to_string(ScoreVariant v) {
  switch (v) {
    case ScoreVariant::kMock: return "mock";
    case ScoreVariant::kLogits: return "logits";
    case ScoreVariant::kDirect: return "direct_q";
  }
  return "unknown";
}

struct ScoreResult {
  double q = 0.0;
  ScoreVariant variant = ScoreVariant::kMock;
  std::size_t logit_count = 0;
};

/// Implementations must allow concurrent score() calls.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual ScoreResult score(const Document& doc, const TaskType& task) = 0;
  virtual std::string describe() const = 0;
};

class MockScorer final : public Scorer {
 public:
  explicit MockScorer(Vocabulary vocab) : vocab_(std::move(vocab)) {}

  ScoreResult score(const Document& doc, const TaskType& task) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return {mock_score(doc, task, vocab_), ScoreVariant::kMock, 0};
  }

  std::string describe() const override { return "mock"; }

  std::uint64_t calls() const noexcept { return calls_.load(); }

 private:
  Vocabulary vocab_;
  std::atomic<std::uint64_t> calls_{0};
};

/// Carries one request body to a scoring host and returns the response body.
/// Throws on transport failure.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string post(const std::string& body) = 0;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
};

inline constexpr int kWireVersion = 1;

/// Request body: {"task", "text", "version": 1, "prompt"}. The prompt is the
/// rendered template, for hosts that do not build their own.
inline std::string encode_score_request(const Document& doc, const TaskType& task, const PromptTemplate* tmpl) {
  nlohmann::json req = {{"task", task.name()}, {"text", doc.text}, {"version", kWireVersion}};
  if (tmpl != nullptr) req["prompt"] = build_prompt(doc, task, *tmpl);
  return req.dump();
}

/// Accepts {"logits": {token: z, ...}} or {"q": value}; "q" wins when both
/// are present.
inline ScoreResult decode_score_response(std::string_view body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kParse, "scorer response is not a JSON object");
  if (j.contains("q")) {
    if (!j["q"].is_number()) throw Error(ErrorCode::kParse, "\"q\" must be a number");
    const double q = j["q"].get<double>();
    if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::kParse, "\"q\" outside [0,1]");
    return {q, ScoreVariant::kDirect, 0};
  }
  if (j.contains("logits") && j["logits"].is_object()) {
    std::map<std::string, double> logits;
    for (const auto& [tok, z] : j["logits"].items()) {
      if (!z.is_number()) throw Error(ErrorCode::kNonFiniteLogit, "logit for '" + tok + "' is not a number");
      logits.emplace(tok, z.get<double>());
    }
    return {score_from_logits(logits), ScoreVariant::kLogits, logits.size()};
  }
  throw Error(ErrorCode::kParse, "scorer response has neither \"q\" nor \"logits\"");
}

/// Scores through a remote host with bounded retries and exponential backoff.
class RemoteScorer final : public Scorer {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  RemoteScorer(std::shared_ptr<Transport> transport, RetryPolicy policy = {},
               std::optional<PromptTemplate> tmpl = std::nullopt,
               Sleeper sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })
      : transport_(std::move(transport)), policy_(policy), template_(std::move(tmpl)), sleep_(std::move(sleeper)) {}

  ScoreResult score(const Document& doc, const TaskType& task) override {
    const std::string body = encode_score_request(doc, task, template_ ? &*template_ : nullptr);
    auto backoff = policy_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= policy_.attempts; ++attempt) {
      try {
        return decode_score_response(transport_->post(body));
      } catch (const Error& e) {
        // Malformed logits are a host bug, not a transient failure.
        if (e.code() == ErrorCode::kMissingYesLogit || e.code() == ErrorCode::kNonFiniteLogit) throw;
        last_error = e.what();
      } catch (const std::exception& e) {
        last_error = e.what();
      }
      if (attempt < policy_.attempts) {
        sleep_(backoff);
        backoff *= 2;
      }
    }
    throw Error(ErrorCode::kScorerUnavailable,
                "document " + std::to_string(doc.id) + " failed after " + std::to_string(policy_.attempts) +
                    " attempts: " + last_error);
  }

  std::string describe() const override { return "remote"; }

 private:
  std::shared_ptr<Transport> transport_;
  RetryPolicy policy_;
  std::optional<PromptTemplate> template_;
  Sleeper sleep_;
};

struct ScoringReport {
  std::vector<QualityScore> scores;
  std::map<std::string, std::uint64_t> variants;  // variant name -> count
};

/// Scores `docs` in order with up to `parallelism` concurrent calls. The
/// whole batch is checked against the budget before any call is made.
inline ScoringReport score_documents_report(Scorer& scorer, const std::vector<Document>& docs, const TaskType& task,
                                            ScorerBudget& budget, unsigned parallelism = 1) {
  if (docs.size() > budget.remaining()) {
    throw Error(ErrorCode::kBudgetExceeded, std::to_string(docs.size()) + " documents but only " +
                                                std::to_string(budget.remaining()) + " scorer calls left");
  }
  ScoringReport report;
  report.scores.resize(docs.size());
  std::vector<ScoreVariant> variants(docs.size());
  std::atomic<std::uint64_t> done{0};
  try {
    parallel_for(docs.size(), parallelism, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const ScoreResult r = scorer.score(docs[i], task);
        if (!(r.q >= 0.0 && r.q <= 1.0)) throw Error(ErrorCode::kParse, "scorer returned q outside [0,1]");
        report.scores[i] = QualityScore{docs[i].id, r.q};
        variants[i] = r.variant;
        done.fetch_add(1, std::memory_order_relaxed);
      }
    });
  } catch (...) {
    budget.calls_made += done.load();
    throw;
  }
  budget.calls_made += done.load();
  for (ScoreVariant v : variants) ++report.variants[std::string(to_string(v))];
  return report;
}

inline std::vector<QualityScore> score_documents(Scorer& scorer, const std::vector<Document>& docs,
                                                 const TaskType& task, ScorerBudget& budget,
                                                 unsigned parallelism = 1) {
  return score_documents_report(scorer, docs, task, budget, parallelism).scores;
}

}  // namespace activeprune
