#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <mutex>

#include "activeprune/http_transport.hpp"
#include "activeprune/quality.hpp"

using namespace activeprune;

namespace {

// Answers every request from a fixed body, optionally failing the first
// `fail_first` calls per distinct request.
class FakeTransport final : public Transport {
 public:
  explicit FakeTransport(std::string reply, int fail_first = 0) : reply_(std::move(reply)), fail_first_(fail_first) {}

  std::string post(const std::string& body) override {
    calls.fetch_add(1);
    {
      std::lock_guard<std::mutex> lock(mu_);
      last_body = body;
      if (failures_[body]++ < fail_first_) throw std::runtime_error("connection reset");
    }
    return reply_;
  }

  std::atomic<int> calls{0};
  std::string last_body;

 private:
  std::string reply_;
  int fail_first_;
  std::mutex mu_;
  std::map<std::string, int> failures_;
};

std::vector<Document> docs(int n) {
  std::vector<Document> out;
  for (int i = 0; i < n; ++i) out.push_back({static_cast<DocId>(i), "document number " + std::to_string(i), 0});
  return out;
}

RemoteScorer::Sleeper record_sleeps(std::vector<long>& into) {
  return [&into](std::chrono::milliseconds d) { into.push_back(static_cast<long>(d.count())); };
}

}  // namespace

TEST(TaskType, NamesAndCustom) {
  EXPECT_EQ(TaskType::translation().name(), "translation");
  EXPECT_EQ(TaskType::parse("topic").name(), "topic");
  EXPECT_EQ(TaskType::parse("ner").name(), "ner");
  EXPECT_EQ(TaskType::custom("ner").name(), "ner");
  EXPECT_THROW(TaskType::custom(""), Error);
}

TEST(Prompt, DeterministicAndNamesTask) {
  const auto tmpl = PromptTemplate::load_default();
  const Document d{1, "Das Haus ist blau. The house is blue.", std::nullopt};
  const auto a = build_prompt(d, TaskType::translation(), tmpl);
  EXPECT_EQ(a, build_prompt(d, TaskType::translation(), tmpl));
  EXPECT_NE(a.find("translation"), std::string::npos);
  EXPECT_NE(a.find(d.text), std::string::npos);
  EXPECT_NE(a.find("\"yes\" or \"no\""), std::string::npos);
  EXPECT_NE(build_prompt(d, TaskType::custom("ner"), tmpl).find("ner"), std::string::npos);
}

TEST(Prompt, SinglePassSubstitution) {
  const PromptTemplate t("[{TASK}] <{TEXT}>");
  EXPECT_EQ(t.render("x", "has {TASK} inside"), "[x] <has {TASK} inside>");
  EXPECT_THROW(PromptTemplate("no placeholders"), Error);
}

TEST(ScoreFromLogits, AnalyticFixtures) {
  EXPECT_DOUBLE_EQ(score_from_logits({{"yes", 0.0}, {"no", 0.0}}), 0.5);
  EXPECT_NEAR(score_from_logits({{"yes", std::log(3.0)}, {"no", 0.0}}), 0.75, 1e-12);
  const double big = score_from_logits({{"yes", 1000.0}, {"no", 0.0}});
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_NEAR(big, 1.0, 1e-12);
  EXPECT_NEAR(score_from_logits({{"yes", -1000.0}, {"no", 0.0}}), 0.0, 1e-12);
}

TEST(ScoreFromLogits, ShiftInvariant) {
  const std::map<std::string, double> base{{"yes", 1.3}, {"no", -0.4}, {"maybe", 0.2}};
  const double q = score_from_logits(base);
  for (double c : {-500.0, -3.0, 0.5, 700.0}) {
    auto shifted = base;
    for (auto& [k, v] : shifted) v += c;
    EXPECT_NEAR(score_from_logits(shifted), q, 1e-12) << c;
  }
}

TEST(ScoreFromLogits, Errors) {
  try {
    score_from_logits({{"no", 1.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingYesLogit);
  }
  try {
    score_from_logits({{"yes", 1.0}, {"no", NAN}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteLogit);
  }
  EXPECT_THROW(score_from_logits({{"yes", INFINITY}}), Error);
}

TEST(MockScore, AnalyticValues) {
  const Vocabulary v({"clean", "words", "only"}, 1);
  EXPECT_NEAR(mock_score({1, "clean words only", 0}, TaskType::topic(), v), logistic(4.0), 1e-15);
  EXPECT_NEAR(logistic(4.0), 0.982, 5e-4);
  EXPECT_NEAR(mock_score({2, "#@! ?? %%%", 0}, TaskType::topic(), v), logistic(-6.0), 1e-15);
  EXPECT_NEAR(logistic(-6.0), 0.0025, 5e-5);
  const Document d{3, "clean #x", 0};
  EXPECT_EQ(mock_score(d, TaskType::topic(), v), mock_score(d, TaskType::topic(), v));
}

TEST(ScoreDocuments, BookkeepingAndOrder) {
  MockScorer scorer(Vocabulary({"document", "number"}, 1));
  ScorerBudget budget{0, 5};
  EXPECT_TRUE(score_documents(scorer, {}, TaskType::topic(), budget).empty());
  EXPECT_EQ(budget.calls_made, 0u);
  const auto out = score_documents(scorer, docs(3), TaskType::topic(), budget);
  ASSERT_EQ(out.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(out[i].doc_id, static_cast<DocId>(i));
  EXPECT_EQ(budget.calls_made, 3u);
}

TEST(ScoreDocuments, BudgetCheckedBeforeAnyCall) {
  MockScorer scorer(Vocabulary{});
  ScorerBudget budget{0, 5};
  try {
    score_documents(scorer, docs(10), TaskType::topic(), budget);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBudgetExceeded);
  }
  EXPECT_EQ(scorer.calls(), 0u);
  EXPECT_EQ(budget.calls_made, 0u);
}

TEST(ScoreDocuments, ParallelResultsKeepInputOrder) {
  MockScorer scorer(Vocabulary({"document"}, 1));
  ScorerBudget a{0, 100}, b{0, 100};
  auto d = docs(64);
  d[7].text = "%%% $$$";
  const auto serial = score_documents(scorer, d, TaskType::topic(), a, 1);
  const auto parallel = score_documents(scorer, d, TaskType::topic(), b, 8);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].doc_id, parallel[i].doc_id);
    EXPECT_EQ(serial[i].q, parallel[i].q);
    EXPECT_GE(serial[i].q, 0.0);
    EXPECT_LE(serial[i].q, 1.0);
  }
  EXPECT_EQ(b.calls_made, 64u);
}

TEST(RemoteScorer, WireRequestAndLogitsResponse) {
  auto t = std::make_shared<FakeTransport>(R"({"logits": {"yes": 0.0, "no": 0.0}})");
  RemoteScorer scorer(t);
  const auto r = scorer.score({4, "some text", std::nullopt}, TaskType::sentiment());
  EXPECT_DOUBLE_EQ(r.q, 0.5);
  EXPECT_EQ(r.variant, ScoreVariant::kLogits);
  const auto req = nlohmann::json::parse(t->last_body);
  EXPECT_EQ(req["task"], "sentiment");
  EXPECT_EQ(req["text"], "some text");
  EXPECT_EQ(req["version"], 1);
}

TEST(RemoteScorer, DirectQWins) {
  const auto r = decode_score_response(R"({"q": 0.25, "logits": {"yes": 5, "no": 0}})");
  EXPECT_EQ(r.q, 0.25);
  EXPECT_EQ(r.variant, ScoreVariant::kDirect);
  EXPECT_THROW(decode_score_response(R"({"q": 1.5})"), Error);
  EXPECT_THROW(decode_score_response(R"({"other": 1})"), Error);
}

TEST(RemoteScorer, RetriesCountOnceOnSuccess) {
  auto t = std::make_shared<FakeTransport>(R"({"q": 0.9})", 2);
  std::vector<long> sleeps;
  RemoteScorer scorer(t, {}, std::nullopt, record_sleeps(sleeps));
  ScorerBudget budget{0, 3};
  const auto out = score_documents(scorer, docs(3), TaskType::topic(), budget);
  EXPECT_EQ(out.size(), 3u);
  EXPECT_EQ(budget.calls_made, 3u);
  EXPECT_EQ(t->calls.load(), 9);
  EXPECT_EQ(sleeps, (std::vector<long>{250, 500, 250, 500, 250, 500}));
}

TEST(RemoteScorer, GivesUpAfterThreeAttempts) {
  auto t = std::make_shared<FakeTransport>(R"({"q": 0.9})", 100);
  std::vector<long> sleeps;
  RemoteScorer scorer(t, {}, std::nullopt, record_sleeps(sleeps));
  ScorerBudget budget{0, 1};
  try {
    score_documents(scorer, docs(1), TaskType::topic(), budget);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kScorerUnavailable);
  }
  EXPECT_EQ(t->calls.load(), 3);
  EXPECT_EQ(budget.calls_made, 0u);
  EXPECT_EQ(sleeps, (std::vector<long>{250, 500}));
}

TEST(RemoteScorer, NeverMoreCallsThanBudgetWhenHealthy) {
  auto t = std::make_shared<FakeTransport>(R"({"logits": {"yes": 1, "no": 0}})");
  RemoteScorer scorer(t);
  ScorerBudget budget{0, 10};
  score_documents(scorer, docs(10), TaskType::topic(), budget, 4);
  EXPECT_EQ(t->calls.load(), 10);
  EXPECT_THROW(score_documents(scorer, docs(1), TaskType::topic(), budget), Error);
  EXPECT_EQ(t->calls.load(), 10);
}

TEST(RemoteScorer, BadLogitsAreNotRetried) {
  auto t = std::make_shared<FakeTransport>(R"({"logits": {"no": 0}})");
  RemoteScorer scorer(t);
  EXPECT_THROW(scorer.score({1, "x", std::nullopt}, TaskType::topic()), Error);
  EXPECT_EQ(t->calls.load(), 1);
}

TEST(HttpTransport, ParseUrl) {
  const auto u = parse_url("http://localhost:8080/v1/score");
  EXPECT_EQ(u.scheme_host_port, "http://localhost:8080");
  EXPECT_EQ(u.path, "/v1/score");
  EXPECT_EQ(parse_url("http://host").path, "/");
  EXPECT_THROW(parse_url("localhost:80/x"), Error);
}

TEST(HttpTransport, RoundTripAgainstLocalServer) {
  httplib::Server server;
  server.Post("/score", [](const httplib::Request& req, httplib::Response& res) {
    const auto j = nlohmann::json::parse(req.body);
    const double yes = j["text"] == "good" ? 2.0 : -2.0;
    res.set_content(nlohmann::json{{"logits", {{"yes", yes}, {"no", 0.0}}}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  RemoteScorer scorer(std::make_shared<HttpTransport>("http://127.0.0.1:" + std::to_string(port) + "/score"));
  EXPECT_NEAR(scorer.score({1, "good", std::nullopt}, TaskType::topic()).q, logistic(2.0), 1e-12);
  EXPECT_NEAR(scorer.score({2, "bad", std::nullopt}, TaskType::topic()).q, logistic(-2.0), 1e-12);
  server.stop();
  th.join();
}
