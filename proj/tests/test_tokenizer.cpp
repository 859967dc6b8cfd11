#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "activeprune/synthetic.hpp"
#include "activeprune/tokenizer.hpp"

using namespace activeprune;

namespace {

const std::string kDataDir = ACTIVEPRUNE_TEST_DATA_DIR;

std::vector<std::string> regular_tokens(const Vocabulary& v) {
  return {v.tokens().begin() + 3, v.tokens().end()};
}

}  // namespace

TEST(SplitTokens, LowercasesAndSplitsEdgePunctuation) {
  EXPECT_EQ(split_tokens("Hello, World!"), (std::vector<std::string>{"hello", ",", "world", "!"}));
  EXPECT_EQ(split_tokens("  (a)  b-c  "), (std::vector<std::string>{"(", "a", ")", "b-c"}));
  EXPECT_EQ(split_tokens("..."), (std::vector<std::string>{".", ".", "."}));
  EXPECT_EQ(split_tokens("ÀB"), (std::vector<std::string>{"Àb"}));
  EXPECT_EQ(split_tokens("a\xC2\xA0" "b\xE3\x80\x80" "c"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(split_tokens(" \t\n").empty());
}

TEST(BuildVocabulary, SpecialsFirstThenFrequency) {
  const auto v = build_vocabulary(std::vector<std::string>{"a b a"}, 1);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.token(v.unk_id()), "<unk>");
  EXPECT_EQ(v.token(v.bos_id()), "<s>");
  EXPECT_EQ(v.token(v.eos_id()), "</s>");
  EXPECT_EQ(regular_tokens(v), (std::vector<std::string>{"a", "b"}));
}

TEST(BuildVocabulary, MinCountThreshold) {
  const auto v = build_vocabulary(std::vector<std::string>{"a b a"}, 2);
  EXPECT_EQ(regular_tokens(v), (std::vector<std::string>{"a"}));
  EXPECT_EQ(v.lookup("b"), v.unk_id());
  EXPECT_EQ(v.min_count(), 2);
}

TEST(BuildVocabulary, Errors) {
  try {
    build_vocabulary(std::vector<std::string>{}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyCorpus);
  }
  EXPECT_THROW(build_vocabulary(std::vector<std::string>{"a"}, 0), Error);
}

TEST(BuildVocabulary, DeterministicOnLargeCorpus) {
  const synthetic::Generator gen;
  const auto corpus = synthetic::make_reference_corpus(gen, 50000, 3);  // ~1M tokens
  const auto a = build_vocabulary(corpus, 1).serialize();
  const auto b = build_vocabulary(corpus, 1).serialize();
  EXPECT_EQ(a, b);
  std::vector<std::string> reversed(corpus.rbegin(), corpus.rend());
  EXPECT_EQ(build_vocabulary(reversed, 1).serialize(), a);
}

TEST(Tokenize, WrapsAndMapsUnknown) {
  const auto v = build_vocabulary(std::vector<std::string>{"a b"}, 1);
  const auto a = v.lookup("a"), b = v.lookup("b");
  EXPECT_EQ(tokenize(v, "a b"), (std::vector<TokenId>{v.bos_id(), a, b, v.eos_id()}));
  const auto only_a = build_vocabulary(std::vector<std::string>{"a"}, 1);
  EXPECT_EQ(tokenize(only_a, "a z"),
            (std::vector<TokenId>{only_a.bos_id(), only_a.lookup("a"), only_a.unk_id(), only_a.eos_id()}));
}

TEST(Tokenize, IdsBelowVocabularySize) {
  const synthetic::Generator gen;
  const auto corpus = synthetic::make_reference_corpus(gen, 200, 4);
  const auto v = build_vocabulary(corpus, 2);
  for (const auto& s : corpus) {
    for (auto id : tokenize(v, s + " ##unseen##")) EXPECT_LT(id, v.size());
  }
}

TEST(Vocabulary, SerializeRoundTrip) {
  const auto v = build_vocabulary(std::vector<std::string>{"x y z x, ¿qué?"}, 1);
  const auto text = v.serialize();
  EXPECT_EQ(text.rfind("#activeprune-vocab v1 min_count=1\n<unk>\n<s>\n</s>\n", 0), 0u);
  EXPECT_EQ(Vocabulary::deserialize(text), v);
  const auto path = (std::filesystem::temp_directory_path() / "ap_vocab.txt").string();
  save_vocabulary(v, path);
  EXPECT_EQ(load_vocabulary(path), v);
  std::filesystem::remove(path);
  EXPECT_THROW(Vocabulary::deserialize("a\nb\n"), Error);
}

// The fixture's ids are frozen in tokenize_golden.txt. Set
// ACTIVEPRUNE_REGENERATE_GOLDEN=1 to rewrite it after a deliberate change.
TEST(Tokenize, GoldenFile) {
  const auto fixture = read_file(kDataDir + "/tokenize_fixture.txt");
  std::vector<std::string> lines;
  for (auto l : split(fixture, '\n')) {
    if (!l.empty()) lines.emplace_back(l);
  }
  const auto vocab = build_vocabulary(lines, 1);
  std::string actual = vocab.serialize() + "---\n";
  for (const auto& l : lines) {
    bool first = true;
    for (auto id : tokenize(vocab, l)) {
      actual += (first ? "" : " ") + std::to_string(id);
      first = false;
    }
    actual += '\n';
  }
  const std::string golden_path = kDataDir + "/tokenize_golden.txt";
  if (std::getenv("ACTIVEPRUNE_REGENERATE_GOLDEN") != nullptr) write_file(golden_path, actual);
  EXPECT_EQ(actual, read_file(golden_path));
}
