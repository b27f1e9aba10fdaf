#include <doctest.h>

#include <fstream>
#include <set>

#include "mdr/corpus.hpp"
#include "support/fixtures.hpp"

using namespace mdr;
using mdr::testing::TempDir;

namespace {

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& line : lines) out << line << "\n";
}

}  // namespace

TEST_SUITE_BEGIN("corpus");

TEST_CASE("load_corpus parses records in input order") {
  TempDir dir("corpus");
  write_lines(dir.file("c.jsonl"),
              {R"({"id":"a","title":"first doc","body":"alpha beta"})",
               R"({"id":"b","title":null,"body":"gamma delta"})",
               R"({"id":"c","body":"epsilon zeta"})"});
  auto docs = load_corpus(dir.file("c.jsonl"));
  REQUIRE(docs.size() == 3);
  CHECK(docs[0].doc_id == "a");
  CHECK(docs[1].doc_id == "b");
  CHECK(docs[2].doc_id == "c");
  CHECK(docs[0].title.has_value());
  CHECK_FALSE(docs[1].title.has_value());
  CHECK_FALSE(docs[2].title.has_value());
}

TEST_CASE("load_corpus rejects duplicate ids, naming the offender") {
  TempDir dir("corpus");
  write_lines(dir.file("c.jsonl"), {R"({"id":"a","body":"alpha"})",
                                    R"({"id":"a","body":"beta"})"});
  CHECK_THROWS_WITH_AS(load_corpus(dir.file("c.jsonl")),
                       doctest::Contains("\"a\""), std::runtime_error);
}

TEST_CASE("load_corpus reports the line number of malformed records") {
  TempDir dir("corpus");
  write_lines(dir.file("c.jsonl"),
              {R"({"id":"a","body":"alpha"})", "not json at all"});
  CHECK_THROWS_WITH_AS(load_corpus(dir.file("c.jsonl")), doctest::Contains(":2"),
                       std::runtime_error);
}

TEST_CASE("load_corpus rejects empty bodies and missing files") {
  TempDir dir("corpus");
  write_lines(dir.file("c.jsonl"), {R"({"id":"a","body":""})"});
  CHECK_THROWS(load_corpus(dir.file("c.jsonl")));
  CHECK_THROWS(load_corpus(dir.file("nope.jsonl")));
}

TEST_CASE("build_vocabulary counts words, code ranges, and specials") {
  std::vector<Document> docs = {{"d", std::nullopt, "dog runs"}};
  Vocabulary vocab = build_vocabulary(docs, {}, {2, 2});
  // 4 specials + 2+2 code ids + 2 words
  CHECK(vocab.size() == 10);
  CHECK(vocab.num_words() == 2);
  CHECK(vocab.num_levels() == 2);
  CHECK(vocab.is_word(vocab.word_id("dog")));
  CHECK(vocab.is_word(vocab.word_id("runs")));
  CHECK(vocab.code_id(0, 0) == Vocabulary::kNumSpecials);
  CHECK(vocab.code_id(1, 1) == Vocabulary::kNumSpecials + 3);
  CHECK(vocab.code_of(vocab.code_id(1, 0)) == std::pair<int, int>{1, 0});
  // code range disjoint from words
  CHECK_FALSE(vocab.is_word(vocab.code_id(0, 1)));
  CHECK_FALSE(vocab.is_code(vocab.word_id("dog")));
}

TEST_CASE("linguistic-mode vocabulary has no code range and reserves ordinals") {
  std::vector<Document> docs = {{"d", std::nullopt, "dog runs"}};
  Vocabulary vocab = build_vocabulary(docs, {}, {});
  CHECK(vocab.num_levels() == 0);
  CHECK(vocab.find_word("2").has_value());
  CHECK(vocab.find_word("99").has_value());
}

TEST_CASE("query-only tokens still enter the vocabulary") {
  std::vector<Document> docs = {{"d", std::nullopt, "dog runs"}};
  std::vector<Query> queries = {{"q", "where is the kennel"}};
  Vocabulary vocab = build_vocabulary(docs, queries, {2, 2});
  CHECK(vocab.find_word("kennel").has_value());
}

TEST_CASE("tokenize lowercases, strips punctuation, maps OOV to unk") {
  Vocabulary vocab = build_vocabulary({{"d", std::nullopt, "dog runs"}}, {}, {});
  TokenSeq ids = tokenize("Dog runs.", vocab);
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == vocab.word_id("dog"));
  CHECK(ids[1] == vocab.word_id("runs"));
  CHECK(tokenize("zyzzyva", vocab) == TokenSeq{Vocabulary::kUnk});
  CHECK(tokenize("", vocab).empty());
}

TEST_CASE("tokenize is idempotent on detokenized in-vocab text") {
  Vocabulary vocab = testing::tiny_vocab();
  for (const char* text : {"alpha bravo charlie", "kilo lima", "echo echo echo"}) {
    TokenSeq once = tokenize(text, vocab);
    TokenSeq twice = tokenize(detokenize(once, vocab), vocab);
    CHECK(once == twice);
  }
}

TEST_CASE("pseudo queries from a 4-token body are n identical copies") {
  Document doc{"d", std::nullopt, "alpha bravo charlie delta"};
  auto queries = generate_pseudo_queries(doc, 3, 9);
  REQUIRE(queries.size() == 3);
  for (const Query& q : queries) CHECK(q.text == "alpha bravo charlie delta");
}

TEST_CASE("pseudo queries: short bodies yield the single whole-body query") {
  Document doc{"d", std::nullopt, "alpha bravo"};
  auto queries = generate_pseudo_queries(doc, 5, 9);
  REQUIRE(queries.size() == 1);
  CHECK(queries[0].text == "alpha bravo");
}

TEST_CASE("pseudo queries are deterministic and verbatim body spans") {
  Document doc{"d", std::nullopt,
               "alpha bravo charlie delta echo foxtrot golf hotel india juliet "
               "kilo lima mike november oscar papa"};
  auto a = generate_pseudo_queries(doc, 10, 42);
  auto b = generate_pseudo_queries(doc, 10, 42);
  REQUIRE(a.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].text == b[i].text);
    CHECK(a[i].query_id == b[i].query_id);
    auto words = split_words(a[i].text);
    CHECK(words.size() >= 4);
    CHECK(words.size() <= 12);
    const std::string padded = " " + doc.body + " ";
    CHECK(padded.find(" " + a[i].text + " ") != std::string::npos);
  }
  auto c = generate_pseudo_queries(doc, 10, 43);
  bool any_different = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].text != c[i].text) any_different = true;
  }
  CHECK(any_different);
}

TEST_CASE("split_dataset keeps every document covered") {
  std::vector<RelevancePair> pairs;
  for (int d = 0; d < 10; ++d) {
    for (int q = 0; q < 10; ++q) {
      pairs.push_back({"q" + std::to_string(d) + "_" + std::to_string(q),
                       "doc" + std::to_string(d)});
    }
  }
  DatasetSplit split = split_dataset(pairs, 0.2, 7);
  CHECK(split.train.size() == 80);
  CHECK(split.test.size() == 20);

  std::set<std::string> train_docs;
  for (const auto& p : split.train) train_docs.insert(p.doc_id);
  CHECK(train_docs.size() == 10);

  // disjoint and exhaustive
  std::set<std::string> train_q, test_q;
  for (const auto& p : split.train) train_q.insert(p.query_id);
  for (const auto& p : split.test) test_q.insert(p.query_id);
  CHECK(train_q.size() + test_q.size() == pairs.size());
  for (const auto& q : test_q) CHECK(train_q.count(q) == 0);
}

TEST_CASE("split_dataset errors when coverage is impossible") {
  std::vector<RelevancePair> pairs;
  for (int d = 0; d < 6; ++d) {
    pairs.push_back({"q" + std::to_string(d), "doc" + std::to_string(d)});
  }
  CHECK_THROWS_WITH_AS(split_dataset(pairs, 0.5, 7), doctest::Contains("doc0"),
                       std::runtime_error);
  CHECK_THROWS_AS(split_dataset(pairs, 1.5, 7), std::invalid_argument);
}

TEST_CASE("split_dataset is deterministic given the seed") {
  std::vector<RelevancePair> pairs;
  for (int i = 0; i < 50; ++i) {
    pairs.push_back({"q" + std::to_string(i), "doc" + std::to_string(i % 5)});
  }
  DatasetSplit a = split_dataset(pairs, 0.3, 11);
  DatasetSplit b = split_dataset(pairs, 0.3, 11);
  REQUIRE(a.test.size() == b.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    CHECK(a.test[i].query_id == b.test[i].query_id);
  }
}

TEST_CASE("vocabulary round-trips through its file form") {
  TempDir dir("vocab");
  Vocabulary vocab = testing::tiny_vocab({4, 8});
  save_vocabulary(vocab, dir.file("vocab.tsv"));
  Vocabulary loaded = load_vocabulary(dir.file("vocab.tsv"));
  CHECK(loaded.size() == vocab.size());
  CHECK(loaded.codebook_sizes() == vocab.codebook_sizes());
  CHECK(loaded.word_id("alpha") == vocab.word_id("alpha"));
  CHECK(loaded.code_id(1, 3) == vocab.code_id(1, 3));
}

TEST_SUITE_END();
