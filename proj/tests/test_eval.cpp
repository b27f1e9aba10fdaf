#include <doctest.h>

#include <algorithm>
#include <random>

#include "mdr/eval.hpp"
#include "support/fixtures.hpp"

using namespace mdr;

namespace {

RankedResult ranked(const std::string& qid, std::vector<std::string> docs) {
  return {qid, std::move(docs), 0.0};
}

// Six memorized (query, docid) pairs acting as a miniature retrieval setup.
struct MiniRetrieval {
  testing::MemorizedModel model;
  DocIdRegistry registry{DocIdRegistry::Kind::linguistic, 3, {}, 0};
  std::vector<EvalQuery> queries;
  Qrels qrels;
};

const MiniRetrieval& mini_retrieval() {
  static const MiniRetrieval fixture = [] {
    MiniRetrieval f;
    std::vector<std::pair<std::string, TokenSeq>> pairs = {
        {"alpha bravo", {10, 11, 12}},  {"charlie delta", {11, 12, 13}},
        {"echo foxtrot", {12, 13, 14}}, {"golf hotel", {13, 14, 15}},
        {"india juliet", {14, 15, 16}}, {"kilo lima", {15, 16, 17}}};
    f.model = testing::memorize_pairs(pairs, 3, 400);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::string doc = "doc" + std::to_string(i);
      f.registry.insert(doc, pairs[i].second);
      const std::string qid = "q" + std::to_string(i);
      f.queries.push_back({qid, f.model.examples[i].condition});
      f.qrels[qid] = {doc};
    }
    return f;
  }();
  return fixture;
}

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("recall and reciprocal rank follow their definitions") {
  Qrels qrels = {{"q1", {"d1"}}, {"q2", {"d2"}}, {"q3", {"d3"}}};

  // relevant at rank 1 for all queries
  std::vector<RankedResult> perfect = {ranked("q1", {"d1"}),
                                       ranked("q2", {"d2", "x"}),
                                       ranked("q3", {"d3", "x", "y"})};
  CHECK(recall_at_k(perfect, qrels, 1) == 1.0);
  CHECK(mrr_at_k(perfect, qrels) == 1.0);

  // relevant at rank 3 counts for R@5, not R@1
  std::vector<RankedResult> third = {ranked("q1", {"x", "y", "d1"})};
  CHECK(recall_at_k(third, qrels, 1) == 0.0);
  CHECK(recall_at_k(third, qrels, 5) == 1.0);
  CHECK(mrr_at_k(third, qrels) == doctest::Approx(1.0 / 3));

  // rank 11 is out of the MRR@10 window
  std::vector<std::string> eleven(10, "x");
  for (int i = 0; i < 10; ++i) eleven[i] = "x" + std::to_string(i);
  eleven.push_back("d1");
  std::vector<RankedResult> deep = {ranked("q1", eleven)};
  CHECK(mrr_at_k(deep, qrels) == 0.0);

  // ranks 1 and 2 average to 0.75
  std::vector<RankedResult> mixed = {ranked("q1", {"d1"}),
                                     ranked("q2", {"x", "d2"})};
  CHECK(mrr_at_k(mixed, qrels) == doctest::Approx(0.75));

  // misses and empty lists contribute zero
  std::vector<RankedResult> missing = {ranked("q1", {"x"}), ranked("q2", {})};
  CHECK(recall_at_k(missing, qrels, 10) == 0.0);
  CHECK(mrr_at_k(missing, qrels) == 0.0);
}

TEST_CASE("metrics are monotone in k, bounded, and order-invariant") {
  Qrels qrels;
  std::vector<RankedResult> results;
  std::mt19937_64 rng(5);
  for (int q = 0; q < 40; ++q) {
    const std::string qid = "q" + std::to_string(q);
    qrels[qid] = {"rel" + std::to_string(q)};
    std::vector<std::string> docs;
    const int rank = int(rng() % 14);  // sometimes beyond the list
    for (int i = 0; i < 12; ++i) {
      docs.push_back(i == rank ? "rel" + std::to_string(q)
                               : "noise" + std::to_string(100 * q + i));
    }
    results.push_back(ranked(qid, docs));
  }

  double prev = 0.0;
  for (int k : {1, 2, 5, 10, 12}) {
    const double r = recall_at_k(results, qrels, k);
    CHECK(r >= prev);
    prev = r;
  }
  const double mrr = mrr_at_k(results, qrels);
  CHECK(mrr >= 0.0);
  CHECK(mrr <= recall_at_k(results, qrels, 10));

  std::vector<RankedResult> shuffled = results;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(recall_at_k(shuffled, qrels, 5) == recall_at_k(results, qrels, 5));
  CHECK(mrr_at_k(shuffled, qrels) == mrr);
}

TEST_CASE("unknown query ids are an error") {
  Qrels qrels = {{"known", {"d"}}};
  std::vector<RankedResult> results = {ranked("mystery", {"d"})};
  CHECK_THROWS_WITH_AS(recall_at_k(results, qrels, 1),
                       doctest::Contains("mystery"), std::runtime_error);
}

TEST_CASE("a memorized corpus evaluates to perfect recall on its queries") {
  const MiniRetrieval& f = mini_retrieval();
  EvalOptions options;
  options.sampler = {3, 3, DenoisingStrategy::maskgit_plus, 5};
  options.mode = BeamMode::none;

  EvalOutcome outcome = evaluate(f.model.params, f.registry, f.model.vocab,
                                 f.queries, f.qrels, options);
  CHECK(outcome.metrics.recall1 == 1.0);
  CHECK(outcome.metrics.mrr10 == 1.0);
  for (const RankedResult& r : outcome.per_query) {
    CHECK(r.latency_seconds > 0.0);
  }

  EvalOutcome again = evaluate(f.model.params, f.registry, f.model.vocab,
                               f.queries, f.qrels, options);
  CHECK(again.metrics.recall1 == outcome.metrics.recall1);
  CHECK(again.metrics.mrr10 == outcome.metrics.mrr10);

  // k = 1 collapses every recall level to R@1
  options.mode = BeamMode::intermediate;
  options.k = 1;
  EvalOutcome narrow = evaluate(f.model.params, f.registry, f.model.vocab,
                                f.queries, f.qrels, options);
  CHECK(narrow.metrics.recall5 == narrow.metrics.recall1);
  CHECK(narrow.metrics.recall10 == narrow.metrics.recall1);
}

TEST_CASE("the tradeoff sweep produces one point per budget, throughput falling") {
  const MiniRetrieval& f = mini_retrieval();
  // repeat the query list to stabilize the timing signal
  std::vector<EvalQuery> queries;
  for (int rep = 0; rep < 20; ++rep) {
    for (const EvalQuery& q : f.queries) {
      queries.push_back({q.query_id, q.tokens});
    }
  }
  auto points = tradeoff_sweep(f.model.params, f.registry, f.model.vocab,
                               queries, f.qrels, {1, 2, 3},
                               DenoisingStrategy::maskgit_plus, 5);
  REQUIRE(points.size() == 3);
  CHECK(points[0].steps == 1);
  CHECK(points[2].steps == 3);
  CHECK(points[0].metrics.throughput_qps >= points[1].metrics.throughput_qps);
  CHECK(points[1].metrics.throughput_qps >= points[2].metrics.throughput_qps);
}

TEST_CASE("the strategy ablation has four rows with comparable latency") {
  const MiniRetrieval& f = mini_retrieval();
  std::vector<EvalQuery> queries;
  for (int rep = 0; rep < 20; ++rep) {
    for (const EvalQuery& q : f.queries) {
      queries.push_back({q.query_id, q.tokens});
    }
  }
  SamplerConfig base{3, 3, DenoisingStrategy::maskgit_plus, 5};
  auto rows = strategy_ablation(f.model.params, f.registry, f.model.vocab,
                                queries, f.qrels, base);
  REQUIRE(rows.size() == 4);
  std::set<std::string> names;
  double lo = 1e30, hi = 0.0;
  for (const AblationRow& row : rows) {
    names.insert(strategy_to_string(row.strategy));
    lo = std::min(lo, row.metrics.mean_latency_ms);
    hi = std::max(hi, row.metrics.mean_latency_ms);
    CHECK(row.metrics.recall1 == 1.0);  // memorized corpus
  }
  CHECK(names.size() == 4);
  // same step budget means the same number of model calls
  CHECK(hi / lo <= 1.10);
}

TEST_SUITE_END();
