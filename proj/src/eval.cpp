#include "mdr/eval.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

namespace mdr {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

const std::set<std::string>& relevant_for(const Qrels& qrels,
                                          const std::string& query_id) {
  auto it = qrels.find(query_id);
  if (it == qrels.end() || it->second.empty()) {
    fail("eval: unknown query id \"" + query_id + "\"");
  }
  return it->second;
}

// rank of the first relevant doc (1-based), or 0 if none in the list
int first_relevant_rank(const RankedResult& result,
                        const std::set<std::string>& relevant) {
  for (std::size_t i = 0; i < result.ranked_docs.size(); ++i) {
    if (relevant.count(result.ranked_docs[i])) return static_cast<int>(i) + 1;
  }
  return 0;
}

}  // namespace

double recall_at_k(const std::vector<RankedResult>& results, const Qrels& qrels,
                   int k) {
  if (k < 1) fail("recall_at_k: k must be >= 1");
  if (results.empty()) return 0.0;
  int hits = 0;
  for (const RankedResult& result : results) {
    const int rank = first_relevant_rank(result, relevant_for(qrels, result.query_id));
    if (rank >= 1 && rank <= k) ++hits;
  }
  return double(hits) / double(results.size());
}

double mrr_at_k(const std::vector<RankedResult>& results, const Qrels& qrels,
                int k) {
  if (k < 1) fail("mrr_at_k: k must be >= 1");
  if (results.empty()) return 0.0;
  double sum = 0.0;
  for (const RankedResult& result : results) {
    const int rank = first_relevant_rank(result, relevant_for(qrels, result.query_id));
    if (rank >= 1 && rank <= k) sum += 1.0 / rank;
  }
  return sum / double(results.size());
}

EvalOutcome evaluate(const DenoiserParams& params, const DocIdRegistry& registry,
                     const Vocabulary& vocab, const std::vector<EvalQuery>& queries,
                     const Qrels& qrels, const EvalOptions& options) {
  using clock = std::chrono::steady_clock;
  EvalOutcome outcome;
  outcome.per_query.reserve(queries.size());
  double total_seconds = 0.0;

  for (const EvalQuery& query : queries) {
    relevant_for(qrels, query.query_id);  // fail fast on unknown ids
    RankedResult result;
    result.query_id = query.query_id;

    const auto start = clock::now();
    if (options.mode == BeamMode::none) {
      DecodeResult decoded = generate(params, query.tokens, options.sampler);
      if (auto doc = registry.lookup(decoded.docid)) {
        result.ranked_docs.push_back(*doc);
      }
    } else {
      for (const ScoredDoc& hit :
           pseudo_beam(params, query.tokens, options.sampler, registry, vocab,
                       options.mode, options.k, options.n_variants)) {
        result.ranked_docs.push_back(hit.doc_id);
      }
    }
    result.latency_seconds =
        std::chrono::duration<double>(clock::now() - start).count();
    total_seconds += result.latency_seconds;
    outcome.per_query.push_back(std::move(result));
  }

  outcome.metrics.recall1 = recall_at_k(outcome.per_query, qrels, 1);
  outcome.metrics.recall5 = recall_at_k(outcome.per_query, qrels, 5);
  outcome.metrics.recall10 = recall_at_k(outcome.per_query, qrels, 10);
  outcome.metrics.mrr10 = mrr_at_k(outcome.per_query, qrels, 10);
  if (!queries.empty()) {
    outcome.metrics.mean_latency_ms = 1000.0 * total_seconds / queries.size();
    outcome.metrics.throughput_qps =
        total_seconds > 0.0 ? queries.size() / total_seconds : 0.0;
  }
  return outcome;
}

std::vector<SweepPoint> tradeoff_sweep(const DenoiserParams& params,
                                       const DocIdRegistry& registry,
                                       const Vocabulary& vocab,
                                       const std::vector<EvalQuery>& queries,
                                       const Qrels& qrels,
                                       const std::vector<int>& steps_list,
                                       DenoisingStrategy strategy,
                                       std::uint64_t rng_seed) {
  if (steps_list.empty()) fail("tradeoff_sweep: empty steps list");
  std::vector<SweepPoint> points;
  for (int steps : steps_list) {
    EvalOptions options;
    options.sampler.steps = steps;
    options.sampler.docid_len = params.config.docid_len;
    options.sampler.strategy = strategy;
    options.sampler.rng_seed = rng_seed;
    options.mode = BeamMode::none;
    points.push_back({steps, evaluate(params, registry, vocab, queries, qrels,
                                      options)
                                 .metrics});
  }
  return points;
}

std::vector<AblationRow> strategy_ablation(const DenoiserParams& params,
                                           const DocIdRegistry& registry,
                                           const Vocabulary& vocab,
                                           const std::vector<EvalQuery>& queries,
                                           const Qrels& qrels,
                                           const SamplerConfig& base) {
  std::vector<AblationRow> rows;
  for (DenoisingStrategy strategy : all_strategies()) {
    EvalOptions options;
    options.sampler = base;
    options.sampler.strategy = strategy;
    options.mode = BeamMode::none;
    rows.push_back({strategy, evaluate(params, registry, vocab, queries, qrels,
                                       options)
                                  .metrics});
  }
  return rows;
}

}  // namespace mdr
