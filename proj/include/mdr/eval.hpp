#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mdr/sampler.hpp"

namespace mdr {

struct RankedResult {
  std::string query_id;
  std::vector<std::string> ranked_docs;  // duplicate-free, best first
  double latency_seconds = 0.0;
};

using Qrels = std::map<std::string, std::set<std::string>>;

double recall_at_k(const std::vector<RankedResult>& results, const Qrels& qrels,
                   int k);
double mrr_at_k(const std::vector<RankedResult>& results, const Qrels& qrels,
                int k = 10);

struct EvalQuery {
  std::string query_id;
  TokenSeq tokens;
};

struct MetricReport {
  double recall1 = 0.0;
  double recall5 = 0.0;
  double recall10 = 0.0;
  double mrr10 = 0.0;
  double mean_latency_ms = 0.0;
  double throughput_qps = 0.0;
};

struct EvalOptions {
  SamplerConfig sampler;
  BeamMode mode = BeamMode::none;
  int k = 10;
  int n_variants = 4;
};

struct EvalOutcome {
  std::vector<RankedResult> per_query;
  MetricReport metrics;
};

// Runs pseudo_beam (or the vanilla decode for mode none) per query; latency
// is wall clock around generation only.
EvalOutcome evaluate(const DenoiserParams& params, const DocIdRegistry& registry,
                     const Vocabulary& vocab, const std::vector<EvalQuery>& queries,
                     const Qrels& qrels, const EvalOptions& options);

struct SweepPoint {
  int steps = 0;
  MetricReport metrics;
};

// One vanilla-decode evaluation per step budget.
std::vector<SweepPoint> tradeoff_sweep(const DenoiserParams& params,
                                       const DocIdRegistry& registry,
                                       const Vocabulary& vocab,
                                       const std::vector<EvalQuery>& queries,
                                       const Qrels& qrels,
                                       const std::vector<int>& steps_list,
                                       DenoisingStrategy strategy,
                                       std::uint64_t rng_seed);

struct AblationRow {
  DenoisingStrategy strategy;
  MetricReport metrics;
};

// One evaluation per denoising strategy, same step budget and seed.
std::vector<AblationRow> strategy_ablation(const DenoiserParams& params,
                                           const DocIdRegistry& registry,
                                           const Vocabulary& vocab,
                                           const std::vector<EvalQuery>& queries,
                                           const Qrels& qrels,
                                           const SamplerConfig& base);

}  // namespace mdr
