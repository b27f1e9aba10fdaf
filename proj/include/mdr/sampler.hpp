#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mdr/denoiser.hpp"
#include "mdr/diffusion.hpp"
#include "mdr/docid.hpp"

namespace mdr {

enum class DenoisingStrategy { random, maskgit_plus, topk_margin, entropy };

DenoisingStrategy strategy_from_string(const std::string& name);
std::string strategy_to_string(DenoisingStrategy strategy);
const std::vector<DenoisingStrategy>& all_strategies();

struct SamplerConfig {
  int steps = 3;
  int docid_len = 3;
  DenoisingStrategy strategy = DenoisingStrategy::maskgit_plus;
  std::uint64_t rng_seed = 0;
  void validate() const;
};

struct TrajectoryStep {
  MaskedSequence state;               // after this step's finalizations
  TokenSeq argmax_fill;               // committed tokens + this step's argmaxes
  std::vector<int> finalized;         // positions committed at this step
};

struct DecodeTrajectory {
  std::vector<TrajectoryStep> steps;
  std::vector<int> finalize_step;        // per position
  std::vector<double> finalize_logprob;  // per position, at its commit step
};

// Picks the n positions to finalize out of the currently masked set.
// random: uniform; maskgit_plus: highest top-1 probability; topk_margin:
// largest top1-top2 gap; entropy: lowest entropy. Ties break toward the
// lowest position index.
std::vector<int> select_finalize(const Eigen::MatrixXd& distributions,
                                 const std::vector<int>& currently_masked, int n,
                                 DenoisingStrategy strategy, std::mt19937_64& rng);

struct DecodeResult {
  TokenSeq docid;
  DecodeTrajectory trajectory;
};

// Iterative parallel denoising on the uniform grid t_k = 1 - k/T, starting
// from a fully masked DocID. Finalized tokens are never revised.
DecodeResult generate(const DenoiserParams& params, const TokenSeq& query_tokens,
                      const SamplerConfig& config);

// Sum of the log-probabilities recorded when each token was finalized.
double trajectory_score(const DecodeTrajectory& trajectory);

// Pseudo-likelihood: sum_i log p(z_i | query, z with position i masked).
// Costs docid_len extra model calls; deterministic.
double pseudo_likelihood(const DenoiserParams& params, const TokenSeq& query_tokens,
                         const TokenSeq& docid);

// Variant 0 is the original; the rest drop non-stopwords with probability 0.1
// and swap adjacent pairs with probability 0.05. Never empties the query.
std::vector<TokenSeq> augment_query(const TokenSeq& query_tokens,
                                    const Vocabulary& vocab, int n_variants,
                                    std::uint64_t rng_seed);

enum class BeamMode { none, query_aug, intermediate, both };

BeamMode beam_mode_from_string(const std::string& name);
std::string beam_mode_to_string(BeamMode mode);

struct ScoredDoc {
  std::string doc_id;
  double score;
};

// Candidate pool from augmented-query decodes and/or intermediate denoising
// snapshots; sequences missing from the registry are dropped, duplicates keep
// their best score, ranking is by score (ties by generation order).
std::vector<ScoredDoc> pseudo_beam(const DenoiserParams& params,
                                   const TokenSeq& query_tokens,
                                   const SamplerConfig& config,
                                   const DocIdRegistry& registry,
                                   const Vocabulary& vocab, BeamMode mode, int k,
                                   int n_variants = 4);

}  // namespace mdr
