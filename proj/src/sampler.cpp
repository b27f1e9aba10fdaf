#include "mdr/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "mdr/common.hpp"

namespace mdr {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

constexpr double kEntropyFloor = 1e-12;

// Small closed stopword list used by query augmentation.
const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "a",  "an", "and", "are", "as",   "at",   "be", "by",   "for", "from",
      "has", "he", "in",  "is",  "it",  "its",  "of", "on",   "or",  "that",
      "the", "to", "was", "were", "what", "when", "who", "will", "with"};
  return words;
}

double row_entropy(const Eigen::MatrixXd& dist, int row) {
  double h = 0.0;
  for (int v = 0; v < dist.cols(); ++v) {
    const double p = dist(row, v);
    if (p > kEntropyFloor) h -= p * std::log(p);
  }
  return h;
}

double top_margin(const Eigen::MatrixXd& dist, int row) {
  double top1 = -1.0, top2 = -1.0;
  for (int v = 0; v < dist.cols(); ++v) {
    const double p = dist(row, v);
    if (p > top1) {
      top2 = top1;
      top1 = p;
    } else if (p > top2) {
      top2 = p;
    }
  }
  return top1 - std::max(top2, 0.0);
}

int row_argmax(const Eigen::MatrixXd& dist, int row) {
  int best = 0;
  double best_p = dist(row, 0);
  for (int v = 1; v < dist.cols(); ++v) {
    if (dist(row, v) > best_p) {
      best_p = dist(row, v);
      best = v;
    }
  }
  return best;
}

TokenSeq truncated_query(const TokenSeq& query, const DenoiserConfig& cfg) {
  if (static_cast<int>(query.size()) <= cfg.max_query_len) return query;
  return TokenSeq(query.begin(), query.begin() + cfg.max_query_len);
}

}  // namespace

DenoisingStrategy strategy_from_string(const std::string& name) {
  if (name == "random") return DenoisingStrategy::random;
  if (name == "maskgit_plus") return DenoisingStrategy::maskgit_plus;
  if (name == "topk_margin") return DenoisingStrategy::topk_margin;
  if (name == "entropy") return DenoisingStrategy::entropy;
  fail("unknown denoising strategy \"" + name + "\"");
}

std::string strategy_to_string(DenoisingStrategy strategy) {
  switch (strategy) {
    case DenoisingStrategy::random: return "random";
    case DenoisingStrategy::maskgit_plus: return "maskgit_plus";
    case DenoisingStrategy::topk_margin: return "topk_margin";
    case DenoisingStrategy::entropy: return "entropy";
  }
  fail("invalid strategy value");
}

const std::vector<DenoisingStrategy>& all_strategies() {
  static const std::vector<DenoisingStrategy> strategies = {
      DenoisingStrategy::random, DenoisingStrategy::maskgit_plus,
      DenoisingStrategy::topk_margin, DenoisingStrategy::entropy};
  return strategies;
}

void SamplerConfig::validate() const {
  if (steps < 1) fail("SamplerConfig: steps must be >= 1");
  if (docid_len < 1) fail("SamplerConfig: docid_len must be >= 1");
}

std::vector<int> select_finalize(const Eigen::MatrixXd& distributions,
                                 const std::vector<int>& currently_masked, int n,
                                 DenoisingStrategy strategy, std::mt19937_64& rng) {
  if (n < 0 || n > static_cast<int>(currently_masked.size())) {
    fail("select_finalize: cannot finalize " + std::to_string(n) + " of " +
         std::to_string(currently_masked.size()) + " masked positions");
  }
  if (n == 0) return {};

  if (strategy == DenoisingStrategy::random) {
    std::vector<int> pool = currently_masked;
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    std::vector<int> chosen(pool.begin(), pool.begin() + n);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  }

  // score = preference for finalizing now; higher wins, ties to low index
  std::vector<std::pair<double, int>> scored;
  scored.reserve(currently_masked.size());
  for (int pos : currently_masked) {
    double score = 0.0;
    switch (strategy) {
      case DenoisingStrategy::maskgit_plus:
        score = distributions(pos, row_argmax(distributions, pos));
        break;
      case DenoisingStrategy::topk_margin:
        score = top_margin(distributions, pos);
        break;
      case DenoisingStrategy::entropy:
        score = -row_entropy(distributions, pos);
        break;
      default:
        break;
    }
    scored.emplace_back(score, pos);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> chosen;
  chosen.reserve(n);
  for (int i = 0; i < n; ++i) chosen.push_back(scored[i].second);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

DecodeResult generate(const DenoiserParams& params, const TokenSeq& query_tokens,
                      const SamplerConfig& config) {
  config.validate();
  if (config.docid_len != params.config.docid_len) {
    fail("generate: sampler docid_len does not match the model");
  }
  const int l = config.docid_len;
  const int T = config.steps;
  const TokenSeq query = truncated_query(query_tokens, params.config);

  std::mt19937_64 rng(config.rng_seed);
  MaskedSequence state;
  state.tokens.assign(l, Vocabulary::kMask);
  state.mask_flags.assign(l, 1);

  DecodeResult result;
  result.trajectory.finalize_step.assign(l, -1);
  result.trajectory.finalize_logprob.assign(l, 0.0);

  for (int k = 0; k < T; ++k) {
    const NoiseLevel t_from{1.0 - double(k) / T};
    const NoiseLevel t_to{1.0 - double(k + 1) / T};
    const RemaskCounts counts = remask_count(l, t_from, t_to);

    Eigen::MatrixXd dist = predict(params, query, state);
    std::vector<int> masked = state.masked_positions();

    TokenSeq argmax_fill = state.tokens;
    std::vector<double> argmax_logprob(l, 0.0);
    for (int pos : masked) {
      const int token = row_argmax(dist, pos);
      argmax_fill[pos] = token;
      argmax_logprob[pos] = std::log(std::max(dist(pos, token), kEntropyFloor));
    }

    const int n = std::min<int>(counts.finalize_now, static_cast<int>(masked.size()));
    std::vector<int> finalize =
        select_finalize(dist, masked, n, config.strategy, rng);
    for (int pos : finalize) {
      state.set_token(pos, argmax_fill[pos]);
      result.trajectory.finalize_step[pos] = k;
      result.trajectory.finalize_logprob[pos] = argmax_logprob[pos];
    }

    TrajectoryStep step;
    step.state = state;
    step.argmax_fill = argmax_fill;
    step.finalized = std::move(finalize);
    result.trajectory.steps.push_back(std::move(step));
  }

  if (state.masked_count() != 0) {
    fail("generate: schedule left masked positions after the final step");
  }
  result.docid = state.tokens;
  return result;
}

double trajectory_score(const DecodeTrajectory& trajectory) {
  double score = 0.0;
  for (double lp : trajectory.finalize_logprob) score += lp;
  return score;
}

double pseudo_likelihood(const DenoiserParams& params, const TokenSeq& query_tokens,
                         const TokenSeq& docid) {
  if (static_cast<int>(docid.size()) != params.config.docid_len) {
    fail("pseudo_likelihood: DocID length does not match the model");
  }
  const TokenSeq query = truncated_query(query_tokens, params.config);
  double score = 0.0;
  for (int i = 0; i < static_cast<int>(docid.size()); ++i) {
    MaskedSequence masked = MaskedSequence::clean(docid);
    masked.set_token(i, Vocabulary::kMask);
    Eigen::MatrixXd dist = predict(params, query, masked);
    score += std::log(std::max(dist(i, docid[i]), kEntropyFloor));
  }
  return score;
}

std::vector<TokenSeq> augment_query(const TokenSeq& query_tokens,
                                    const Vocabulary& vocab, int n_variants,
                                    std::uint64_t rng_seed) {
  if (n_variants < 1) fail("augment_query: need at least one variant");
  std::vector<TokenSeq> variants;
  variants.push_back(query_tokens);
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int v = 1; v < n_variants; ++v) {
    TokenSeq kept;
    for (TokenId id : query_tokens) {
      const bool is_stop =
          vocab.is_word(id) && stopwords().count(vocab.token_text(id)) > 0;
      if (!is_stop && unit(rng) < 0.1) continue;
      kept.push_back(id);
    }
    if (kept.empty()) kept = query_tokens;
    for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
      if (unit(rng) < 0.05) std::swap(kept[i], kept[i + 1]);
    }
    variants.push_back(std::move(kept));
  }
  return variants;
}

BeamMode beam_mode_from_string(const std::string& name) {
  if (name == "none") return BeamMode::none;
  if (name == "query_aug") return BeamMode::query_aug;
  if (name == "intermediate") return BeamMode::intermediate;
  if (name == "both") return BeamMode::both;
  fail("unknown beam mode \"" + name + "\"");
}

std::string beam_mode_to_string(BeamMode mode) {
  switch (mode) {
    case BeamMode::none: return "none";
    case BeamMode::query_aug: return "query_aug";
    case BeamMode::intermediate: return "intermediate";
    case BeamMode::both: return "both";
  }
  fail("invalid beam mode value");
}

std::vector<ScoredDoc> pseudo_beam(const DenoiserParams& params,
                                   const TokenSeq& query_tokens,
                                   const SamplerConfig& config,
                                   const DocIdRegistry& registry,
                                   const Vocabulary& vocab, BeamMode mode, int k,
                                   int n_variants) {
  if (k < 1) fail("pseudo_beam: k must be >= 1");
  std::vector<TokenSeq> pool;

  DecodeResult original = generate(params, query_tokens, config);
  if (mode == BeamMode::none) {
    pool.push_back(original.docid);
  }
  if (mode == BeamMode::query_aug || mode == BeamMode::both) {
    std::vector<TokenSeq> variants =
        augment_query(query_tokens, vocab, n_variants, config.rng_seed);
    pool.push_back(original.docid);  // variant 0 decode
    for (std::size_t v = 1; v < variants.size(); ++v) {
      pool.push_back(generate(params, variants[v], config).docid);
    }
  }
  if (mode == BeamMode::intermediate || mode == BeamMode::both) {
    for (const TrajectoryStep& step : original.trajectory.steps) {
      pool.push_back(step.argmax_fill);
    }
  }

  // post-filter: registry-valid only, dedupe keeping the best score
  struct Candidate {
    double score;
    int order;
  };
  std::map<std::string, Candidate> best;
  int order = 0;
  for (const TokenSeq& tokens : pool) {
    auto doc = registry.lookup(tokens);
    ++order;
    if (!doc) continue;
    const double score = pseudo_likelihood(params, query_tokens,
                                           registry.padded_docid_for(*doc));
    auto it = best.find(*doc);
    if (it == best.end()) {
      best.emplace(*doc, Candidate{score, order});
    } else if (score > it->second.score) {
      it->second.score = score;
    }
  }

  std::vector<std::pair<std::string, Candidate>> ranked(best.begin(), best.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.score != b.second.score) return a.second.score > b.second.score;
    return a.second.order < b.second.order;
  });
  std::vector<ScoredDoc> out;
  for (const auto& [doc, cand] : ranked) {
    if (static_cast<int>(out.size()) >= k) break;
    out.push_back({doc, cand.score});
  }
  return out;
}

}  // namespace mdr
