#pragma once

#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mdr/corpus.hpp"

namespace mdr {

struct NoiseLevel {
  double t = 1.0;  // in (0, 1]; forward_mask also accepts 0 as the identity
};

struct MaskedSequence {
  TokenSeq tokens;
  std::vector<char> mask_flags;  // mask_flags[i] != 0  <=>  tokens[i] == kMask

  static MaskedSequence clean(TokenSeq tokens);

  int length() const { return static_cast<int>(tokens.size()); }
  bool masked(int i) const { return mask_flags[i] != 0; }
  int masked_count() const;
  std::vector<int> masked_positions() const;
  void set_token(int i, TokenId id);
};

// Each position is independently replaced by the mask token with probability t.
MaskedSequence forward_mask(const TokenSeq& x0, NoiseLevel t, std::mt19937_64& rng);

struct RemaskCounts {
  int finalize_now = 0;
  int remain_masked = 0;
};

// Deterministic schedule counts for one reverse step from t_from down to t_to:
// remain = round(len * t_to), finalize = round(len * t_from) - remain.
RemaskCounts remask_count(int len, NoiseLevel t_from, NoiseLevel t_to);

// One training draw: t ~ U(0,1], then a mask pattern conditioned on at least
// one masked position. `weight` is (1 - (1-t)^len) / t, which makes the
// weighted per-draw loss an unbiased estimate of the integral bound.
struct NoiseDraw {
  double t = 0.0;
  MaskedSequence sequence;
  double weight = 0.0;
};

NoiseDraw draw_noise(const TokenSeq& x0, std::mt19937_64& rng);

// Per-position distributions over the vocabulary given the (never masked)
// condition tokens and the partially masked DocID. Rows must sum to 1.
using PredictFn =
    std::function<Eigen::MatrixXd(const TokenSeq& condition, const MaskedSequence&)>;

struct LossEstimate {
  double loss = 0.0;
  double t = 0.0;
  MaskedSequence sequence;
  // d(loss)/d(logits) rows for masked positions, zero rows elsewhere; valid
  // when the distributions come from a softmax.
  Eigen::MatrixXd dloss_dlogits;
};

LossEstimate loss_estimate(const TokenSeq& x0_docid, const TokenSeq& condition,
                           const PredictFn& predict, std::mt19937_64& rng);

}  // namespace mdr
