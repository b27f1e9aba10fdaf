#include "mdr/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdr {

namespace {

constexpr double kProbFloor = 1e-300;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

MaskedSequence MaskedSequence::clean(TokenSeq tokens) {
  for (TokenId id : tokens) {
    if (id == Vocabulary::kMask) {
      fail("MaskedSequence::clean: input already contains the mask token");
    }
  }
  MaskedSequence seq;
  seq.mask_flags.assign(tokens.size(), 0);
  seq.tokens = std::move(tokens);
  return seq;
}

int MaskedSequence::masked_count() const {
  return static_cast<int>(std::count(mask_flags.begin(), mask_flags.end(), 1));
}

std::vector<int> MaskedSequence::masked_positions() const {
  std::vector<int> out;
  for (int i = 0; i < length(); ++i) {
    if (mask_flags[i]) out.push_back(i);
  }
  return out;
}

void MaskedSequence::set_token(int i, TokenId id) {
  tokens[i] = id;
  mask_flags[i] = (id == Vocabulary::kMask) ? 1 : 0;
}

MaskedSequence forward_mask(const TokenSeq& x0, NoiseLevel t, std::mt19937_64& rng) {
  if (!(t.t >= 0.0 && t.t <= 1.0)) {
    throw std::invalid_argument("forward_mask: noise level out of [0,1]");
  }
  MaskedSequence seq = MaskedSequence::clean(x0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < seq.length(); ++i) {
    if (unit(rng) < t.t) seq.set_token(i, Vocabulary::kMask);
  }
  return seq;
}

RemaskCounts remask_count(int len, NoiseLevel t_from, NoiseLevel t_to) {
  if (len < 0 || !(t_to.t >= 0.0) || !(t_to.t < t_from.t) || !(t_from.t <= 1.0)) {
    throw std::invalid_argument("remask_count: need 0 <= t_to < t_from <= 1");
  }
  RemaskCounts counts;
  counts.remain_masked = static_cast<int>(std::llround(len * t_to.t));
  counts.finalize_now =
      static_cast<int>(std::llround(len * t_from.t)) - counts.remain_masked;
  return counts;
}

NoiseDraw draw_noise(const TokenSeq& x0, std::mt19937_64& rng) {
  const int len = static_cast<int>(x0.size());
  if (len == 0) fail("draw_noise: empty sequence");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double t = 1.0 - unit(rng);  // (0, 1]

  // Sample the mask count from Binomial(len, t) conditioned on >= 1, then
  // place the masks uniformly. This is distribution-identical to rejection
  // resampling of the Bernoulli pattern but has bounded cost at small t.
  const double accept = 1.0 - std::pow(1.0 - t, len);
  std::vector<double> pmf(len);
  {
    // C(len, m) t^m (1-t)^(len-m), m = 1..len
    double c = static_cast<double>(len) * t * std::pow(1.0 - t, len - 1);
    pmf[0] = c;
    for (int m = 2; m <= len; ++m) {
      c *= static_cast<double>(len - m + 1) / static_cast<double>(m) * t /
           (1.0 - t + kProbFloor);
      pmf[m - 1] = c;
    }
  }
  double total = 0.0;
  for (double p : pmf) total += p;
  int masked = len;
  if (total > 0.0) {
    double u = unit(rng) * total;
    for (int m = 1; m <= len; ++m) {
      u -= pmf[m - 1];
      if (u <= 0.0) {
        masked = m;
        break;
      }
    }
  }

  std::vector<int> positions(len);
  for (int i = 0; i < len; ++i) positions[i] = i;
  for (int i = 0; i < masked; ++i) {
    std::uniform_int_distribution<int> pick(i, len - 1);
    std::swap(positions[i], positions[pick(rng)]);
  }

  NoiseDraw draw;
  draw.t = t;
  draw.sequence = MaskedSequence::clean(x0);
  for (int i = 0; i < masked; ++i) {
    draw.sequence.set_token(positions[i], Vocabulary::kMask);
  }
  draw.weight = accept / t;
  return draw;
}

LossEstimate loss_estimate(const TokenSeq& x0_docid, const TokenSeq& condition,
                           const PredictFn& predict, std::mt19937_64& rng) {
  if (x0_docid.empty()) fail("loss_estimate: empty DocID");
  NoiseDraw draw = draw_noise(x0_docid, rng);
  Eigen::MatrixXd dist = predict(condition, draw.sequence);
  const int len = static_cast<int>(x0_docid.size());
  if (dist.rows() != len) {
    fail("loss_estimate: predictor returned " + std::to_string(dist.rows()) +
         " rows for a DocID of length " + std::to_string(len));
  }
  for (int i = 0; i < len; ++i) {
    if (std::abs(dist.row(i).sum() - 1.0) > 1e-5) {
      fail("loss_estimate: predictor row " + std::to_string(i) +
           " is not a normalized distribution");
    }
  }

  LossEstimate est;
  est.t = draw.t;
  est.sequence = draw.sequence;
  est.dloss_dlogits = Eigen::MatrixXd::Zero(len, dist.cols());
  est.loss = 0.0;
  for (int i = 0; i < len; ++i) {
    if (!est.sequence.masked(i)) continue;
    const TokenId target = x0_docid[i];
    if (target < 0 || target >= dist.cols()) {
      fail("loss_estimate: target token out of vocabulary range");
    }
    est.loss += draw.weight * -std::log(std::max(dist(i, target), kProbFloor));
    est.dloss_dlogits.row(i) = draw.weight * dist.row(i);
    est.dloss_dlogits(i, target) -= draw.weight;
  }
  return est;
}

}  // namespace mdr
