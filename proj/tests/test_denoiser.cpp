#include <doctest.h>

#include <cmath>
#include <random>

#include "mdr/denoiser.hpp"
#include "support/fixtures.hpp"

using namespace mdr;
using mdr::testing::TempDir;

namespace {

DenoiserConfig small_config(int width = 16, int layers = 1) {
  DenoiserConfig cfg;
  cfg.layers = layers;
  cfg.width = width;
  cfg.heads = 2;
  cfg.ffn_multiplier = 2;
  cfg.max_query_len = 5;
  cfg.docid_len = 3;
  cfg.vocab_size = 31;
  return cfg;
}

std::vector<TrainExample> small_examples() {
  return {{{7, 8, 9}, {11, 12, 13}},
          {{10, 11}, {14, 15, 16}},
          {{12, 13, 14, 15}, {17, 18, 19}}};
}

template <typename S>
double sample_variance(const DenseMatrix<S>& m) {
  const double mean = m.template cast<double>().mean();
  return (m.template cast<double>().array() - mean).square().mean();
}

}  // namespace

TEST_SUITE_BEGIN("denoiser");

TEST_CASE("init is deterministic, finite, and has no zero embedding rows") {
  DenoiserConfig cfg = small_config();
  auto a = init_parameters<float>(cfg, 42);
  auto b = init_parameters<float>(cfg, 42);
  auto va = tensor_views(a);
  auto vb = tensor_views(b);
  REQUIRE(va.size() == vb.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    REQUIRE(va[i].size == vb[i].size);
    for (std::ptrdiff_t j = 0; j < va[i].size; ++j) {
      REQUIRE(va[i].data[j] == vb[i].data[j]);
      REQUIRE(std::isfinite(va[i].data[j]));
    }
  }
  for (int row = 0; row < a.token_embedding.rows(); ++row) {
    CHECK(a.token_embedding.row(row).cwiseAbs().maxCoeff() > 0.0f);
  }
  auto c = init_parameters<float>(cfg, 43);
  CHECK(c.token_embedding != a.token_embedding);
}

TEST_CASE("per-weight variance scales like 1/width") {
  DenoiserConfig narrow = small_config(64);
  DenoiserConfig wide = small_config(128);
  narrow.vocab_size = wide.vocab_size = 200;
  auto a = init_parameters<double>(narrow, 7);
  auto b = init_parameters<double>(wide, 7);
  const double ratio =
      sample_variance(a.token_embedding) / sample_variance(b.token_embedding);
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("predict rows are normalized and reruns are bit-identical") {
  DenoiserConfig cfg = small_config();
  auto params = init_parameters<float>(cfg, 3);
  TokenSeq query = {7, 8};
  MaskedSequence docid;
  docid.tokens = {11, Vocabulary::kMask, 13};
  docid.mask_flags = {0, 1, 0};

  Eigen::MatrixXd p1 = predict(params, query, docid);
  Eigen::MatrixXd p2 = predict(params, query, docid);
  REQUIRE(p1.rows() == cfg.docid_len);
  REQUIRE(p1.cols() == cfg.vocab_size);
  for (int row = 0; row < p1.rows(); ++row) {
    CHECK(std::abs(p1.row(row).sum() - 1.0) < 1e-6);
  }
  CHECK((p1 - p2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("predictions depend on the visible tokens only, not the noise level") {
  // the model signature has no time input; two masked sequences with the
  // same tokens must predict identically no matter which t produced them
  DenoiserConfig cfg = small_config();
  auto params = init_parameters<float>(cfg, 3);
  TokenSeq x0 = {11, 12, 13};

  MaskedSequence from_low_t, from_high_t;
  std::mt19937_64 rng(5);
  for (;;) {  // draw under two different noise levels until patterns agree
    from_low_t = forward_mask(x0, {0.2}, rng);
    from_high_t = forward_mask(x0, {0.9}, rng);
    if (from_low_t.tokens == from_high_t.tokens &&
        from_low_t.masked_count() > 0) {
      break;
    }
  }
  Eigen::MatrixXd a = predict(params, {7}, from_low_t);
  Eigen::MatrixXd b = predict(params, {7}, from_high_t);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("predict rejects oversized queries and wrong DocID lengths") {
  DenoiserConfig cfg = small_config();
  auto params = init_parameters<float>(cfg, 3);
  MaskedSequence docid;
  docid.tokens = {Vocabulary::kMask, Vocabulary::kMask, Vocabulary::kMask};
  docid.mask_flags = {1, 1, 1};
  TokenSeq long_query = {7, 8, 9, 10, 11, 12};
  CHECK_THROWS_WITH_AS(predict(params, long_query, docid),
                       doctest::Contains("too long"), std::runtime_error);
  MaskedSequence short_docid;
  short_docid.tokens = {Vocabulary::kMask};
  short_docid.mask_flags = {1};
  CHECK_THROWS(predict(params, {7}, short_docid));
}

TEST_CASE("analytic gradients match central finite differences per group") {
  DenoiserConfig cfg = small_config(16, 1);
  auto params = init_parameters<double>(cfg, 11);
  std::mt19937_64 rng(23);
  NoisedBatch batch = make_noised_batch(small_examples(), cfg, rng);

  auto [loss, grads] = loss_and_gradients_on(params, batch);
  REQUIRE(std::isfinite(loss));
  REQUIRE(loss > 0.0);

  const double step = 1e-4;
  auto pviews = tensor_views(params);
  auto gviews = tensor_views(grads);
  for (std::size_t g = 0; g < pviews.size(); ++g) {
    double num = 0.0, denom = 0.0;
    for (std::ptrdiff_t i = 0; i < pviews[g].size; ++i) {
      const double saved = pviews[g].data[i];
      pviews[g].data[i] = saved + step;
      const double up = loss_and_gradients_on(params, batch).first;
      pviews[g].data[i] = saved - step;
      const double down = loss_and_gradients_on(params, batch).first;
      pviews[g].data[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      num += (gviews[g].data[i] - fd) * (gviews[g].data[i] - fd);
      denom += fd * fd + gviews[g].data[i] * gviews[g].data[i];
    }
    const double rel = std::sqrt(num) / std::max(std::sqrt(denom), 1e-12);
    INFO("parameter group ", pviews[g].name);
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("batch loss agrees with the reference estimator") {
  DenoiserConfig cfg = small_config();
  auto params = init_parameters<double>(cfg, 31);
  TrainExample example = small_examples()[0];

  std::mt19937_64 rng_a(99);
  auto [batch_loss, grads] =
      loss_and_gradients(params, std::vector<TrainExample>{example}, rng_a);

  std::mt19937_64 rng_b(99);
  PredictFn model = [&](const TokenSeq& condition, const MaskedSequence& seq) {
    return predict(params, condition, seq);
  };
  LossEstimate reference =
      loss_estimate(example.target, example.condition, model, rng_b);
  CHECK(batch_loss == doctest::Approx(reference.loss).epsilon(1e-9));
}

TEST_CASE("duplicating every example leaves the mean loss unchanged") {
  DenoiserConfig cfg = small_config();
  auto params = init_parameters<double>(cfg, 5);
  std::mt19937_64 rng(7);
  NoisedBatch once = make_noised_batch(small_examples(), cfg, rng);

  NoisedBatch twice;
  const int n = static_cast<int>(once.targets.size());
  twice.tokens.resize(2 * n, once.tokens.cols());
  for (int rep = 0; rep < 2; ++rep) {
    for (int e = 0; e < n; ++e) {
      twice.tokens.row(rep * n + e) = once.tokens.row(e);
      twice.targets.push_back(once.targets[e]);
      twice.masked.push_back(once.masked[e]);
      twice.weights.push_back(once.weights[e]);
    }
  }
  const double a = loss_and_gradients_on(params, once).first;
  const double b = loss_and_gradients_on(params, twice).first;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("training is deterministic given the seed") {
  DenoiserConfig cfg = small_config();
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.batch_size = 2;
  tc.epochs = 5;
  tc.rng_seed = 41;

  TrainerT<float> a(init_parameters<float>(cfg, 1), tc);
  TrainerT<float> b(init_parameters<float>(cfg, 1), tc);
  auto trace_a = a.train(small_examples());
  auto trace_b = b.train(small_examples());
  REQUIRE(trace_a.size() == 5);
  CHECK(trace_a == trace_b);
  CHECK(trace_a.back() < trace_a.front());
}

TEST_CASE("a single pair is memorized after a few hundred steps") {
  auto model = testing::memorize_pairs({{"alpha bravo", {10, 11, 12}}}, 3, 200);
  MaskedSequence all_masked;
  all_masked.tokens.assign(3, Vocabulary::kMask);
  all_masked.mask_flags.assign(3, 1);
  Eigen::MatrixXd dist =
      predict(model.params, model.examples[0].condition, all_masked);
  for (int j = 0; j < 3; ++j) {
    int argmax = 0;
    dist.row(j).maxCoeff(&argmax);
    CHECK(argmax == model.examples[0].target[j]);
  }
}

TEST_CASE("smoothed loss trace never increases on a memorizable corpus") {
  // 20 distinct pairs, 10 epochs -> two 5-epoch windows
  std::vector<std::pair<std::string, TokenSeq>> pairs;
  for (int i = 0; i < 20; ++i) {
    TokenSeq target = {TokenId(10 + (i % 6)), TokenId(10 + ((i / 6) % 6)),
                       TokenId(10 + (i % 5))};
    pairs.emplace_back("alpha bravo charlie", target);
    pairs.back().first += " " + std::to_string(i);
  }
  Vocabulary vocab = testing::tiny_vocab();
  DenoiserConfig cfg = small_config(32, 1);
  cfg.vocab_size = vocab.size();
  TrainConfig tc;
  tc.learning_rate = 2e-3;
  tc.batch_size = 8;
  tc.epochs = 10;
  tc.rng_seed = 3;
  std::vector<TrainExample> examples;
  for (auto& [text, target] : pairs) {
    TokenSeq cond = tokenize(text, vocab);
    cond.resize(std::min<std::size_t>(cond.size(), 5));
    examples.push_back({cond, target});
  }
  TrainerT<float> trainer(init_parameters<float>(cfg, 9), tc);
  auto trace = trainer.train(examples);
  REQUIRE(trace.size() == 10);
  double w0 = 0.0, w1 = 0.0;
  for (int i = 0; i < 5; ++i) {
    w0 += trace[i] / 5;
    w1 += trace[5 + i] / 5;
  }
  CHECK(w1 <= w0 + 1e-9);
}

TEST_CASE("divergence and non-finite losses abort training") {
  DenoiserConfig cfg = small_config();
  TrainConfig wild;
  wild.learning_rate = 50.0;
  wild.grad_clip = 0.0;  // unclipped
  wild.batch_size = 2;
  wild.epochs = 50;
  wild.rng_seed = 2;
  TrainerT<float> diverging(init_parameters<float>(cfg, 1), wild);
  CHECK_THROWS_WITH_AS(diverging.train(small_examples()),
                       doctest::Contains("diverged"), std::runtime_error);

  TrainConfig tame;
  tame.epochs = 1;
  auto poisoned = init_parameters<float>(cfg, 1);
  poisoned.w_out(0, 0) = std::numeric_limits<float>::quiet_NaN();
  TrainerT<float> nan_trainer(poisoned, tame);
  CHECK_THROWS_WITH_AS(nan_trainer.train(small_examples()),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  TempDir dir("ckpt");
  DenoiserConfig cfg = small_config();
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 2;
  tc.rng_seed = 19;
  TrainerT<float> trainer(init_parameters<float>(cfg, 8), tc);
  trainer.train(small_examples());
  trainer.save_checkpoint(dir.file("ckpt.bin"), "feedbead");

  std::string meta;
  auto loaded = TrainerT<float>::load_checkpoint(dir.file("ckpt.bin"), &meta);
  CHECK(meta == "feedbead");
  CHECK(loaded.epochs_done() == 3);
  CHECK(loaded.loss_trace() == trainer.loss_trace());

  MaskedSequence docid;
  docid.tokens.assign(3, Vocabulary::kMask);
  docid.mask_flags.assign(3, 1);
  Eigen::MatrixXd before = predict(trainer.params(), {7, 8}, docid);
  Eigen::MatrixXd after = predict(loaded.params(), {7, 8}, docid);
  CHECK((before - after).cwiseAbs().maxCoeff() == 0.0);

  DenoiserConfig other = cfg;
  other.width = 32;
  CHECK_THROWS_WITH_AS(
      TrainerT<float>::load_checkpoint(dir.file("ckpt.bin"), other),
      doctest::Contains("configuration"), std::runtime_error);
}

TEST_CASE("a resumed run reproduces the uninterrupted run exactly") {
  TempDir dir("resume");
  DenoiserConfig cfg = small_config();
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 2;
  tc.learning_rate = 2e-3;
  tc.rng_seed = 77;
  auto examples = small_examples();

  TrainerT<float> straight(init_parameters<float>(cfg, 4), tc);
  straight.train(examples);

  TrainConfig half = tc;
  half.epochs = 2;
  TrainerT<float> first_leg(init_parameters<float>(cfg, 4), half);
  first_leg.train(examples);
  first_leg.save_checkpoint(dir.file("mid.bin"));

  auto second_leg = TrainerT<float>::load_checkpoint(dir.file("mid.bin"));
  second_leg.config().epochs = 4;
  second_leg.train(examples);

  CHECK(second_leg.loss_trace() == straight.loss_trace());
  auto va = tensor_views(straight.params());
  auto vb = tensor_views(second_leg.params());
  for (std::size_t g = 0; g < va.size(); ++g) {
    for (std::ptrdiff_t i = 0; i < va[g].size; ++i) {
      REQUIRE(va[g].data[i] == vb[g].data[i]);
    }
  }
}

TEST_SUITE_END();
