#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mdr/corpus.hpp"
#include "mdr/diffusion.hpp"

namespace mdr {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct DenoiserConfig {
  int layers = 2;
  int width = 128;
  int heads = 4;
  int ffn_multiplier = 2;
  int max_query_len = 12;
  int docid_len = 3;
  int vocab_size = 0;

  int seq_len() const { return max_query_len + 1 + docid_len; }
  int ffn_dim() const { return ffn_multiplier * width; }
  int head_dim() const { return width / heads; }
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

// Bidirectional denoiser p(x0_i | condition, partially masked DocID).
// There is deliberately no time/noise-level input anywhere: predictions are a
// function of the visible tokens only.
template <typename Scalar>
struct DenoiserParametersT {
  using Mat = DenseMatrix<Scalar>;
  using Vec = DenseVector<Scalar>;

  struct Layer {
    Mat wq, wk, wv, wo;  // width x width
    Vec bq, bk, bv, bo;
    Vec ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Mat w_ff1, w_ff2;  // width x ffn_dim, ffn_dim x width
    Vec b_ff1, b_ff2;
  };

  DenoiserConfig config;
  Mat token_embedding;     // vocab_size x width
  Mat position_embedding;  // seq_len x width
  std::vector<Layer> layers;
  Vec lnf_gain, lnf_bias;
  Mat w_out;  // width x vocab_size
  Vec b_out;
};

using DenoiserParams = DenoiserParametersT<float>;

template <typename Scalar>
struct TensorView {
  std::string name;
  Scalar* data;
  std::ptrdiff_t size;
};

// Flat views over every parameter tensor in a fixed, named order. Drives the
// optimizer, serialization, and the per-group gradient check.
template <typename Scalar>
std::vector<TensorView<Scalar>> tensor_views(DenoiserParametersT<Scalar>& params);

template <typename Scalar>
DenoiserParametersT<Scalar> init_parameters(const DenoiserConfig& config,
                                            std::uint64_t rng_seed);

template <typename Scalar>
DenoiserParametersT<Scalar> zeros_like(const DenoiserParametersT<Scalar>& params);

// [query (padded to max_query_len) ; SEP ; docid slots], one fixed-length row.
TokenSeq build_input_row(const TokenSeq& query, const TokenSeq& docid,
                         const DenoiserConfig& config);

// Softmax-normalized distribution over the vocabulary at every DocID
// position, computed in double regardless of the parameter scalar.
template <typename Scalar>
Eigen::MatrixXd predict(const DenoiserParametersT<Scalar>& params,
                        const TokenSeq& query_tokens,
                        const MaskedSequence& masked_docid);

struct TrainExample {
  TokenSeq condition;  // query (or leading document) tokens
  TokenSeq target;     // clean DocID, padded to docid_len
};

// A batch with the diffusion noise already drawn; losses and gradients are a
// deterministic function of (params, batch), which the gradient check relies on.
struct NoisedBatch {
  Eigen::MatrixXi tokens;                // B x seq_len
  std::vector<TokenSeq> targets;         // clean padded DocIDs
  std::vector<std::vector<int>> masked;  // masked DocID positions per example
  std::vector<double> weights;           // diffusion loss weights per example
};

NoisedBatch make_noised_batch(const std::vector<TrainExample>& examples,
                              const DenoiserConfig& config, std::mt19937_64& rng);

template <typename Scalar>
std::pair<double, DenoiserParametersT<Scalar>> loss_and_gradients_on(
    const DenoiserParametersT<Scalar>& params, const NoisedBatch& batch);

template <typename Scalar>
std::pair<double, DenoiserParametersT<Scalar>> loss_and_gradients(
    const DenoiserParametersT<Scalar>& params,
    const std::vector<TrainExample>& batch, std::mt19937_64& rng);

struct TrainConfig {
  double learning_rate = 5e-4;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t rng_seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double grad_clip = 1.0;
  void validate() const;
};

// Adam trainer with per-epoch derived RNG streams, so a run resumed from a
// checkpoint at an epoch boundary reproduces the uninterrupted run exactly.
template <typename Scalar>
class TrainerT {
 public:
  TrainerT(DenoiserParametersT<Scalar> params, TrainConfig config);

  std::vector<double> train(const std::vector<TrainExample>& examples,
                            const std::function<void(int, double)>& on_epoch = {});

  const DenoiserParametersT<Scalar>& params() const { return params_; }
  DenoiserParametersT<Scalar>& params() { return params_; }
  int epochs_done() const { return epochs_done_; }
  const std::vector<double>& loss_trace() const { return loss_trace_; }
  const TrainConfig& config() const { return config_; }
  TrainConfig& config() { return config_; }

  void save_checkpoint(const std::string& path, const std::string& meta = "") const;
  static TrainerT load_checkpoint(const std::string& path,
                                  std::string* meta = nullptr);
  static TrainerT load_checkpoint(const std::string& path,
                                  const DenoiserConfig& expected,
                                  std::string* meta = nullptr);

 private:
  void adam_step(DenoiserParametersT<Scalar>& grads);

  DenoiserParametersT<Scalar> params_;
  TrainConfig config_;
  Eigen::ArrayXd moment1_, moment2_;
  long step_ = 0;
  int epochs_done_ = 0;
  std::vector<double> loss_trace_;
};

using Trainer = TrainerT<float>;

extern template struct DenoiserParametersT<float>;
extern template struct DenoiserParametersT<double>;
extern template std::vector<TensorView<float>> tensor_views(DenoiserParametersT<float>&);
extern template std::vector<TensorView<double>> tensor_views(DenoiserParametersT<double>&);
extern template DenoiserParametersT<float> init_parameters(const DenoiserConfig&, std::uint64_t);
extern template DenoiserParametersT<double> init_parameters(const DenoiserConfig&, std::uint64_t);
extern template DenoiserParametersT<float> zeros_like(const DenoiserParametersT<float>&);
extern template DenoiserParametersT<double> zeros_like(const DenoiserParametersT<double>&);
extern template Eigen::MatrixXd predict(const DenoiserParametersT<float>&, const TokenSeq&, const MaskedSequence&);
extern template Eigen::MatrixXd predict(const DenoiserParametersT<double>&, const TokenSeq&, const MaskedSequence&);
extern template std::pair<double, DenoiserParametersT<float>> loss_and_gradients_on(const DenoiserParametersT<float>&, const NoisedBatch&);
extern template std::pair<double, DenoiserParametersT<double>> loss_and_gradients_on(const DenoiserParametersT<double>&, const NoisedBatch&);
extern template std::pair<double, DenoiserParametersT<float>> loss_and_gradients(const DenoiserParametersT<float>&, const std::vector<TrainExample>&, std::mt19937_64&);
extern template std::pair<double, DenoiserParametersT<double>> loss_and_gradients(const DenoiserParametersT<double>&, const std::vector<TrainExample>&, std::mt19937_64&);
extern template class TrainerT<float>;
extern template class TrainerT<double>;

}  // namespace mdr
