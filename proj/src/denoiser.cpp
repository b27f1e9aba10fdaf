#include "mdr/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mdr/common.hpp"

namespace mdr {

namespace {

constexpr double kLnEps = 1e-5;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + S(std::erf(double(x) * 0.7071067811865475)));
}

template <typename S>
S gelu_derivative(S x) {
  const double xd = double(x);
  const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475));
  const double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
  return S(cdf + xd * pdf);
}

// y = gain .* (x - mean) / sqrt(var + eps) + bias, per row
template <typename S>
void layer_norm_forward(const DenseMatrix<S>& x, const DenseVector<S>& gain,
                        const DenseVector<S>& bias, DenseMatrix<S>& xhat,
                        DenseVector<S>& inv_std, DenseMatrix<S>& y) {
  DenseVector<S> mean = x.rowwise().mean();
  DenseMatrix<S> centered = x.colwise() - mean;
  DenseVector<S> var = centered.array().square().rowwise().mean().matrix();
  inv_std = (var.array() + S(kLnEps)).sqrt().inverse().matrix();
  xhat = (centered.array().colwise() * inv_std.array()).matrix();
  y = (xhat.array().rowwise() * gain.transpose().array()).matrix();
  y.array().rowwise() += bias.transpose().array();
}

template <typename S>
DenseMatrix<S> layer_norm_backward(const DenseMatrix<S>& dy,
                                   const DenseMatrix<S>& xhat,
                                   const DenseVector<S>& inv_std,
                                   const DenseVector<S>& gain,
                                   DenseVector<S>& dgain, DenseVector<S>& dbias) {
  dgain += (dy.array() * xhat.array()).matrix().colwise().sum().transpose();
  dbias += dy.colwise().sum().transpose();
  DenseMatrix<S> dxhat = (dy.array().rowwise() * gain.transpose().array()).matrix();
  DenseVector<S> m1 = dxhat.rowwise().mean();
  DenseVector<S> m2 = (dxhat.array() * xhat.array()).rowwise().mean().matrix();
  DenseMatrix<S> dx = dxhat;
  dx.colwise() -= m1;
  dx.array() -= xhat.array().colwise() * m2.array();
  dx.array().colwise() *= inv_std.array();
  return dx;
}

template <typename S>
void softmax_rows_inplace(DenseMatrix<S>& m) {
  for (int r = 0; r < m.rows(); ++r) {
    S mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

template <typename S>
struct LayerCache {
  DenseMatrix<S> x_in;      // BT x W
  DenseMatrix<S> ln1_xhat;
  DenseVector<S> ln1_inv;
  DenseMatrix<S> q, k, v;   // BT x W
  DenseMatrix<S> attn;      // (B*H*T) x T
  DenseMatrix<S> z;         // BT x W
  DenseMatrix<S> x_mid;     // BT x W
  DenseMatrix<S> ln2_xhat;
  DenseVector<S> ln2_inv;
  DenseMatrix<S> ffn_pre;   // BT x F
  DenseMatrix<S> ffn_act;
};

template <typename S>
struct ForwardCache {
  int batch = 0;
  Eigen::MatrixXi tokens;
  std::vector<LayerCache<S>> layers;
  DenseMatrix<S> x_final;   // BT x W
  DenseMatrix<S> yd_xhat;   // (B*l) x W, final LN cache on DocID rows
  DenseVector<S> yd_inv;
  DenseMatrix<S> yd;        // (B*l) x W
  DenseMatrix<S> logits;    // (B*l) x V
};

template <typename S>
void forward_batch(const DenoiserParametersT<S>& params,
                   const Eigen::MatrixXi& tokens, ForwardCache<S>& cache) {
  const DenoiserConfig& cfg = params.config;
  const int batch = static_cast<int>(tokens.rows());
  const int seq = cfg.seq_len();
  const int width = cfg.width;
  const int heads = cfg.heads;
  const int hd = cfg.head_dim();
  const int rows = batch * seq;
  if (tokens.cols() != seq) fail("denoiser: bad input width");

  cache.batch = batch;
  cache.tokens = tokens;
  cache.layers.resize(cfg.layers);

  DenseMatrix<S> x(rows, width);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < seq; ++t) {
      const int id = tokens(b, t);
      if (id < 0 || id >= cfg.vocab_size) {
        fail("denoiser: token id " + std::to_string(id) + " out of range");
      }
      x.row(b * seq + t) =
          params.token_embedding.row(id) + params.position_embedding.row(t);
    }
  }

  const S inv_sqrt_hd = S(1.0 / std::sqrt(double(hd)));
  for (int li = 0; li < cfg.layers; ++li) {
    const auto& layer = params.layers[li];
    LayerCache<S>& lc = cache.layers[li];
    lc.x_in = x;

    DenseMatrix<S> y1;
    layer_norm_forward(lc.x_in, layer.ln1_gain, layer.ln1_bias, lc.ln1_xhat,
                       lc.ln1_inv, y1);
    lc.q.noalias() = y1 * layer.wq;
    lc.q.array().rowwise() += layer.bq.transpose().array();
    lc.k.noalias() = y1 * layer.wk;
    lc.k.array().rowwise() += layer.bk.transpose().array();
    lc.v.noalias() = y1 * layer.wv;
    lc.v.array().rowwise() += layer.bv.transpose().array();

    lc.attn.resize(batch * heads * seq, seq);
    lc.z.resize(rows, width);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto qb = lc.q.block(b * seq, h * hd, seq, hd);
        auto kb = lc.k.block(b * seq, h * hd, seq, hd);
        auto vb = lc.v.block(b * seq, h * hd, seq, hd);
        DenseMatrix<S> scores = qb * kb.transpose() * inv_sqrt_hd;
        softmax_rows_inplace(scores);
        cache.layers[li].attn.block((b * heads + h) * seq, 0, seq, seq) = scores;
        lc.z.block(b * seq, h * hd, seq, hd).noalias() = scores * vb;
      }
    }
    DenseMatrix<S> attn_out = lc.z * layer.wo;
    attn_out.array().rowwise() += layer.bo.transpose().array();
    lc.x_mid = lc.x_in + attn_out;

    DenseMatrix<S> y2;
    layer_norm_forward(lc.x_mid, layer.ln2_gain, layer.ln2_bias, lc.ln2_xhat,
                       lc.ln2_inv, y2);
    lc.ffn_pre.noalias() = y2 * layer.w_ff1;
    lc.ffn_pre.array().rowwise() += layer.b_ff1.transpose().array();
    lc.ffn_act = lc.ffn_pre.unaryExpr([](S u) { return gelu(u); });
    DenseMatrix<S> ffn_out = lc.ffn_act * layer.w_ff2;
    ffn_out.array().rowwise() += layer.b_ff2.transpose().array();
    x = lc.x_mid + ffn_out;
  }
  cache.x_final = x;

  // final LN + output projection on the DocID rows only
  const int l = cfg.docid_len;
  const int docid_start = cfg.max_query_len + 1;
  DenseMatrix<S> xd(batch * l, width);
  for (int b = 0; b < batch; ++b) {
    for (int j = 0; j < l; ++j) {
      xd.row(b * l + j) = x.row(b * seq + docid_start + j);
    }
  }
  layer_norm_forward(xd, params.lnf_gain, params.lnf_bias, cache.yd_xhat,
                     cache.yd_inv, cache.yd);
  cache.logits.noalias() = cache.yd * params.w_out;
  cache.logits.array().rowwise() += params.b_out.transpose().array();
}

template <typename S>
void backward_batch(const DenoiserParametersT<S>& params,
                    const ForwardCache<S>& cache, const DenseMatrix<S>& dlogits,
                    DenoiserParametersT<S>& grads) {
  const DenoiserConfig& cfg = params.config;
  const int batch = cache.batch;
  const int seq = cfg.seq_len();
  const int width = cfg.width;
  const int heads = cfg.heads;
  const int hd = cfg.head_dim();
  const int rows = batch * seq;
  const int l = cfg.docid_len;
  const int docid_start = cfg.max_query_len + 1;

  grads.w_out.noalias() += cache.yd.transpose() * dlogits;
  grads.b_out += dlogits.colwise().sum().transpose();
  DenseMatrix<S> dyd = dlogits * params.w_out.transpose();
  DenseMatrix<S> dxd = layer_norm_backward(dyd, cache.yd_xhat, cache.yd_inv,
                                           params.lnf_gain, grads.lnf_gain,
                                           grads.lnf_bias);

  DenseMatrix<S> dx = DenseMatrix<S>::Zero(rows, width);
  for (int b = 0; b < batch; ++b) {
    for (int j = 0; j < l; ++j) {
      dx.row(b * seq + docid_start + j) = dxd.row(b * l + j);
    }
  }

  const S inv_sqrt_hd = S(1.0 / std::sqrt(double(hd)));
  for (int li = cfg.layers - 1; li >= 0; --li) {
    const auto& layer = params.layers[li];
    auto& lg = grads.layers[li];
    const LayerCache<S>& lc = cache.layers[li];

    // FFN sublayer: x_out = x_mid + gelu(LN2(x_mid) W1 + b1) W2 + b2
    DenseMatrix<S> y2 = (lc.ln2_xhat.array().rowwise() *
                         layer.ln2_gain.transpose().array()).matrix();
    y2.array().rowwise() += layer.ln2_bias.transpose().array();
    lg.w_ff2.noalias() += lc.ffn_act.transpose() * dx;
    lg.b_ff2 += dx.colwise().sum().transpose();
    DenseMatrix<S> dact = dx * layer.w_ff2.transpose();
    DenseMatrix<S> dpre =
        (dact.array() *
         lc.ffn_pre.unaryExpr([](S u) { return gelu_derivative(u); }).array())
            .matrix();
    lg.w_ff1.noalias() += y2.transpose() * dpre;
    lg.b_ff1 += dpre.colwise().sum().transpose();
    DenseMatrix<S> dy2 = dpre * layer.w_ff1.transpose();
    DenseMatrix<S> dx_mid =
        dx + layer_norm_backward(dy2, lc.ln2_xhat, lc.ln2_inv, layer.ln2_gain,
                                 lg.ln2_gain, lg.ln2_bias);

    // attention sublayer: x_mid = x_in + (softmax(QK^T/sqrt) V) Wo + bo
    DenseMatrix<S> y1 = (lc.ln1_xhat.array().rowwise() *
                         layer.ln1_gain.transpose().array()).matrix();
    y1.array().rowwise() += layer.ln1_bias.transpose().array();
    lg.wo.noalias() += lc.z.transpose() * dx_mid;
    lg.bo += dx_mid.colwise().sum().transpose();
    DenseMatrix<S> dz = dx_mid * layer.wo.transpose();

    DenseMatrix<S> dq(rows, width), dk(rows, width), dv(rows, width);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto a = lc.attn.block((b * heads + h) * seq, 0, seq, seq);
        auto qb = lc.q.block(b * seq, h * hd, seq, hd);
        auto kb = lc.k.block(b * seq, h * hd, seq, hd);
        auto vb = lc.v.block(b * seq, h * hd, seq, hd);
        auto dzb = dz.block(b * seq, h * hd, seq, hd);

        DenseMatrix<S> da = dzb * vb.transpose();
        dv.block(b * seq, h * hd, seq, hd).noalias() = a.transpose() * dzb;
        DenseVector<S> row_dot = (da.array() * a.array()).rowwise().sum().matrix();
        DenseMatrix<S> ds = (a.array() * (da.colwise() - row_dot).array()).matrix();
        dq.block(b * seq, h * hd, seq, hd).noalias() = ds * kb * inv_sqrt_hd;
        dk.block(b * seq, h * hd, seq, hd).noalias() =
            ds.transpose() * qb * inv_sqrt_hd;
      }
    }

    lg.wq.noalias() += y1.transpose() * dq;
    lg.bq += dq.colwise().sum().transpose();
    lg.wk.noalias() += y1.transpose() * dk;
    lg.bk += dk.colwise().sum().transpose();
    lg.wv.noalias() += y1.transpose() * dv;
    lg.bv += dv.colwise().sum().transpose();
    DenseMatrix<S> dy1 = dq * layer.wq.transpose();
    dy1.noalias() += dk * layer.wk.transpose();
    dy1.noalias() += dv * layer.wv.transpose();
    dx = dx_mid + layer_norm_backward(dy1, lc.ln1_xhat, lc.ln1_inv,
                                      layer.ln1_gain, lg.ln1_gain, lg.ln1_bias);
  }

  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < seq; ++t) {
      grads.token_embedding.row(cache.tokens(b, t)) += dx.row(b * seq + t);
      grads.position_embedding.row(t) += dx.row(b * seq + t);
    }
  }
}

}  // namespace

void DenoiserConfig::validate() const {
  if (layers < 1) fail("DenoiserConfig: need at least one layer");
  if (width < 1 || heads < 1 || width % heads != 0) {
    fail("DenoiserConfig: width must be a positive multiple of heads");
  }
  if (ffn_multiplier < 1) fail("DenoiserConfig: ffn_multiplier must be positive");
  if (max_query_len < 1) fail("DenoiserConfig: max_query_len must be positive");
  if (docid_len < 1) fail("DenoiserConfig: docid_len must be positive");
  if (vocab_size <= Vocabulary::kNumSpecials) {
    fail("DenoiserConfig: vocab_size not set");
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) fail("TrainConfig: learning rate must be positive");
  if (batch_size < 1) fail("TrainConfig: batch size must be >= 1");
  if (epochs < 0) fail("TrainConfig: epochs must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    fail("TrainConfig: moment coefficients must be in [0,1)");
  }
}

template <typename S>
std::vector<TensorView<S>> tensor_views(DenoiserParametersT<S>& params) {
  std::vector<TensorView<S>> views;
  auto add = [&views](const std::string& name, auto& tensor) {
    views.push_back({name, tensor.data(), tensor.size()});
  };
  add("token_embedding", params.token_embedding);
  add("position_embedding", params.position_embedding);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& layer = params.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    add(p + "wq", layer.wq);
    add(p + "bq", layer.bq);
    add(p + "wk", layer.wk);
    add(p + "bk", layer.bk);
    add(p + "wv", layer.wv);
    add(p + "bv", layer.bv);
    add(p + "wo", layer.wo);
    add(p + "bo", layer.bo);
    add(p + "ln1_gain", layer.ln1_gain);
    add(p + "ln1_bias", layer.ln1_bias);
    add(p + "ln2_gain", layer.ln2_gain);
    add(p + "ln2_bias", layer.ln2_bias);
    add(p + "w_ff1", layer.w_ff1);
    add(p + "b_ff1", layer.b_ff1);
    add(p + "w_ff2", layer.w_ff2);
    add(p + "b_ff2", layer.b_ff2);
  }
  add("lnf_gain", params.lnf_gain);
  add("lnf_bias", params.lnf_bias);
  add("w_out", params.w_out);
  add("b_out", params.b_out);
  return views;
}

template <typename S>
DenoiserParametersT<S> init_parameters(const DenoiserConfig& config,
                                       std::uint64_t rng_seed) {
  config.validate();
  DenoiserParametersT<S> params;
  params.config = config;
  const int w = config.width;
  const int f = config.ffn_dim();

  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(w)));
  auto fill = [&](auto& m, int r, int c) {
    m.resize(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) m(i, j) = S(gauss(rng));
    }
  };

  fill(params.token_embedding, config.vocab_size, w);
  fill(params.position_embedding, config.seq_len(), w);
  params.layers.resize(config.layers);
  for (auto& layer : params.layers) {
    fill(layer.wq, w, w);
    fill(layer.wk, w, w);
    fill(layer.wv, w, w);
    fill(layer.wo, w, w);
    layer.bq = DenseVector<S>::Zero(w);
    layer.bk = DenseVector<S>::Zero(w);
    layer.bv = DenseVector<S>::Zero(w);
    layer.bo = DenseVector<S>::Zero(w);
    layer.ln1_gain = DenseVector<S>::Ones(w);
    layer.ln1_bias = DenseVector<S>::Zero(w);
    layer.ln2_gain = DenseVector<S>::Ones(w);
    layer.ln2_bias = DenseVector<S>::Zero(w);
    fill(layer.w_ff1, w, f);
    fill(layer.w_ff2, f, w);
    layer.b_ff1 = DenseVector<S>::Zero(f);
    layer.b_ff2 = DenseVector<S>::Zero(w);
  }
  params.lnf_gain = DenseVector<S>::Ones(w);
  params.lnf_bias = DenseVector<S>::Zero(w);
  fill(params.w_out, w, config.vocab_size);
  params.b_out = DenseVector<S>::Zero(config.vocab_size);
  return params;
}

template <typename S>
DenoiserParametersT<S> zeros_like(const DenoiserParametersT<S>& params) {
  DenoiserParametersT<S> out;
  out.config = params.config;
  out.token_embedding = DenseMatrix<S>::Zero(params.token_embedding.rows(),
                                             params.token_embedding.cols());
  out.position_embedding = DenseMatrix<S>::Zero(params.position_embedding.rows(),
                                                params.position_embedding.cols());
  out.layers.resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& src = params.layers[i];
    auto& dst = out.layers[i];
    auto zero_mat = [](const auto& m) {
      return std::decay_t<decltype(m)>::Zero(m.rows(), m.cols());
    };
    dst.wq = zero_mat(src.wq);
    dst.wk = zero_mat(src.wk);
    dst.wv = zero_mat(src.wv);
    dst.wo = zero_mat(src.wo);
    dst.bq = zero_mat(src.bq);
    dst.bk = zero_mat(src.bk);
    dst.bv = zero_mat(src.bv);
    dst.bo = zero_mat(src.bo);
    dst.ln1_gain = zero_mat(src.ln1_gain);
    dst.ln1_bias = zero_mat(src.ln1_bias);
    dst.ln2_gain = zero_mat(src.ln2_gain);
    dst.ln2_bias = zero_mat(src.ln2_bias);
    dst.w_ff1 = zero_mat(src.w_ff1);
    dst.w_ff2 = zero_mat(src.w_ff2);
    dst.b_ff1 = zero_mat(src.b_ff1);
    dst.b_ff2 = zero_mat(src.b_ff2);
  }
  out.lnf_gain = DenseVector<S>::Zero(params.lnf_gain.size());
  out.lnf_bias = DenseVector<S>::Zero(params.lnf_bias.size());
  out.w_out = DenseMatrix<S>::Zero(params.w_out.rows(), params.w_out.cols());
  out.b_out = DenseVector<S>::Zero(params.b_out.size());
  return out;
}

TokenSeq build_input_row(const TokenSeq& query, const TokenSeq& docid,
                         const DenoiserConfig& config) {
  if (static_cast<int>(docid.size()) != config.docid_len) {
    fail("build_input_row: DocID length " + std::to_string(docid.size()) +
         " does not match configured length " + std::to_string(config.docid_len));
  }
  TokenSeq row(config.seq_len(), Vocabulary::kPad);
  const int nq = std::min<int>(static_cast<int>(query.size()), config.max_query_len);
  for (int i = 0; i < nq; ++i) row[i] = query[i];
  row[config.max_query_len] = Vocabulary::kSep;
  for (int j = 0; j < config.docid_len; ++j) {
    row[config.max_query_len + 1 + j] = docid[j];
  }
  return row;
}

template <typename S>
Eigen::MatrixXd predict(const DenoiserParametersT<S>& params,
                        const TokenSeq& query_tokens,
                        const MaskedSequence& masked_docid) {
  const DenoiserConfig& cfg = params.config;
  if (static_cast<int>(query_tokens.size()) > cfg.max_query_len) {
    fail("predict: sequence too long (query has " +
         std::to_string(query_tokens.size()) + " tokens, limit " +
         std::to_string(cfg.max_query_len) + ")");
  }
  if (masked_docid.length() != cfg.docid_len) {
    fail("predict: DocID length does not match the model configuration");
  }
  TokenSeq row = build_input_row(query_tokens, masked_docid.tokens, cfg);
  Eigen::MatrixXi tokens(1, cfg.seq_len());
  for (int i = 0; i < cfg.seq_len(); ++i) tokens(0, i) = row[i];

  ForwardCache<S> cache;
  forward_batch(params, tokens, cache);

  Eigen::MatrixXd probs(cfg.docid_len, cfg.vocab_size);
  for (int j = 0; j < cfg.docid_len; ++j) {
    Eigen::ArrayXd logits =
        cache.logits.row(j).transpose().template cast<double>().array();
    double mx = logits.maxCoeff();
    Eigen::ArrayXd e = (logits - mx).exp();
    probs.row(j) = (e / e.sum()).matrix().transpose();
  }
  return probs;
}

NoisedBatch make_noised_batch(const std::vector<TrainExample>& examples,
                              const DenoiserConfig& config, std::mt19937_64& rng) {
  if (examples.empty()) fail("make_noised_batch: empty batch");
  NoisedBatch batch;
  const int n = static_cast<int>(examples.size());
  batch.tokens.resize(n, config.seq_len());
  batch.targets.reserve(n);
  batch.masked.reserve(n);
  batch.weights.reserve(n);
  for (int e = 0; e < n; ++e) {
    const TrainExample& ex = examples[e];
    if (static_cast<int>(ex.target.size()) != config.docid_len) {
      fail("make_noised_batch: target length does not match docid_len");
    }
    NoiseDraw draw = draw_noise(ex.target, rng);
    TokenSeq row = build_input_row(ex.condition, draw.sequence.tokens, config);
    for (int i = 0; i < config.seq_len(); ++i) batch.tokens(e, i) = row[i];
    batch.targets.push_back(ex.target);
    batch.masked.push_back(draw.sequence.masked_positions());
    batch.weights.push_back(draw.weight);
  }
  return batch;
}

template <typename S>
std::pair<double, DenoiserParametersT<S>> loss_and_gradients_on(
    const DenoiserParametersT<S>& params, const NoisedBatch& batch) {
  const DenoiserConfig& cfg = params.config;
  const int n = static_cast<int>(batch.targets.size());
  const int l = cfg.docid_len;

  ForwardCache<S> cache;
  forward_batch(params, batch.tokens, cache);

  double loss = 0.0;
  DenseMatrix<S> dlogits = DenseMatrix<S>::Zero(n * l, cfg.vocab_size);
  const double inv_n = 1.0 / n;
  for (int e = 0; e < n; ++e) {
    const double scale = batch.weights[e] * inv_n;
    for (int j : batch.masked[e]) {
      const int row = e * l + j;
      const TokenId target = batch.targets[e][j];
      Eigen::ArrayXd logits =
          cache.logits.row(row).transpose().template cast<double>().array();
      const double mx = logits.maxCoeff();
      Eigen::ArrayXd ex = (logits - mx).exp();
      const double lse = mx + std::log(ex.sum());
      loss += scale * (lse - logits(target));
      Eigen::ArrayXd p = ex / ex.sum();
      dlogits.row(row) = (p * scale).cast<S>().matrix().transpose();
      dlogits(row, target) -= S(scale);
    }
  }

  DenoiserParametersT<S> grads = zeros_like(params);
  backward_batch(params, cache, dlogits, grads);
  return {loss, std::move(grads)};
}

template <typename S>
std::pair<double, DenoiserParametersT<S>> loss_and_gradients(
    const DenoiserParametersT<S>& params, const std::vector<TrainExample>& batch,
    std::mt19937_64& rng) {
  NoisedBatch noised = make_noised_batch(batch, params.config, rng);
  return loss_and_gradients_on(params, noised);
}

template <typename S>
TrainerT<S>::TrainerT(DenoiserParametersT<S> params, TrainConfig config)
    : params_(std::move(params)), config_(std::move(config)) {
  params_.config.validate();
  config_.validate();
  std::ptrdiff_t total = 0;
  for (const auto& view : tensor_views(params_)) total += view.size;
  moment1_ = Eigen::ArrayXd::Zero(total);
  moment2_ = Eigen::ArrayXd::Zero(total);
}

template <typename S>
void TrainerT<S>::adam_step(DenoiserParametersT<S>& grads) {
  auto pviews = tensor_views(params_);
  auto gviews = tensor_views(grads);

  double norm_sq = 0.0;
  for (const auto& view : gviews) {
    Eigen::Map<const DenseVector<S>> g(view.data, view.size);
    norm_sq += g.template cast<double>().squaredNorm();
  }
  double scale = 1.0;
  if (config_.grad_clip > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > config_.grad_clip) scale = config_.grad_clip / norm;
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, double(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, double(step_));
  std::ptrdiff_t offset = 0;
  for (std::size_t i = 0; i < pviews.size(); ++i) {
    const std::ptrdiff_t size = pviews[i].size;
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> p(pviews[i].data, size);
    Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> g(gviews[i].data, size);
    auto m = moment1_.segment(offset, size);
    auto v = moment2_.segment(offset, size);
    Eigen::ArrayXd gd = g.template cast<double>() * scale;
    m = config_.beta1 * m + (1.0 - config_.beta1) * gd;
    v = config_.beta2 * v + (1.0 - config_.beta2) * gd.square();
    Eigen::ArrayXd update =
        config_.learning_rate * (m / bc1) / ((v / bc2).sqrt() + 1e-8);
    p -= update.template cast<S>();
    offset += size;
  }
}

template <typename S>
std::vector<double> TrainerT<S>::train(
    const std::vector<TrainExample>& examples,
    const std::function<void(int, double)>& on_epoch) {
  if (examples.empty()) fail("train: no training examples");
  const int n = static_cast<int>(examples.size());
  const int batch_size = std::min(config_.batch_size, n);
  double initial_loss = -1.0;

  for (int epoch = epochs_done_; epoch < config_.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(config_.rng_seed, epoch));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double sum = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += batch_size) {
      const int end = std::min(start + batch_size, n);
      std::vector<TrainExample> batch;
      batch.reserve(end - start);
      for (int i = start; i < end; ++i) batch.push_back(examples[order[i]]);

      auto [loss, grads] = loss_and_gradients(params_, batch, rng);
      if (!std::isfinite(loss)) {
        fail("train: non-finite loss at epoch " + std::to_string(epoch) +
             ", batch " + std::to_string(batches));
      }
      if (initial_loss < 0.0) {
        initial_loss = loss;
      } else if (loss > 10.0 * initial_loss && loss > 0.5) {
        fail("train: diverged at epoch " + std::to_string(epoch) + " (loss " +
             std::to_string(loss) + " exceeds 10x initial " +
             std::to_string(initial_loss) + ")");
      }
      adam_step(grads);
      sum += loss;
      ++batches;
    }
    loss_trace_.push_back(sum / batches);
    epochs_done_ = epoch + 1;
    if (on_epoch) on_epoch(epoch, loss_trace_.back());
  }
  return loss_trace_;
}

namespace {

void write_raw(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void read_raw(std::ifstream& in, void* data, std::size_t n, const std::string& path) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    fail("load_checkpoint: " + path + " is truncated");
  }
}

void write_string(std::ofstream& out, const std::string& s) {
  std::int32_t len = static_cast<std::int32_t>(s.size());
  write_raw(out, &len, sizeof(len));
  write_raw(out, s.data(), s.size());
}

std::string read_string(std::ifstream& in, const std::string& path) {
  std::int32_t len = 0;
  read_raw(in, &len, sizeof(len), path);
  if (len < 0 || len > (1 << 20)) fail("load_checkpoint: bad string in " + path);
  std::string s(len, '\0');
  if (len > 0) read_raw(in, s.data(), len, path);
  return s;
}

}  // namespace

template <typename S>
void TrainerT<S>::save_checkpoint(const std::string& path,
                                  const std::string& meta) const {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail("save_checkpoint: cannot open " + path);
  const char magic[8] = {'M', 'D', 'R', 'C', 'K', 'P', 'T', '\0'};
  write_raw(out, magic, sizeof(magic));
  const std::uint8_t version = 1;
  const std::uint8_t dtype = sizeof(S);
  write_raw(out, &version, 1);
  write_raw(out, &dtype, 1);

  const DenoiserConfig& cfg = params_.config;
  const std::int32_t cfg_fields[7] = {cfg.layers, cfg.width, cfg.heads,
                                      cfg.ffn_multiplier, cfg.max_query_len,
                                      cfg.docid_len, cfg.vocab_size};
  write_raw(out, cfg_fields, sizeof(cfg_fields));
  write_raw(out, &config_.learning_rate, sizeof(double));
  const std::int32_t batch = config_.batch_size, epochs = config_.epochs;
  write_raw(out, &batch, sizeof(batch));
  write_raw(out, &epochs, sizeof(epochs));
  write_raw(out, &config_.rng_seed, sizeof(config_.rng_seed));
  write_raw(out, &config_.beta1, sizeof(double));
  write_raw(out, &config_.beta2, sizeof(double));
  write_raw(out, &config_.grad_clip, sizeof(double));

  const std::int64_t step = step_;
  const std::int32_t done = epochs_done_;
  write_raw(out, &step, sizeof(step));
  write_raw(out, &done, sizeof(done));
  const std::int64_t trace_len = static_cast<std::int64_t>(loss_trace_.size());
  write_raw(out, &trace_len, sizeof(trace_len));
  if (trace_len > 0) {
    write_raw(out, loss_trace_.data(), loss_trace_.size() * sizeof(double));
  }
  write_string(out, meta);

  auto views = tensor_views(const_cast<DenoiserParametersT<S>&>(params_));
  const std::int64_t n_tensors = static_cast<std::int64_t>(views.size());
  write_raw(out, &n_tensors, sizeof(n_tensors));
  for (const auto& view : views) {
    write_string(out, view.name);
    const std::int64_t size = view.size;
    write_raw(out, &size, sizeof(size));
    write_raw(out, view.data, view.size * sizeof(S));
  }
  const std::int64_t opt_size = moment1_.size();
  write_raw(out, &opt_size, sizeof(opt_size));
  write_raw(out, moment1_.data(), moment1_.size() * sizeof(double));
  write_raw(out, moment2_.data(), moment2_.size() * sizeof(double));
  if (!out) fail("save_checkpoint: write failed for " + path);
}

template <typename S>
TrainerT<S> TrainerT<S>::load_checkpoint(const std::string& path,
                                         std::string* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_checkpoint: cannot open " + path);
  char magic[8];
  read_raw(in, magic, sizeof(magic), path);
  if (std::memcmp(magic, "MDRCKPT\0", 8) != 0) {
    fail("load_checkpoint: bad magic in " + path);
  }
  std::uint8_t version = 0, dtype = 0;
  read_raw(in, &version, 1, path);
  read_raw(in, &dtype, 1, path);
  if (version != 1) fail("load_checkpoint: unsupported version in " + path);
  if (dtype != sizeof(S)) {
    fail("load_checkpoint: scalar width mismatch in " + path + " (file " +
         std::to_string(dtype) + " bytes, expected " +
         std::to_string(sizeof(S)) + ")");
  }

  std::int32_t cfg_fields[7];
  read_raw(in, cfg_fields, sizeof(cfg_fields), path);
  DenoiserConfig cfg;
  cfg.layers = cfg_fields[0];
  cfg.width = cfg_fields[1];
  cfg.heads = cfg_fields[2];
  cfg.ffn_multiplier = cfg_fields[3];
  cfg.max_query_len = cfg_fields[4];
  cfg.docid_len = cfg_fields[5];
  cfg.vocab_size = cfg_fields[6];

  TrainConfig tc;
  read_raw(in, &tc.learning_rate, sizeof(double), path);
  std::int32_t batch = 0, epochs = 0;
  read_raw(in, &batch, sizeof(batch), path);
  read_raw(in, &epochs, sizeof(epochs), path);
  tc.batch_size = batch;
  tc.epochs = epochs;
  read_raw(in, &tc.rng_seed, sizeof(tc.rng_seed), path);
  read_raw(in, &tc.beta1, sizeof(double), path);
  read_raw(in, &tc.beta2, sizeof(double), path);
  read_raw(in, &tc.grad_clip, sizeof(double), path);

  std::int64_t step = 0;
  std::int32_t done = 0;
  read_raw(in, &step, sizeof(step), path);
  read_raw(in, &done, sizeof(done), path);
  std::int64_t trace_len = 0;
  read_raw(in, &trace_len, sizeof(trace_len), path);
  if (trace_len < 0 || trace_len > (1 << 24)) {
    fail("load_checkpoint: bad trace in " + path);
  }
  std::vector<double> trace(trace_len);
  if (trace_len > 0) read_raw(in, trace.data(), trace_len * sizeof(double), path);
  std::string file_meta = read_string(in, path);

  TrainerT trainer(init_parameters<S>(cfg, 0), tc);
  std::int64_t n_tensors = 0;
  read_raw(in, &n_tensors, sizeof(n_tensors), path);
  auto views = tensor_views(trainer.params_);
  if (n_tensors != static_cast<std::int64_t>(views.size())) {
    fail("load_checkpoint: tensor count mismatch in " + path);
  }
  for (auto& view : views) {
    std::string name = read_string(in, path);
    std::int64_t size = 0;
    read_raw(in, &size, sizeof(size), path);
    if (name != view.name || size != view.size) {
      fail("load_checkpoint: tensor \"" + name + "\" does not match model shape");
    }
    read_raw(in, view.data, size * sizeof(S), path);
  }
  std::int64_t opt_size = 0;
  read_raw(in, &opt_size, sizeof(opt_size), path);
  if (opt_size != trainer.moment1_.size()) {
    fail("load_checkpoint: optimizer state mismatch in " + path);
  }
  read_raw(in, trainer.moment1_.data(), opt_size * sizeof(double), path);
  read_raw(in, trainer.moment2_.data(), opt_size * sizeof(double), path);

  trainer.step_ = step;
  trainer.epochs_done_ = done;
  trainer.loss_trace_ = std::move(trace);
  if (meta) *meta = file_meta;
  return trainer;
}

template <typename S>
TrainerT<S> TrainerT<S>::load_checkpoint(const std::string& path,
                                         const DenoiserConfig& expected,
                                         std::string* meta) {
  TrainerT trainer = load_checkpoint(path, meta);
  if (!(trainer.params_.config == expected)) {
    fail("load_checkpoint: " + path +
         " was written with a different model configuration");
  }
  return trainer;
}

template struct DenoiserParametersT<float>;
template struct DenoiserParametersT<double>;
template std::vector<TensorView<float>> tensor_views(DenoiserParametersT<float>&);
template std::vector<TensorView<double>> tensor_views(DenoiserParametersT<double>&);
template DenoiserParametersT<float> init_parameters(const DenoiserConfig&, std::uint64_t);
template DenoiserParametersT<double> init_parameters(const DenoiserConfig&, std::uint64_t);
template DenoiserParametersT<float> zeros_like(const DenoiserParametersT<float>&);
template DenoiserParametersT<double> zeros_like(const DenoiserParametersT<double>&);
template Eigen::MatrixXd predict(const DenoiserParametersT<float>&, const TokenSeq&, const MaskedSequence&);
template Eigen::MatrixXd predict(const DenoiserParametersT<double>&, const TokenSeq&, const MaskedSequence&);
template std::pair<double, DenoiserParametersT<float>> loss_and_gradients_on(const DenoiserParametersT<float>&, const NoisedBatch&);
template std::pair<double, DenoiserParametersT<double>> loss_and_gradients_on(const DenoiserParametersT<double>&, const NoisedBatch&);
template std::pair<double, DenoiserParametersT<float>> loss_and_gradients(const DenoiserParametersT<float>&, const std::vector<TrainExample>&, std::mt19937_64&);
template std::pair<double, DenoiserParametersT<double>> loss_and_gradients(const DenoiserParametersT<double>&, const std::vector<TrainExample>&, std::mt19937_64&);
template class TrainerT<float>;
template class TrainerT<double>;

}  // namespace mdr
