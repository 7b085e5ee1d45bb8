#include <cmath>
#include <string>

#include "fedgrid/detector/classifier.hpp"
#include "fedgrid/detector/layers.hpp"
#include "fedgrid/error.hpp"

namespace fedgrid::detector {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// Tensor offsets inside a block and after the blocks.
enum BlockSlot : std::size_t {
  kWq, kWk, kWv, kWo, kLn1Gamma, kLn1Beta, kFfW1, kFfB1, kFfW2, kFfB2, kLn2Gamma, kLn2Beta, kBlockSlots
};
enum HeadSlot : std::size_t { kHeadW1, kHeadB1, kHeadW2, kHeadB2 };

constexpr std::size_t kEmbedW = 0;
constexpr std::size_t kEmbedB = 1;
constexpr std::size_t kFirstBlock = 2;

std::size_t block_base(std::size_t l) { return kFirstBlock + l * kBlockSlots; }

void ln_forward(const MatrixXd& x, const RowVectorXd& gamma, const RowVectorXd& beta, MatrixXd& xhat,
                VectorXd& inv, MatrixXd& y) {
  const VectorXd mean = x.rowwise().mean();
  xhat = x.colwise() - mean;
  inv = (xhat.array().square().rowwise().mean() + kLayerNormEps).rsqrt().matrix();
  xhat.array().colwise() *= inv.array();
  y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
}

// Returns dx; accumulates gain/bias gradients.
MatrixXd ln_backward(const MatrixXd& dy, const MatrixXd& xhat, const VectorXd& inv,
                     const RowVectorXd& gamma, MatrixXd& dgamma, MatrixXd& dbeta) {
  dgamma += (dy.cwiseProduct(xhat)).colwise().sum();
  dbeta += dy.colwise().sum();
  MatrixXd dxhat = dy.array().rowwise() * gamma.array();
  const VectorXd m1 = dxhat.rowwise().mean();
  const VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
  dxhat.colwise() -= m1;
  dxhat -= xhat.cwiseProduct(m2.replicate(1, xhat.cols()));
  dxhat.array().colwise() *= inv.array();
  return dxhat;
}

void check_finite(const MatrixXd& m, const char* layer) {
  if (!m.allFinite()) throw Error(ErrorCode::kNumeric, std::string("non-finite values after ") + layer);
}

}  // namespace

struct TransformerClassifier::Cache {
  struct Block {
    MatrixXd x_in, q, k, v, concat;
    std::vector<MatrixXd> attn;  // per (sample, head)
    MatrixXd xhat1, y1, h_pre, mask, xhat2;
    VectorXd inv1, inv2;
  };
  MatrixXd tokens;  // n x 1 raw feature values
  std::vector<Block> blocks;
  MatrixXd pooled, z1;
  VectorXd probs;
};

void TransformerConfig::validate() const {
  if (input_features < 1) throw Error(ErrorCode::kConfig, "input_features must be >= 1");
  if (d_model < 2) throw Error(ErrorCode::kConfig, "d_model must be >= 2");
  if (num_heads < 1 || d_model % num_heads != 0)
    throw Error(ErrorCode::kConfig, "d_model must be divisible by num_heads");
  if (num_blocks < 1) throw Error(ErrorCode::kConfig, "num_blocks must be >= 1");
  if (ff_hidden < 1 || head_hidden < 1) throw Error(ErrorCode::kConfig, "hidden sizes must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::kConfig, "dropout must lie in [0, 1)");
}

nlohmann::json TransformerConfig::to_json() const {
  return {{"architecture", "transformer"}, {"input_features", input_features}, {"d_model", d_model},
          {"num_heads", num_heads},        {"num_blocks", num_blocks},         {"ff_hidden", ff_hidden},
          {"head_hidden", head_hidden},    {"dropout", dropout}};
}

TransformerConfig TransformerConfig::from_json(const nlohmann::json& j) {
  TransformerConfig c;
  try {
    c.input_features = j.at("input_features").get<std::size_t>();
    c.d_model = j.value("d_model", c.d_model);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.num_blocks = j.value("num_blocks", c.num_blocks);
    c.ff_hidden = j.value("ff_hidden", c.ff_hidden);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.dropout = j.value("dropout", c.dropout);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("transformer config: ") + e.what());
  }
  c.validate();
  return c;
}

TransformerClassifier::TransformerClassifier(TransformerConfig config) : config_(config) {
  config_.validate();
  pe_ = positional_encoding(config_.input_features, config_.d_model);
}

nlohmann::json TransformerClassifier::config_json() const { return config_.to_json(); }

ModelWeights TransformerClassifier::init_weights(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const Index d = static_cast<Index>(config_.d_model);
  const Index ff = static_cast<Index>(config_.ff_hidden);
  const Index hh = static_cast<Index>(config_.head_hidden);
  ModelWeights w;
  w.add("embed.w", xavier_uniform(1, d, rng));
  w.add("embed.b", MatrixXd::Zero(1, d));
  for (std::size_t l = 0; l < config_.num_blocks; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    w.add(p + "attn.wq", xavier_uniform(d, d, rng));
    w.add(p + "attn.wk", xavier_uniform(d, d, rng));
    w.add(p + "attn.wv", xavier_uniform(d, d, rng));
    w.add(p + "attn.wo", xavier_uniform(d, d, rng));
    w.add(p + "ln1.gamma", MatrixXd::Ones(1, d));
    w.add(p + "ln1.beta", MatrixXd::Zero(1, d));
    w.add(p + "ff.w1", xavier_uniform(d, ff, rng));
    w.add(p + "ff.b1", MatrixXd::Zero(1, ff));
    w.add(p + "ff.w2", xavier_uniform(ff, d, rng));
    w.add(p + "ff.b2", MatrixXd::Zero(1, d));
    w.add(p + "ln2.gamma", MatrixXd::Ones(1, d));
    w.add(p + "ln2.beta", MatrixXd::Zero(1, d));
  }
  w.add("head.w1", xavier_uniform(d, hh, rng));
  w.add("head.b1", MatrixXd::Zero(1, hh));
  w.add("head.w2", xavier_uniform(hh, 1, rng));
  w.add("head.b2", MatrixXd::Zero(1, 1));
  return w;
}

Eigen::VectorXd TransformerClassifier::run_forward(const MatrixXd& x, const ModelWeights& w,
                                                   std::mt19937_64* rng, Cache* cache) const {
  const Index f = static_cast<Index>(config_.input_features);
  if (x.cols() != f)
    throw Error(ErrorCode::kDimension, "expected " + std::to_string(f) + " features, got " +
                                           std::to_string(x.cols()));
  if (w.num_tensors() != kFirstBlock + config_.num_blocks * kBlockSlots + 4 ||
      w[kEmbedW].cols() != static_cast<Index>(config_.d_model))
    throw Error(ErrorCode::kDimension, "weights do not match the transformer layout");
  const Index batch = x.rows();
  const Index n = batch * f;
  const Index d = static_cast<Index>(config_.d_model);
  const Index heads = static_cast<Index>(config_.num_heads);
  const Index dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const bool training = rng != nullptr && config_.dropout > 0.0;

  // Token t of sample b sits at row b*f + t.
  MatrixXd tokens(n, 1);
  for (Index b = 0; b < batch; ++b) tokens.middleRows(b * f, f) = x.row(b).transpose();
  MatrixXd h = tokens * w[kEmbedW];
  h.rowwise() += RowVectorXd(w[kEmbedB]);
  for (Index b = 0; b < batch; ++b) h.middleRows(b * f, f) += pe_;
  if (cache) {
    cache->tokens = tokens;
    cache->blocks.assign(config_.num_blocks, {});
  }

  Cache::Block scratch;
  for (std::size_t l = 0; l < config_.num_blocks; ++l) {
    const std::size_t base = block_base(l);
    Cache::Block& c = cache ? cache->blocks[l] : scratch;
    c.q = h * w[base + kWq];
    c.k = h * w[base + kWk];
    c.v = h * w[base + kWv];
    c.concat.resize(n, d);
    if (cache) c.attn.resize(static_cast<std::size_t>(batch * heads));
    for (Index b = 0; b < batch; ++b)
      for (Index hd = 0; hd < heads; ++hd) {
        const auto qh = c.q.block(b * f, hd * dk, f, dk);
        const auto kh = c.k.block(b * f, hd * dk, f, dk);
        const auto vh = c.v.block(b * f, hd * dk, f, dk);
        MatrixXd p = softmax_rows(scale * qh * kh.transpose());
        c.concat.block(b * f, hd * dk, f, dk).noalias() = p * vh;
        if (cache) c.attn[static_cast<std::size_t>(b * heads + hd)] = std::move(p);
      }
    MatrixXd r1 = h + c.concat * w[base + kWo];
    ln_forward(r1, w[base + kLn1Gamma], w[base + kLn1Beta], c.xhat1, c.inv1, c.y1);
    c.h_pre = c.y1 * w[base + kFfW1];
    c.h_pre.rowwise() += RowVectorXd(w[base + kFfB1]);
    MatrixXd fo = c.h_pre.cwiseMax(0.0) * w[base + kFfW2];
    fo.rowwise() += RowVectorXd(w[base + kFfB2]);
    if (training) {
      c.mask = dropout_mask(n, d, config_.dropout, *rng);
      fo.array() *= c.mask.array();
    } else {
      c.mask.resize(0, 0);
    }
    MatrixXd r2 = c.y1 + fo;
    if (cache) c.x_in = std::move(h);
    ln_forward(r2, w[base + kLn2Gamma], w[base + kLn2Beta], c.xhat2, c.inv2, h);
    check_finite(h, ("encoder block " + std::to_string(l)).c_str());
  }

  const std::size_t hb = block_base(config_.num_blocks);
  MatrixXd pooled(batch, d);
  for (Index b = 0; b < batch; ++b) pooled.row(b) = h.middleRows(b * f, f).colwise().mean();
  MatrixXd z1 = pooled * w[hb + kHeadW1];
  z1.rowwise() += RowVectorXd(w[hb + kHeadB1]);
  const VectorXd logits = (z1.cwiseMax(0.0) * w[hb + kHeadW2]).col(0).array() + w[hb + kHeadB2](0, 0);
  check_finite(logits, "classification head");
  VectorXd probs = (1.0 + (-logits.array()).exp()).inverse().matrix();
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->z1 = std::move(z1);
    cache->probs = probs;
  }
  return probs;
}

Eigen::VectorXd TransformerClassifier::forward(const MatrixXd& x, const ModelWeights& weights,
                                               std::mt19937_64* rng) const {
  return run_forward(x, weights, rng, nullptr);
}

double TransformerClassifier::loss_and_gradient(const Batch& batch, const ModelWeights& w,
                                                ModelWeights& grad, std::mt19937_64* rng) const {
  if (batch.size() == 0) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  if (static_cast<std::size_t>(batch.y.size()) != batch.size())
    throw Error(ErrorCode::kDimension, "label count differs from sample count");
  Cache cache;
  const VectorXd probs = run_forward(batch.x, w, rng, &cache);
  const double loss = bce_loss(probs, batch.y);

  if (!grad.same_layout(w)) grad = w.zeros_like();
  for (auto& p : grad.params()) p.value.setZero();

  const Index f = static_cast<Index>(config_.input_features);
  const Index bsz = batch.x.rows();
  const Index n = bsz * f;
  const Index d = static_cast<Index>(config_.d_model);
  const Index heads = static_cast<Index>(config_.num_heads);
  const Index dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  // d loss / d logit of the clamped BCE: p - y inside the clamp, 0 outside.
  VectorXd dlogit(bsz);
  for (Index i = 0; i < bsz; ++i) {
    const double p = probs(i);
    const bool clamped = p < kProbabilityClamp || p > 1.0 - kProbabilityClamp;
    dlogit(i) = clamped ? 0.0 : (p - batch.y(i)) / static_cast<double>(bsz);
  }

  const std::size_t hb = block_base(config_.num_blocks);
  const MatrixXd a1 = cache.z1.cwiseMax(0.0);
  grad[hb + kHeadW2] = a1.transpose() * dlogit;
  grad[hb + kHeadB2](0, 0) = dlogit.sum();
  MatrixXd dz1 = dlogit * w[hb + kHeadW2].transpose();
  dz1.array() *= (cache.z1.array() > 0.0).cast<double>();
  grad[hb + kHeadW1] = cache.pooled.transpose() * dz1;
  grad[hb + kHeadB1] = dz1.colwise().sum();
  const MatrixXd dpooled = dz1 * w[hb + kHeadW1].transpose();

  MatrixXd dh(n, d);
  for (Index b = 0; b < bsz; ++b)
    dh.middleRows(b * f, f) = dpooled.row(b).replicate(f, 1) / static_cast<double>(f);

  for (std::size_t li = config_.num_blocks; li-- > 0;) {
    const std::size_t base = block_base(li);
    const auto& c = cache.blocks[li];
    // Second Add&Norm.
    const MatrixXd dr2 = ln_backward(dh, c.xhat2, c.inv2, w[base + kLn2Gamma], grad[base + kLn2Gamma],
                                     grad[base + kLn2Beta]);
    MatrixXd dfo = dr2;
    if (c.mask.size() > 0) dfo.array() *= c.mask.array();
    const MatrixXd hid = c.h_pre.cwiseMax(0.0);
    grad[base + kFfW2] = hid.transpose() * dfo;
    grad[base + kFfB2] = dfo.colwise().sum();
    MatrixXd dhid = dfo * w[base + kFfW2].transpose();
    dhid.array() *= (c.h_pre.array() > 0.0).cast<double>();
    grad[base + kFfW1] = c.y1.transpose() * dhid;
    grad[base + kFfB1] = dhid.colwise().sum();
    MatrixXd dy1 = dr2 + dhid * w[base + kFfW1].transpose();
    // First Add&Norm.
    const MatrixXd dr1 = ln_backward(dy1, c.xhat1, c.inv1, w[base + kLn1Gamma], grad[base + kLn1Gamma],
                                     grad[base + kLn1Beta]);
    grad[base + kWo] = c.concat.transpose() * dr1;
    const MatrixXd dconcat = dr1 * w[base + kWo].transpose();
    MatrixXd dq(n, d), dk_m(n, d), dv(n, d);
    for (Index b = 0; b < bsz; ++b)
      for (Index hd = 0; hd < heads; ++hd) {
        const MatrixXd& p = c.attn[static_cast<std::size_t>(b * heads + hd)];
        const auto dout = dconcat.block(b * f, hd * dk, f, dk);
        const auto qh = c.q.block(b * f, hd * dk, f, dk);
        const auto kh = c.k.block(b * f, hd * dk, f, dk);
        const auto vh = c.v.block(b * f, hd * dk, f, dk);
        const MatrixXd dp = dout * vh.transpose();
        dv.block(b * f, hd * dk, f, dk).noalias() = p.transpose() * dout;
        MatrixXd ds = dp.cwiseProduct(p);
        const VectorXd row = ds.rowwise().sum();
        ds -= p.cwiseProduct(row.replicate(1, f));
        ds *= scale;
        dq.block(b * f, hd * dk, f, dk).noalias() = ds * kh;
        dk_m.block(b * f, hd * dk, f, dk).noalias() = ds.transpose() * qh;
      }
    grad[base + kWq] = c.x_in.transpose() * dq;
    grad[base + kWk] = c.x_in.transpose() * dk_m;
    grad[base + kWv] = c.x_in.transpose() * dv;
    dh = dr1;
    dh.noalias() += dq * w[base + kWq].transpose();
    dh.noalias() += dk_m * w[base + kWk].transpose();
    dh.noalias() += dv * w[base + kWv].transpose();
  }
  grad[kEmbedW] = cache.tokens.transpose() * dh;
  grad[kEmbedB] = dh.colwise().sum();
  return loss;
}

}  // namespace fedgrid::detector
