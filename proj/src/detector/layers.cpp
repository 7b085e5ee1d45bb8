#include "fedgrid/detector/layers.hpp"

#include <cmath>

#include "fedgrid/error.hpp"

namespace fedgrid::detector {

Eigen::MatrixXd positional_encoding(std::size_t seq_len, std::size_t d_model) {
  if (seq_len < 1 || d_model < 2)
    throw Error(ErrorCode::kInvalidArgument, "positional encoding needs seq_len >= 1 and d_model >= 2");
  Eigen::MatrixXd pe(static_cast<Eigen::Index>(seq_len), static_cast<Eigen::Index>(d_model));
  for (std::size_t pos = 0; pos < seq_len; ++pos)
    for (std::size_t i = 0; i < d_model; ++i) {
      const double k2 = static_cast<double>(i - i % 2);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, k2 / static_cast<double>(d_model));
      pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i)) =
          i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd out = scores.colwise() - scores.rowwise().maxCoeff();
  out = out.array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

Eigen::MatrixXd self_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                               const Eigen::MatrixXd& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.cols() == 0)
    throw Error(ErrorCode::kDimension, "self_attention: incompatible Q/K/V shapes");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return softmax_rows(scale * q * k.transpose()) * v;
}

Eigen::MatrixXd multi_head_attention(const Eigen::MatrixXd& x, const Eigen::MatrixXd& wq,
                                     const Eigen::MatrixXd& wk, const Eigen::MatrixXd& wv,
                                     const Eigen::MatrixXd& wo, std::size_t num_heads) {
  const Eigen::Index d = x.cols();
  if (num_heads == 0 || d % static_cast<Eigen::Index>(num_heads) != 0 || wq.rows() != d ||
      wq.cols() != d || wk.rows() != d || wk.cols() != d || wv.rows() != d || wv.cols() != d ||
      wo.rows() != d || wo.cols() != d)
    throw Error(ErrorCode::kDimension, "multi_head_attention: weight shapes must be d_model x d_model");
  const Eigen::Index dk = d / static_cast<Eigen::Index>(num_heads);
  const Eigen::MatrixXd q = x * wq, k = x * wk, v = x * wv;
  Eigen::MatrixXd concat(x.rows(), d);
  for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(num_heads); ++h)
    concat.middleCols(h * dk, dk) =
        self_attention(q.middleCols(h * dk, dk), k.middleCols(h * dk, dk), v.middleCols(h * dk, dk));
  return concat * wo;
}

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma,
                           const Eigen::RowVectorXd& beta) {
  if (gamma.size() != x.cols() || beta.size() != x.cols())
    throw Error(ErrorCode::kDimension, "layer_norm: gain/bias width mismatch");
  const Eigen::VectorXd mean = x.rowwise().mean();
  Eigen::MatrixXd centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::ArrayXd inv = (var.array() + kLayerNormEps).rsqrt();
  centered.array().colwise() *= inv;
  return (centered.array().rowwise() * gamma.array()).rowwise() + beta.array();
}

Eigen::MatrixXd add_norm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& sublayer,
                         const Eigen::RowVectorXd& gamma, const Eigen::RowVectorXd& beta) {
  if (x.rows() != sublayer.rows() || x.cols() != sublayer.cols())
    throw Error(ErrorCode::kDimension, "add_norm: shapes differ");
  return layer_norm(x + sublayer, gamma, beta);
}

Eigen::MatrixXd feed_forward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w1,
                             const Eigen::RowVectorXd& b1, const Eigen::MatrixXd& w2,
                             const Eigen::RowVectorXd& b2) {
  if (w1.rows() != x.cols() || b1.size() != w1.cols() || w2.rows() != w1.cols() || b2.size() != w2.cols())
    throw Error(ErrorCode::kDimension, "feed_forward: incompatible shapes");
  const Eigen::MatrixXd hidden = ((x * w1).rowwise() + b1).cwiseMax(0.0);
  return (hidden * w2).rowwise() + b2;
}

Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::kInvalidArgument, "dropout rate must lie in [0, 1)");
  const double keep = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd mask(rows, cols);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(rng) < rate ? 0.0 : keep;
  return mask;
}

Eigen::MatrixXd dropout(const Eigen::MatrixXd& x, double rate, std::mt19937_64& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::kInvalidArgument, "dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  return x.cwiseProduct(dropout_mask(x.rows(), x.cols(), rate, rng));
}

}  // namespace fedgrid::detector
