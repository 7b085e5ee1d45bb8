#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <random>

namespace fedgrid::detector {

constexpr double kLayerNormEps = 1e-5;

// PE(pos, 2k) = sin(pos / 10000^(2k/d)), PE(pos, 2k+1) = cos(same angle).
Eigen::MatrixXd positional_encoding(std::size_t seq_len, std::size_t d_model);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores);

// softmax(Q K^T / sqrt(d_k)) V
Eigen::MatrixXd self_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                               const Eigen::MatrixXd& v);

// Heads split the projected columns into num_heads contiguous slices; the
// concatenated head outputs are projected by wo.
Eigen::MatrixXd multi_head_attention(const Eigen::MatrixXd& x, const Eigen::MatrixXd& wq,
                                     const Eigen::MatrixXd& wk, const Eigen::MatrixXd& wv,
                                     const Eigen::MatrixXd& wo, std::size_t num_heads);

// Row-wise normalization followed by per-column gain and bias (row vectors).
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma,
                           const Eigen::RowVectorXd& beta);
Eigen::MatrixXd add_norm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& sublayer,
                         const Eigen::RowVectorXd& gamma, const Eigen::RowVectorXd& beta);

// max(0, X W1 + b1) W2 + b2
Eigen::MatrixXd feed_forward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w1,
                             const Eigen::RowVectorXd& b1, const Eigen::MatrixXd& w2,
                             const Eigen::RowVectorXd& b2);

// Inverted dropout: zeroes with probability `rate` and scales survivors by
// 1/(1-rate) when training; identity otherwise.
Eigen::MatrixXd dropout(const Eigen::MatrixXd& x, double rate, std::mt19937_64& rng, bool training);

// Keep-mask already divided by (1 - rate), shaped like a rows x cols matrix.
Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng);

}  // namespace fedgrid::detector
