// Differentiable operations over Tensor. Matrix products are backed by
// Eigen maps; everything else is plain loops. Shapes are validated up
// front and violations throw with the offending dimensions.
#pragma once

#include <utility>

#include "tasif/tensor.hpp"

namespace tasif {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form

// x * s with s a scalar tensor (broadcast)
Tensor scale_by(const Tensor& x, const Tensor& s);

// ---- broadcasting adds ----
// x [..., d] + b [d]
Tensor add_bias(const Tensor& x, const Tensor& b);
// x [B, n, d] + p [n, d], broadcast over the leading dim
Tensor add_rows_broadcast(const Tensor& x, const Tensor& p);

// ---- structural ----
// multiply row r of x [R, d] (leading dims flattened) by w[r]; w is constant
Tensor mul_rows_const(const Tensor& x, const std::vector<double>& w);
// concatenate along the last axis
Tensor concat_lastdim(const std::vector<Tensor>& parts);
// [B, n, d] -> [B*h, n, d/h] and back
Tensor split_heads(const Tensor& x, i64 heads);
Tensor merge_heads(const Tensor& x, i64 heads);
// pick one row per batch: x [B, n, d], pos[b] in [0, n)
Tensor gather_positions(const Tensor& x, const std::vector<i64>& pos);
Tensor sum_all(const Tensor& x);  // -> scalar

// ---- linear algebra ----
// a [..., q] x b [q, r] -> [..., r]   (leading dims of a flattened)
Tensor matmul(const Tensor& a, const Tensor& b);
// a [..., q] x b[r, q]^T -> [..., r]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// batched: a [G, p, q] x b [G, q, r] (or b [G, r, q] with trans_b)
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);

// ---- normalization / attention ----
// softmax over the last axis; rejects NaN input; -1e9 entries act as masks
Tensor softmax_rows(const Tensor& x);
// normalize the last axis to zero mean / unit variance (eps 1e-12), then
// affine with gain/bias [d]
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
// scores [B*h, n, n] + mask [B*n*n] broadcast across heads (mask constant)
Tensor add_attention_mask(const Tensor& scores, const std::vector<double>& mask, i64 heads);

// ---- dropout ----
// training: zero entries with probability rate, scale survivors by 1/(1-rate);
// eval: identity. rate must lie in [0, 1).
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

// ---- embeddings ----
// table [V, d] gathered by idx (one index per output row); out_leading + {d}
Tensor embedding_lookup(const Tensor& table, const std::vector<i64>& idx, Shape out_leading);
// masked mean of value embeddings: idx/mask are [R, m]; rows with empty mask
// come out zero and receive no gradient
Tensor embedding_bag_mean(const Tensor& table, const std::vector<i64>& idx,
                          const std::vector<double>& mask, i64 m, Shape out_leading);

// ---- spectral ----
// x [B, n, d] (or [n, d]) -> (re, im) each [B, m, d], m = n/2+1, along the n axis
std::pair<Tensor, Tensor> rfft_op(const Tensor& x);
// inverse of rfft_op
Tensor irfft_op(const Tensor& re, const Tensor& im, i64 n);
// elementwise complex product with a filter [m, d] broadcast over the batch
std::pair<Tensor, Tensor> complex_modulate(const Tensor& sr, const Tensor& si,
                                           const Tensor& wr, const Tensor& wi);

}  // namespace tasif
