#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "anacto/tape.hpp"

namespace anacto {

// Elementwise, same shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

// a * c for a compile-time-known scalar.
Var scale(Var a, double c);

// (R, C) matrix plus length-C vector, broadcast over rows.
Var add_rowvec(Var m, Var v);

// Strict rank-2 matrix product (M,K)x(K,N) -> (M,N).
Var matmul(Var a, Var b);
Var transpose(Var a);

Var sum(Var a);   // -> scalar
Var mean(Var a);  // -> scalar

// Shift-stable softmax along `axis` (any rank).
Var softmax(Var x, std::size_t axis);

// Normalizes the last axis to zero mean / unit variance, then gamma*x+beta.
// gamma and beta are rank-1 with the last-axis extent.
inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps);

// tanh-approximation GELU; coefficients 0.044715 and sqrt(2/pi).
Var gelu(Var x);
Var sigmoid(Var x);
Var tanh_op(Var x);

// Rank-2 restructuring.
Var slice_cols(Var m, std::size_t c0, std::size_t c1);  // [c0, c1)
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var select_row(Var m, std::size_t row);        // -> rank-1
Var stack_rows(std::span<const Var> rows);     // rank-1 rows -> rank-2
Var concat_vec(std::span<const Var> parts);    // rank-1 concat

Var reshape(Var a, Shape shape);

// Copies the value onto the tape as a constant: gradients stop here.
Var detach(Var a);

// x*w + b. x may be rank-1 (length K) or rank-2 (R,K); w is (K,N),
// b is rank-1 (N). Output rank matches x.
Var linear(Var x, Var w, Var b);

// sum((a-b)^2), the squared L2 distance between same-shaped tensors.
Var squared_distance(Var a, Var b);

// Attention mask over (query, key) pairs; allow[q*keys + k] != 0 means
// query q may attend key k. Masked logits receive -1e30 before softmax,
// which underflows to exactly zero attention weight at these scales.
struct AttnMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allow;

  static AttnMask causal(std::size_t n);
  static AttnMask full(std::size_t rows, std::size_t cols);
  bool allowed(std::size_t q, std::size_t k) const { return allow[q * cols + k] != 0; }
};

inline constexpr double kMaskFill = -1e30;

// No key-projection bias: softmax shift invariance makes it a no-op.
struct MhaParams {
  Var wq, bq, wk, wv, bv, wo, bo;
};

// Multi-head attention with projection matrices, additive masking and a
// final output projection. q/k/v are (S, D) token matrices. Throws if D is
// not divisible by heads or if any query row is fully masked.
// When `attn_capture` is non-null, the head-averaged post-softmax weights
// (one (S_q, S_k) tensor per call) are appended to it.
Var masked_multi_head_attention(Var q, Var k, Var v, const AttnMask& mask, std::size_t heads,
                                const MhaParams& p, std::vector<Tensor>* attn_capture = nullptr);

}  // namespace anacto
