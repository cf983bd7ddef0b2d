#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "invdriver/mask.hpp"
#include "invdriver/tensor.hpp"

namespace invd::ad {

// Matrix product over the last two axes. Leading (batch) axes must match, or
// one operand may be a plain 2-D matrix that is broadcast over the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

// Elementwise. `b` may also be a suffix-shaped tensor broadcast over the leading axes of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// [A, B, C] -> [B, A, C]
Tensor swap_axes01(const Tensor& x);
// Contiguous block of `count` entries along axis 0.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
// [A, B, C] -> [A, C], averaging over the middle axis.
Tensor mean_axis1(const Tensor& x);
// Running sum along axis -2 of [..., P, F].
Tensor cumsum_points(const Tensor& x);

// a [n, d], b [p, d] -> [n*p, d] with row i*p + j = a[i] + b[j].
Tensor pairwise_add(const Tensor& a, const Tensor& b);

// Softmax over the last axis of [..., q, k] restricted to entries allowed by `mask` [q, k].
// Blocked entries are exactly 0 in the output and receive exactly 0 gradient.
Tensor masked_softmax(const Tensor& logits, const IntraInstanceMask& mask);
Tensor softmax(const Tensor& logits);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// x [..., d_in] * w [d_in, d_out] + b [d_out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Mean absolute difference; subgradient 0 at ties.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

// Mean over rows of -log softmax(logits[i])[targets[i]].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
// Mean binary cross-entropy with logits.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);

// Mean over the p-1 edges of (1 - cos(pred edge, target edge)).
// A zero-length target edge contributes 0; a zero-length predicted edge counts
// as orthogonal (contributes 1) and passes no gradient.
Tensor direction_loss(const Tensor& pred, const Tensor& target);

}  // namespace invd::ad
