// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "fmdd/tensor.hpp"

// Differentiable primitives. Every op records its backward rule on the
// calling thread's tape when an input requires grad.
namespace fmdd::ops {

inline constexpr double kLayerNormEps = 1e-5;

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Elementwise, same-shape operands.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// x[..., j] + b[j] for every leading index.
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor pow_scalar(const Tensor& x, double e);
/// max(x, lo); gradient passes only where x >= lo.
Tensor clamp_min(const Tensor& x, double lo);
Tensor log(const Tensor& x);

// Activations.
/// Exact-erf GELU.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Softmax over the last axis.
Tensor softmax(const Tensor& x);

/// Per-row normalization over the last axis (population variance).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over axis 0 of a matrix: [R x C] -> [C].
Tensor mean_rows(const Tensor& x);
/// Mean over the two trailing axes: [C x H x W] -> [C].
Tensor global_avg_pool(const Tensor& x);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
/// Sub-block [begin, end) along axis 0; rank is preserved.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Element `index` along axis 0; rank drops by one.
Tensor select(const Tensor& x, std::size_t index);
/// Columns [begin, end) of a matrix.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// Concatenation along axis 0; trailing extents must agree.
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Concatenation of matrices along axis 1.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Stack equal-shape tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);

// Convolutions (cross-correlation, zero padding).
/// x [Cin x L], w [Cout x Cin x k], bias [Cout] -> [Cout x (L + 2p - k + 1)].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding);
/// x [Cin x H x W], w [Cout x Cin x kh x kw], bias [Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// Losses.
/// Mean softmax cross-entropy of logits [B x C] against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
/// out[b] = x[b, labels[b]] for x [B x C].
Tensor pick(const Tensor& x, const std::vector<int>& labels);

}  // namespace fmdd::ops
