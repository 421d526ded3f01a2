#pragma once

#include <cstddef>
#include <vector>

#include "space/tensor.hpp"

// Differentiable operations. Every op records onto the calling thread's
// active tape when grad mode is on and at least one input requires grad.
namespace space::ops {

// Elementwise with right-aligned broadcasting (size-1 axes expand).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
/// x·ln x with 0·ln 0 = 0; gradient at exactly 0 is taken as 0.
template <typename T> Tensor<T> xlogx(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);
/// Arithmetic mean along `axis`; the axis is removed.
template <typename T> Tensor<T> mean_pool(const Tensor<T>& x, std::size_t axis);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& index);
/// Places slice i of `x` at position index[i] of a zero tensor with `extent`
/// entries along `axis`; duplicate targets accumulate.
template <typename T>
Tensor<T> index_scatter(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& index,
                        std::size_t extent);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

/// a[..., m, k] @ b[..., k, n]. Batch extents must match, or b is 2-D and
/// shared across the batch.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., in] @ weight[in, out] + bias[out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// x[B, C_in, L], weight[C_out, C_in, k], bias[C_out] (optional).
/// Output length floor((L + 2*pad - k)/stride) + 1.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);
/// Non-overlapping max over windows of `window` along the last axis.
template <typename T> Tensor<T> max_pool1d(const Tensor<T>& x, std::size_t window);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
/// Softmax over the k largest entries of each last-axis row (lowest index
/// wins ties); every other entry is exactly zero.
template <typename T> Tensor<T> topk_softmax(const Tensor<T>& logits, std::size_t k);
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

}  // namespace space::ops
