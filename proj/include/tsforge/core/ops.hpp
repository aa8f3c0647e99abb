#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "tsforge/core/tensor.hpp"

namespace tsforge {

enum class ElementwiseOp { add, sub, mul, div, exp, log, tanh, relu, gelu, sigmoid, power };

/// Dispatches one of the supported elementwise ops. Binary tags require `b`
/// and broadcast with trailing-dimension alignment.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const std::optional<Tensor>& b = std::nullopt);

// Binary arithmetic, broadcasting over aligned trailing dims (size-1 extents expand).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor power(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor pow_scalar(const Tensor& a, double p);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);
// Huber elementwise penalty of the residual: 0.5 r^2 when |r| <= delta, delta (|r| - delta/2) otherwise.
Tensor huber(const Tensor& residual, double delta);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }

// Reductions. Negative axes count from the end.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);

/// Batched matrix product a[..., M, K] x b[..., K, N] with broadcast batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

/// Normalises over the last axis, then applies gamma * x + beta (both [D]).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Shape manipulation. All of these copy; tensors are immutable.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Selects entries along `axis` by index (indices may repeat).
Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices);
/// Repeats a tensor `times` along a new leading axis.
Tensor repeat_leading(const Tensor& x, std::size_t times);

/// Real DFT along the last axis (unnormalised forward). Returns (re, im) with
/// floor(L/2)+1 bins each.
std::pair<Tensor, Tensor> rfft(const Tensor& x);
/// Inverse of rfft with 1/L scaling; `length` is the output length L.
Tensor irfft(const Tensor& re, const Tensor& im, std::size_t length);

/// Centred moving average along `axis` with replicate edge padding. `kernel` must be odd.
Tensor moving_average(const Tensor& x, int axis, std::size_t kernel);
/// Non-overlapping average pooling along `axis`; a trailing remainder is dropped.
Tensor avg_pool(const Tensor& x, int axis, std::size_t window);

/// Global L2 norm over a set of gradients.
double grad_norm(const std::vector<Tensor>& params);

bool all_finite(const Tensor& t);

}  // namespace tsforge
