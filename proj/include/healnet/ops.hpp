#pragma once

#include <cstddef>
#include <random>
#include <span>

#include "healnet/tensor.hpp"

// Differentiable operations. Image tensors are NCHW, feature tensors are
// [N, F]. Every op validates shapes and rejects non-finite inputs.
namespace healnet::ops {

/// Elementwise sum. `b` may also be a trailing-shape suffix of `a`
/// (e.g. a bias of shape [F] added to [N, F]), broadcast over leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// [m, k] x [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x [N, C, H, W], weight [O, C, K, K], bias [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dParams params = {});

/// Unpadded max pooling; ties resolve to the first maximum in scan order.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

/// [N, C, H, W] -> [N, C]
Tensor global_avg_pool(const Tensor& x);

/// Subgradient at exactly 0 is 0.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Along the last axis.
Tensor softmax(const Tensor& x);

/// Concatenation along `axis`; all other extents must agree.
Tensor concat(std::span<const Tensor> parts, std::size_t axis = 1);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Inverted dropout: in train mode each element is kept with probability
/// 1 - rate and scaled by 1 / (1 - rate). Eval mode returns `x` unchanged.
Tensor dropout(const Tensor& x, double rate, bool train, std::mt19937_64& rng);

/// [N, ...] -> [N, prod(...)]
Tensor flatten(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace healnet::ops
