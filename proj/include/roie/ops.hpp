#pragma once

// Differentiable tensor operations. All take and return 4-D N×C×H×W tensors;
// "vectors" such as dense activations are N×C×1×1 and scalars are 1×1×1×1.
// Every operation raises ShapeError on incompatible shapes before touching
// any data.

#include "roie/tensor.hpp"

namespace roie {

enum class Mode { train, eval };

// 3×3 depthwise cross-correlation, stride 1, zero padding 1.
// weight: C×1×3×3, bias (optional): 1×C×1×1.
template <typename T>
Tensor<T> conv2d_depthwise(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias = {});

// 1×1 convolution. weight: Cout×Cin×1×1, bias (optional): 1×Cout×1×1.
template <typename T>
Tensor<T> conv2d_pointwise(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias = {});

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

// Per-channel normalization over (N, H, W). In train mode the batch
// statistics are used and the running buffers (1×C×1×1, not differentiable)
// are updated in place with an unbiased variance estimate; in eval mode the
// running buffers are used.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     BatchNormOptions options = {});

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// 2×2 window, stride 2. Backward routes to the first maximum in row-major
// window order.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x);

// Bilinear ×2 upsampling, half-pixel centers: source coordinate
// (i + 0.5) / 2 - 0.5 clamped to [0, size - 1].
template <typename T>
Tensor<T> upsample_bilinear2(const Tensor<T>& x);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs);

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t begin, int64_t count);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// Affine map on the flattened C·H·W features of each batch row.
// weight: K×F×1×1 with F = C·H·W; bias (optional): 1×K×1×1. Output N×K×1×1.
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// Elementwise product/sum. A 1-channel operand broadcasts across the channel
// dimension of a C-channel operand with the same N, H, W.
template <typename T>
Tensor<T> ew_mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> ew_add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s);

// x (N×C×H×W) times a per-(n, c) factor s (N×C×1×1).
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy over all elements. x is clamped to
// [1e-7, 1 - 1e-7]; y is treated as a constant target.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& x, const Tensor<T>& y);

}  // namespace roie
