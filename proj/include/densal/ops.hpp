#pragma once

// Differentiable operators over NCHW tensors.

#include <optional>
#include <span>
#include <vector>

#include "densal/tensor.hpp"

namespace densal {

enum class Mode { Train, Infer };

// Cross-correlation (no kernel flip). weight is [Cout, Cin, kh, kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 std::size_t stride, std::size_t padding);

template <typename T>
struct BatchNormStats {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    explicit BatchNormStats(std::size_t channels = 0)
        : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Train mode normalizes with biased batch statistics and folds the batch mean
// and unbiased variance into stats with weight momentum. Infer mode uses stats.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, Mode mode, T eps = T(kBatchNormEps),
                    T momentum = T(kBatchNormMomentum));

// Subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// 2x2 window, stride 2, floor semantics. Gradient goes to the first maximum
// in row-major window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input);

// [N,C,H,W] -> [N,C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> inputs);

// [N,Din] x [Dout,Din]^T + [Dout] -> [N,Dout]
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Row-wise softmax of a [N,C] value buffer; not differentiable.
template <typename T>
std::vector<T> softmax_rows(std::span<const T> scores, std::size_t classes);

}  // namespace densal
