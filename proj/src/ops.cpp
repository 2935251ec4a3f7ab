#include "densal/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "densal/error.hpp"
#include "densal/simd/kernels.hpp"

namespace densal {
namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
    if (shape.size() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(shape));
}

struct ConvGeometry {
    std::size_t channels, height, width, kh, kw, stride, padding, out_h, out_w;

    std::size_t patch() const { return channels * kh * kw; }
    std::size_t positions() const { return out_h * out_w; }
    bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
    const std::size_t positions = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
        const T* plane = image + c * g.height * g.width;
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                T* row = cols + ((c * g.kh + i) * g.kw + j) * positions;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.padding);
                    T* out = row + oy * g.out_w;
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
                        std::fill(out, out + g.out_w, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(y) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                       static_cast<std::ptrdiff_t>(g.padding);
                        out[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width))
                                      ? T(0)
                                      : src[static_cast<std::size_t>(x)];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* image) {
    const std::size_t positions = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
        T* plane = image + c * g.height * g.width;
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const T* row = cols + ((c * g.kh + i) * g.kw + j) * positions;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.padding);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    T* dst = plane + static_cast<std::size_t>(y) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                       static_cast<std::ptrdiff_t>(g.padding);
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        dst[static_cast<std::size_t>(x)] += row[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 std::size_t stride, std::size_t padding) {
    require_rank(input.shape(), 4, "conv2d input");
    require_rank(weight.shape(), 4, "conv2d weight");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    const std::size_t batch = input.dim(0);
    const std::size_t out_channels = weight.dim(0);
    if (weight.dim(1) != input.dim(1))
        throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                         " channels but weight expects " + std::to_string(weight.dim(1)) +
                         " (input " + to_string(input.shape()) + ", weight " +
                         to_string(weight.shape()) + ")");
    if (bias && (bias->rank() != 1 || bias->dim(0) != out_channels))
        throw ShapeError("conv2d: bias shape " + to_string(bias->shape()) + " does not match " +
                         std::to_string(out_channels) + " output channels");
    const std::size_t padded_h = input.dim(2) + 2 * padding;
    const std::size_t padded_w = input.dim(3) + 2 * padding;
    if (weight.dim(2) > padded_h || weight.dim(3) > padded_w)
        throw ShapeError("conv2d: kernel " + to_string(weight.shape()) +
                         " exceeds padded input extent " + std::to_string(padded_h) + "x" +
                         std::to_string(padded_w));

    ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), weight.dim(2), weight.dim(3), stride,
                   padding,      0,            0};
    g.out_h = (padded_h - g.kh) / stride + 1;
    g.out_w = (padded_w - g.kw) / stride + 1;

    const auto& k = simd::kernels<T>();
    const std::size_t in_plane = g.channels * g.height * g.width;
    const std::size_t positions = g.positions();
    const std::size_t patch = g.patch();
    std::vector<T> out(batch * out_channels * positions, T(0));
    std::vector<T> cols(g.is_pointwise() ? 0 : patch * positions);
    const T* x = input.values().data();
    const T* w = weight.values().data();
    for (std::size_t n = 0; n < batch; ++n) {
        const T* src = x + n * in_plane;
        if (!g.is_pointwise()) {
            im2col(g, src, cols.data());
            src = cols.data();
        }
        T* dst = out.data() + n * out_channels * positions;
        k.gemm_nn(out_channels, positions, patch, w, patch, src, positions, dst, positions);
        if (bias) {
            const auto b = bias->values();
            for (std::size_t o = 0; o < out_channels; ++o)
                for (std::size_t p = 0; p < positions; ++p) dst[o * positions + p] += b[o];
        }
    }

    std::vector<Tensor<T>> inputs{input, weight};
    if (bias) inputs.push_back(*bias);
    return Tensor<T>::make_result(
        Shape{batch, out_channels, g.out_h, g.out_w}, std::move(out), "conv2d", std::move(inputs),
        [g, batch, out_channels](detail::Node<T>& self) {
            const auto& k = simd::kernels<T>();
            auto& in = *self.inputs[0];
            auto& wt = *self.inputs[1];
            const std::size_t positions = g.positions();
            const std::size_t patch = g.patch();
            const std::size_t in_plane = g.channels * g.height * g.width;
            std::vector<T> cols(patch * positions);
            std::vector<T> dcols(patch * positions);
            for (std::size_t n = 0; n < batch; ++n) {
                const T* dy = self.grad.data() + n * out_channels * positions;
                if (wt.requires_grad) {
                    const T* src = in.value.data() + n * in_plane;
                    if (!g.is_pointwise()) {
                        im2col(g, src, cols.data());
                        src = cols.data();
                    }
                    k.gemm_nt(out_channels, patch, positions, dy, positions, src, positions,
                              wt.grad.data(), patch);
                }
                if (in.requires_grad) {
                    T* dx = in.grad.data() + n * in_plane;
                    if (g.is_pointwise()) {
                        k.gemm_tn(patch, positions, out_channels, wt.value.data(), patch, dy,
                                  positions, dx, positions);
                    } else {
                        std::fill(dcols.begin(), dcols.end(), T(0));
                        k.gemm_tn(patch, positions, out_channels, wt.value.data(), patch, dy,
                                  positions, dcols.data(), positions);
                        col2im_add(g, dcols.data(), dx);
                    }
                }
                if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                    auto& db = self.inputs[2]->grad;
                    for (std::size_t o = 0; o < out_channels; ++o) {
                        T acc = 0;
                        for (std::size_t p = 0; p < positions; ++p) acc += dy[o * positions + p];
                        db[o] += acc;
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, Mode mode, T eps, T momentum) {
    require_rank(input.shape(), 4, "batchnorm input");
    if (!(eps > T(0))) throw std::invalid_argument("batchnorm: eps must be positive");
    if (!(momentum > T(0) && momentum <= T(1)))
        throw std::invalid_argument("batchnorm: momentum must lie in (0, 1]");
    const std::size_t batch = input.dim(0), channels = input.dim(1);
    const std::size_t plane = input.dim(2) * input.dim(3);
    const std::size_t count = batch * plane;
    if (gamma.size() != channels || beta.size() != channels || stats.running_mean.size() != channels ||
        stats.running_var.size() != channels)
        throw ShapeError("batchnorm: parameters do not match " + std::to_string(channels) +
                         " channels of input " + to_string(input.shape()));
    if (mode == Mode::Train && count < 2)
        throw ShapeError("batchnorm: train mode needs at least 2 values per channel, input " +
                         to_string(input.shape()));

    const T* x = input.values().data();
    const auto g = gamma.values();
    const auto b = beta.values();
    std::vector<T> xhat(input.size());
    std::vector<T> inv_std(channels);
    std::vector<T> out(input.size());
    for (std::size_t c = 0; c < channels; ++c) {
        T mu, var;
        if (mode == Mode::Train) {
            T acc = 0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t p = 0; p < plane; ++p) acc += x[(n * channels + c) * plane + p];
            mu = acc / T(count);
            T sq = 0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t p = 0; p < plane; ++p) {
                    const T d = x[(n * channels + c) * plane + p] - mu;
                    sq += d * d;
                }
            var = sq / T(count);
            stats.running_mean[c] = (T(1) - momentum) * stats.running_mean[c] + momentum * mu;
            stats.running_var[c] =
                (T(1) - momentum) * stats.running_var[c] + momentum * sq / T(count - 1);
        } else {
            mu = stats.running_mean[c];
            var = stats.running_var[c];
        }
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[c] = is;
        for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t idx = (n * channels + c) * plane + p;
                xhat[idx] = (x[idx] - mu) * is;
                out[idx] = g[c] * xhat[idx] + b[c];
            }
    }

    return Tensor<T>::make_result(
        input.shape(), std::move(out), "batchnorm", {input, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels, plane,
         mode](detail::Node<T>& self) {
            auto& in = *self.inputs[0];
            auto& gam = *self.inputs[1];
            auto& bet = *self.inputs[2];
            const T* dy = self.grad.data();
            const T count = T(batch * plane);
            for (std::size_t c = 0; c < channels; ++c) {
                T sum_dy = 0, sum_dy_xhat = 0;
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t idx = (n * channels + c) * plane + p;
                        sum_dy += dy[idx];
                        sum_dy_xhat += dy[idx] * xhat[idx];
                    }
                if (gam.requires_grad) gam.grad[c] += sum_dy_xhat;
                if (bet.requires_grad) bet.grad[c] += sum_dy;
                if (!in.requires_grad) continue;
                const T gc = gam.value[c];
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t idx = (n * channels + c) * plane + p;
                        if (mode == Mode::Train) {
                            in.grad[idx] += gc * inv_std[c] / count *
                                            (count * dy[idx] - sum_dy - xhat[idx] * sum_dy_xhat);
                        } else {
                            in.grad[idx] += gc * inv_std[c] * dy[idx];
                        }
                    }
            }
        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    std::vector<T> out(input.size());
    simd::kernels<T>().relu(out.size(), input.values().data(), out.data());
    return Tensor<T>::make_result(input.shape(), std::move(out), "relu", {input},
                                  [](detail::Node<T>& self) {
                                      auto& in = *self.inputs[0];
                                      for (std::size_t i = 0; i < in.value.size(); ++i)
                                          if (in.value[i] > T(0)) in.grad[i] += self.grad[i];
                                  });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input) {
    require_rank(input.shape(), 4, "maxpool2d input");
    const std::size_t batch = input.dim(0), channels = input.dim(1);
    const std::size_t h = input.dim(2), w = input.dim(3);
    if (h < 2 || w < 2)
        throw ShapeError("maxpool2d: spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                         " is smaller than the 2x2 window");
    const std::size_t oh = h / 2, ow = w / 2;
    std::vector<T> out(batch * channels * oh * ow);
    std::vector<std::size_t> argmax(out.size());
    const T* x = input.values().data();
    for (std::size_t nc = 0; nc < batch * channels; ++nc) {
        const T* plane = x + nc * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (2 * oy) * w + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if (plane[idx] > plane[best]) best = idx;
                    }
                const std::size_t o = (nc * oh + oy) * ow + ox;
                out[o] = plane[best];
                argmax[o] = nc * h * w + best;
            }
    }
    return Tensor<T>::make_result(Shape{batch, channels, oh, ow}, std::move(out), "maxpool2d", {input},
                                  [argmax = std::move(argmax)](detail::Node<T>& self) {
                                      auto& in = *self.inputs[0];
                                      for (std::size_t o = 0; o < argmax.size(); ++o)
                                          in.grad[argmax[o]] += self.grad[o];
                                  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    require_rank(input.shape(), 4, "global_avg_pool input");
    const std::size_t batch = input.dim(0), channels = input.dim(1);
    const std::size_t plane = input.dim(2) * input.dim(3);
    if (plane == 0) throw ShapeError("global_avg_pool: empty spatial extent");
    std::vector<T> out(batch * channels);
    const T* x = input.values().data();
    for (std::size_t nc = 0; nc < batch * channels; ++nc) {
        T acc = 0;
        for (std::size_t p = 0; p < plane; ++p) acc += x[nc * plane + p];
        out[nc] = acc / T(plane);
    }
    return Tensor<T>::make_result(Shape{batch, channels}, std::move(out), "global_avg_pool", {input},
                                  [plane](detail::Node<T>& self) {
                                      auto& in = *self.inputs[0];
                                      for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
                                          const T g = self.grad[nc] / T(plane);
                                          for (std::size_t p = 0; p < plane; ++p)
                                              in.grad[nc * plane + p] += g;
                                      }
                                  });
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> inputs) {
    if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
    const auto& first = inputs.front();
    require_rank(first.shape(), 4, "concat_channels input");
    const std::size_t batch = first.dim(0), h = first.dim(2), w = first.dim(3);
    std::size_t total = 0;
    std::vector<std::size_t> channels;
    for (const auto& t : inputs) {
        require_rank(t.shape(), 4, "concat_channels input");
        if (t.dim(0) != batch || t.dim(2) != h || t.dim(3) != w)
            throw ShapeError("concat_channels: input " + to_string(t.shape()) +
                             " does not match batch/spatial extents of " + to_string(first.shape()));
        channels.push_back(t.dim(1));
        total += t.dim(1);
    }
    const std::size_t plane = h * w;
    std::vector<T> out(batch * total * plane);
    for (std::size_t n = 0; n < batch; ++n) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const std::size_t block = channels[i] * plane;
            const T* src = inputs[i].values().data() + n * block;
            std::copy(src, src + block, out.data() + (n * total + offset) * plane);
            offset += channels[i];
        }
    }
    return Tensor<T>::make_result(
        Shape{batch, total, h, w}, std::move(out), "concat_channels",
        std::vector<Tensor<T>>(inputs.begin(), inputs.end()),
        [channels = std::move(channels), batch, total, plane](detail::Node<T>& self) {
            for (std::size_t n = 0; n < batch; ++n) {
                std::size_t offset = 0;
                for (std::size_t i = 0; i < channels.size(); ++i) {
                    auto& in = *self.inputs[i];
                    const std::size_t block = channels[i] * plane;
                    if (in.requires_grad) {
                        const T* src = self.grad.data() + (n * total + offset) * plane;
                        T* dst = in.grad.data() + n * block;
                        for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
                    }
                    offset += channels[i];
                }
            }
        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_rank(input.shape(), 2, "linear input");
    require_rank(weight.shape(), 2, "linear weight");
    const std::size_t rows = input.dim(0), din = input.dim(1), dout = weight.dim(0);
    if (weight.dim(1) != din)
        throw ShapeError("linear: input width " + std::to_string(din) + " does not match weight " +
                         to_string(weight.shape()));
    if (bias.rank() != 1 || bias.dim(0) != dout)
        throw ShapeError("linear: bias shape " + to_string(bias.shape()) + " does not match " +
                         std::to_string(dout) + " outputs");
    std::vector<T> out(rows * dout);
    const auto b = bias.values();
    for (std::size_t r = 0; r < rows; ++r) std::copy(b.begin(), b.end(), out.begin() + r * dout);
    simd::kernels<T>().gemm_nt(rows, dout, din, input.values().data(), din, weight.values().data(), din,
                               out.data(), dout);
    return Tensor<T>::make_result(
        Shape{rows, dout}, std::move(out), "linear", {input, weight, bias},
        [rows, din, dout](detail::Node<T>& self) {
            const auto& k = simd::kernels<T>();
            auto& in = *self.inputs[0];
            auto& wt = *self.inputs[1];
            auto& bs = *self.inputs[2];
            const T* dy = self.grad.data();
            if (in.requires_grad)
                k.gemm_nn(rows, din, dout, dy, dout, wt.value.data(), din, in.grad.data(), din);
            if (wt.requires_grad)
                k.gemm_tn(dout, din, rows, dy, dout, in.value.data(), din, wt.grad.data(), din);
            if (bs.requires_grad)
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t o = 0; o < dout; ++o) bs.grad[o] += dy[r * dout + o];
        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " differ");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), "add", {a, b},
                                  [](detail::Node<T>& self) {
                                      for (auto& in : self.inputs) {
                                          if (!in->requires_grad) continue;
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              in->grad[i] += self.grad[i];
                                      }
                                  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= factor;
    return Tensor<T>::make_result(a.shape(), std::move(out), "scale", {a},
                                  [factor](detail::Node<T>& self) {
                                      auto& in = *self.inputs[0];
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          in.grad[i] += factor * self.grad[i];
                                  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.values()) acc += v;
    return Tensor<T>::make_result(Shape{1}, std::vector<T>{acc}, "sum", {a},
                                  [](detail::Node<T>& self) {
                                      auto& in = *self.inputs[0];
                                      for (auto& g : in.grad) g += self.grad[0];
                                  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.size() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), T(1) / T(a.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    std::vector<T> out(a.values().begin(), a.values().end());
    return Tensor<T>::make_result(std::move(shape), std::move(out), "reshape", {a},
                                  [](detail::Node<T>& self) {
                                      auto& in = *self.inputs[0];
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          in.grad[i] += self.grad[i];
                                  });
}

template <typename T>
std::vector<T> softmax_rows(std::span<const T> scores, std::size_t classes) {
    if (classes == 0 || scores.size() % classes != 0)
        throw ShapeError("softmax_rows: " + std::to_string(scores.size()) +
                         " scores are not a multiple of " + std::to_string(classes) + " classes");
    std::vector<T> out(scores.size());
    for (std::size_t r = 0; r < scores.size() / classes; ++r) {
        const T* row = scores.data() + r * classes;
        const T mx = *std::max_element(row, row + classes);
        T total = 0;
        for (std::size_t c = 0; c < classes; ++c) total += (out[r * classes + c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < classes; ++c) out[r * classes + c] /= total;
    }
    return out;
}

#define DENSAL_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&, \
                              std::size_t, std::size_t);                                           \
    template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                 BatchNormStats<T>&, Mode, T, T);                                  \
    template Tensor<T> relu(const Tensor<T>&);                                                     \
    template Tensor<T> maxpool2d(const Tensor<T>&);                                                \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
    template Tensor<T> concat_channels(std::span<const Tensor<T>>);                                \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> scale(const Tensor<T>&, T);                                                 \
    template Tensor<T> sum(const Tensor<T>&);                                                      \
    template Tensor<T> mean(const Tensor<T>&);                                                     \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
    template std::vector<T> softmax_rows(std::span<const T>, std::size_t);

DENSAL_INSTANTIATE_OPS(float)
DENSAL_INSTANTIATE_OPS(double)

}  // namespace densal
