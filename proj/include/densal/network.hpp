#pragma once

// Densely connected convolutional backbone with an attached loss-prediction
// head.
//
//   input [N,b,m,m]
//     -> conv 3x3 stride 2 (k0) -> BN -> ReLU [-> 2x2 max pool]
//     -> dense block 1 -> transition 1 -> dense block 2 -> transition 2
//     -> dense block 3 -> transition 3 -> dense block 4
//     -> GAP -> linear -> scores [N,C]
//
// The four dense-block outputs (before their transitions) feed the loss head:
// each tap goes through GAP and a linear projection to a shared hidden width,
// the projections are summed and a final linear layer emits one scalar per
// sample.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "densal/ops.hpp"
#include "densal/tensor.hpp"

namespace densal {

struct BackboneSpec {
    std::size_t initial_channels = 64;   // k0
    std::size_t growth_rate = 32;        // k
    std::size_t bottleneck_width = 128;
    std::array<std::size_t, 4> block_sizes{6, 12, 24, 16};
    double theta = 0.5;                  // transition compression
    std::size_t num_classes = 9;
    std::size_t input_bands = 103;
    std::size_t patch_size = 32;
    bool initial_maxpool = false;
    std::size_t loss_hidden = 128;

    static BackboneSpec densenet121(std::size_t classes, std::size_t bands);
    static BackboneSpec densenet169(std::size_t classes, std::size_t bands);
    static BackboneSpec densenet201(std::size_t classes, std::size_t bands);
    // k0=16, k=8, bottleneck 32, blocks [2,2,2,2], 16x16 patches.
    static BackboneSpec tiny(std::size_t classes, std::size_t bands);
    // Resolves "densenet121" / "densenet169" / "densenet201" / "tiny".
    static BackboneSpec preset(const std::string& name, std::size_t classes, std::size_t bands);

    // Throws ConfigError; extent collapse reports every stage extent.
    void validate() const;

    // Closed-form channel bookkeeping.
    std::size_t transition_channels(std::size_t in_channels) const;
    std::array<std::size_t, 4> tap_channels() const;
    std::array<std::size_t, 3> transition_outputs() const;
    // Spatial extent entering each dense block.
    std::array<std::size_t, 4> block_extents() const;

    bool operator==(const BackboneSpec&) const = default;
};

template <typename T>
struct Conv2d {
    Tensor<T> weight;
    std::size_t stride = 1;
    std::size_t padding = 0;

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, std::optional<Tensor<T>>{}, stride, padding); }
};

template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma;
    Tensor<T> beta;
    BatchNormStats<T> stats;

    explicit BatchNorm2d(std::size_t channels = 0);
    Tensor<T> forward(const Tensor<T>& x, Mode mode) { return batchnorm(x, gamma, beta, stats, mode); }
};

template <typename T>
struct Linear {
    Tensor<T> weight;  // [out, in]
    Tensor<T> bias;    // [out]

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

// BN -> ReLU -> 1x1 conv -> BN -> ReLU -> 3x3 conv (padding 1).
template <typename T>
struct Bottleneck {
    std::size_t in_channels = 0;
    BatchNorm2d<T> norm1;
    Conv2d<T> reduce;
    BatchNorm2d<T> norm2;
    Conv2d<T> grow;

    Tensor<T> forward(const Tensor<T>& x, Mode mode);
};

template <typename T>
struct DenseBlock {
    std::vector<Bottleneck<T>> layers;

    // Observer receives (layer index, input channels) before each layer runs.
    using LayerObserver = std::function<void(std::size_t, std::size_t)>;
    Tensor<T> forward(const Tensor<T>& x, Mode mode, const LayerObserver& observer = {});
};

// 1x1 conv to floor(theta * c) channels, then 2x2 max pool stride 2.
template <typename T>
struct Transition {
    Conv2d<T> compress;

    Tensor<T> forward(const Tensor<T>& x) const;
};

template <typename T>
struct LossHead {
    std::array<Linear<T>, 4> projections;
    Linear<T> output;

    // predicted losses [N]
    Tensor<T> forward(const std::array<Tensor<T>, 4>& taps) const;
    void zero();
};

template <typename T>
struct ForwardResult {
    Tensor<T> scores;                 // [N,C]
    std::array<Tensor<T>, 4> taps;    // dense-block outputs
    Tensor<T> predicted_loss;         // [N], undefined unless requested
};

template <typename T>
class Model {
  public:
    Model(const BackboneSpec& spec, std::uint64_t seed);
    // Parameters are graph handles; copies must be explicit.
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    // Deep copy of parameters and running statistics.
    Model clone() const;

    const BackboneSpec& spec() const { return spec_; }

    // Runs the backbone; with_loss_head also evaluates the loss head. When
    // detach_taps is set the loss head sees detached copies of the taps, so its
    // gradients stop at the head.
    ForwardResult<T> forward(const Tensor<T>& batch, Mode mode, bool with_loss_head = true,
                             bool detach_taps = false);

    // Raw class scores in infer mode, no graph recorded.
    Tensor<T> classify(const Tensor<T>& batch);
    Tensor<T> predict_loss(const Tensor<T>& batch);

    // Trainable tensors in declaration order: stem, blocks and transitions,
    // classifier, loss head.
    std::vector<Tensor<T>> parameters() const;
    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
    std::size_t parameter_count() const;
    // Running batchnorm statistics in declaration order.
    std::vector<BatchNormStats<T>*> batchnorm_stats();
    std::vector<const BatchNormStats<T>*> batchnorm_stats() const;

    LossHead<T>& loss_head() { return head_; }
    std::array<DenseBlock<T>, 4>& blocks() { return blocks_; }
    std::array<Transition<T>, 3>& transitions() { return transitions_; }

    void zero_grad();

  private:
    void check_input(const Tensor<T>& batch) const;

    BackboneSpec spec_;
    Conv2d<T> stem_;
    BatchNorm2d<T> stem_norm_;
    std::array<DenseBlock<T>, 4> blocks_;
    std::array<Transition<T>, 3> transitions_;
    Linear<T> classifier_;
    LossHead<T> head_;
};

template <typename T>
Model<T> build_model(const BackboneSpec& spec, std::uint64_t seed) {
    return Model<T>(spec, seed);
}

// Checkpoint: self-describing binary with the spec, all parameters in
// declaration order and the running batchnorm statistics, stored as float32.
void save_checkpoint(const Model<float>& model, std::ostream& out);
void save_checkpoint(const Model<float>& model, const std::string& path);
Model<float> load_checkpoint(std::istream& in);
Model<float> load_checkpoint(const std::string& path);

}  // namespace densal
