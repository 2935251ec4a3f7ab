#include "densal/network.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "densal/binary_io.hpp"
#include "densal/error.hpp"

namespace densal {

BackboneSpec BackboneSpec::densenet121(std::size_t classes, std::size_t bands) {
    BackboneSpec s;
    s.block_sizes = {6, 12, 24, 16};
    s.num_classes = classes;
    s.input_bands = bands;
    return s;
}

BackboneSpec BackboneSpec::densenet169(std::size_t classes, std::size_t bands) {
    auto s = densenet121(classes, bands);
    s.block_sizes = {6, 12, 32, 32};
    return s;
}

BackboneSpec BackboneSpec::densenet201(std::size_t classes, std::size_t bands) {
    auto s = densenet121(classes, bands);
    s.block_sizes = {6, 12, 48, 32};
    return s;
}

BackboneSpec BackboneSpec::tiny(std::size_t classes, std::size_t bands) {
    BackboneSpec s;
    s.initial_channels = 16;
    s.growth_rate = 8;
    s.bottleneck_width = 32;
    s.block_sizes = {2, 2, 2, 2};
    s.theta = 0.5;
    s.num_classes = classes;
    s.input_bands = bands;
    s.patch_size = 16;
    s.loss_hidden = 128;
    return s;
}

BackboneSpec BackboneSpec::preset(const std::string& name, std::size_t classes, std::size_t bands) {
    if (name == "densenet121") return densenet121(classes, bands);
    if (name == "densenet169") return densenet169(classes, bands);
    if (name == "densenet201") return densenet201(classes, bands);
    if (name == "tiny") return tiny(classes, bands);
    throw ConfigError("preset: unknown backbone preset '" + name +
                      "' (valid: densenet121, densenet169, densenet201, tiny)");
}

std::size_t BackboneSpec::transition_channels(std::size_t in_channels) const {
    return static_cast<std::size_t>(std::floor(theta * static_cast<double>(in_channels)));
}

std::array<std::size_t, 4> BackboneSpec::tap_channels() const {
    std::array<std::size_t, 4> taps{};
    std::size_t c = initial_channels;
    for (std::size_t b = 0; b < 4; ++b) {
        c += block_sizes[b] * growth_rate;
        taps[b] = c;
        if (b < 3) c = transition_channels(c);
    }
    return taps;
}

std::array<std::size_t, 3> BackboneSpec::transition_outputs() const {
    const auto taps = tap_channels();
    return {transition_channels(taps[0]), transition_channels(taps[1]), transition_channels(taps[2])};
}

std::array<std::size_t, 4> BackboneSpec::block_extents() const {
    std::array<std::size_t, 4> extents{};
    std::size_t e = patch_size >= 2 ? (patch_size - 1) / 2 + 1 : 0;  // 3x3, stride 2, padding 1
    if (initial_maxpool) e /= 2;
    for (std::size_t b = 0; b < 4; ++b) {
        extents[b] = e;
        e /= 2;
    }
    return extents;
}

void BackboneSpec::validate() const {
    if (!(theta > 0.0 && theta <= 1.0))
        throw ConfigError("theta: compression factor must lie in (0, 1], got " + std::to_string(theta));
    if (num_classes < 2) throw ConfigError("num_classes: need at least 2 classes");
    if (input_bands < 1) throw ConfigError("input_bands: need at least 1 band");
    if (patch_size < 4) throw ConfigError("patch_size: must be at least 4");
    if (initial_channels < 1 || growth_rate < 1 || bottleneck_width < 1 || loss_hidden < 1)
        throw ConfigError("initial_channels, growth_rate, bottleneck_width and loss_hidden must be >= 1");
    const auto taps = tap_channels();
    for (std::size_t b = 0; b < 3; ++b)
        if (transition_channels(taps[b]) < 1)
            throw ConfigError("theta: transition " + std::to_string(b + 1) + " compresses " +
                              std::to_string(taps[b]) + " channels to zero");

    // Trace extents stage by stage; every pooling stage needs at least 2x2.
    std::ostringstream trace;
    std::size_t e = patch_size;
    trace << "input " << e;
    e = (e - 1) / 2 + 1;
    trace << " -> stem " << e;
    bool collapsed = false;
    if (initial_maxpool) {
        if (e < 2) collapsed = true;
        e /= 2;
        trace << " -> maxpool " << e;
    }
    for (std::size_t b = 0; b < 4 && !collapsed; ++b) {
        trace << " -> block" << b + 1 << " " << e;
        if (b < 3) {
            if (e < 2) {
                collapsed = true;
                break;
            }
            e /= 2;
            trace << " -> transition" << b + 1 << " " << e;
        }
    }
    if (collapsed || e < 1)
        throw ConfigError("patch_size: spatial extent collapses below 1 before global pooling (" +
                          trace.str() + ")");
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels)
    : gamma(Tensor<T>::full({channels}, T(1), true)),
      beta(Tensor<T>::zeros({channels}, true)),
      stats(channels) {}

template <typename T>
Tensor<T> Bottleneck<T>::forward(const Tensor<T>& x, Mode mode) {
    if (x.dim(1) != in_channels)
        throw ShapeError("bottleneck: expected " + std::to_string(in_channels) + " input channels, got " +
                         std::to_string(x.dim(1)));
    auto h = relu(norm1.forward(x, mode));
    h = reduce.forward(h);
    h = relu(norm2.forward(h, mode));
    return grow.forward(h);
}

template <typename T>
Tensor<T> DenseBlock<T>::forward(const Tensor<T>& x, Mode mode, const LayerObserver& observer) {
    std::vector<Tensor<T>> features{x};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto input = features.size() == 1 ? features.front()
                                          : concat_channels(std::span<const Tensor<T>>(features));
        if (observer) observer(l, input.dim(1));
        features.push_back(layers[l].forward(input, mode));
    }
    if (features.size() == 1) return x;
    return concat_channels(std::span<const Tensor<T>>(features));
}

template <typename T>
Tensor<T> Transition<T>::forward(const Tensor<T>& x) const {
    if (x.dim(2) < 2 || x.dim(3) < 2)
        throw ShapeError("transition: spatial extent " + std::to_string(x.dim(2)) + "x" +
                         std::to_string(x.dim(3)) + " is below 2");
    return maxpool2d(compress.forward(x));
}

template <typename T>
Tensor<T> LossHead<T>::forward(const std::array<Tensor<T>, 4>& taps) const {
    Tensor<T> hidden;
    for (std::size_t i = 0; i < 4; ++i) {
        auto projected = projections[i].forward(global_avg_pool(taps[i]));
        hidden = hidden.defined() ? add(hidden, projected) : projected;
    }
    auto out = output.forward(hidden);
    return reshape(out, Shape{out.dim(0)});
}

template <typename T>
void LossHead<T>::zero() {
    auto clear = [](Tensor<T>& t) { std::fill(t.mutable_values().begin(), t.mutable_values().end(), T(0)); };
    for (auto& p : projections) {
        clear(p.weight);
        clear(p.bias);
    }
    clear(output.weight);
    clear(output.bias);
}

namespace {

template <typename T>
class Initializer {
  public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    // He-style uniform bound for convolutions feeding ReLU stacks.
    Conv2d<T> conv(std::size_t out, std::size_t in, std::size_t kernel, std::size_t stride,
                   std::size_t padding) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in * kernel * kernel));
        return {uniform({out, in, kernel, kernel}, bound), stride, padding};
    }

    Linear<T> dense(std::size_t out, std::size_t in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        auto weight = uniform({out, in}, bound);
        auto bias = uniform({out}, bound);
        return {weight, bias};
    }

  private:
    Tensor<T> uniform(Shape shape, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<T> values(numel(shape));
        for (auto& v : values) v = static_cast<T>(dist(rng_));
        return Tensor<T>::from(std::move(shape), std::move(values), true);
    }

    std::mt19937_64 rng_;
};

}  // namespace

template <typename T>
Model<T>::Model(const BackboneSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Initializer<T> init(seed);
    stem_ = init.conv(spec_.initial_channels, spec_.input_bands, 3, 2, 1);
    stem_norm_ = BatchNorm2d<T>(spec_.initial_channels);
    std::size_t c = spec_.initial_channels;
    for (std::size_t b = 0; b < 4; ++b) {
        for (std::size_t l = 0; l < spec_.block_sizes[b]; ++l) {
            Bottleneck<T> layer;
            layer.in_channels = c;
            layer.norm1 = BatchNorm2d<T>(c);
            layer.reduce = init.conv(spec_.bottleneck_width, c, 1, 1, 0);
            layer.norm2 = BatchNorm2d<T>(spec_.bottleneck_width);
            layer.grow = init.conv(spec_.growth_rate, spec_.bottleneck_width, 3, 1, 1);
            blocks_[b].layers.push_back(std::move(layer));
            c += spec_.growth_rate;
        }
        if (b < 3) {
            const std::size_t next = spec_.transition_channels(c);
            transitions_[b].compress = init.conv(next, c, 1, 1, 0);
            c = next;
        }
    }
    classifier_ = init.dense(spec_.num_classes, c);
    const auto taps = spec_.tap_channels();
    for (std::size_t i = 0; i < 4; ++i) head_.projections[i] = init.dense(spec_.loss_hidden, taps[i]);
    head_.output = init.dense(1, spec_.loss_hidden);
}

template <typename T>
void Model<T>::check_input(const Tensor<T>& batch) const {
    if (batch.rank() != 4)
        throw ShapeError("model input must be [N,b,m,m], got " + to_string(batch.shape()));
    if (batch.dim(1) != spec_.input_bands)
        throw ShapeError("model expects " + std::to_string(spec_.input_bands) + " bands, got " +
                         std::to_string(batch.dim(1)));
    if (batch.dim(2) != spec_.patch_size || batch.dim(3) != spec_.patch_size)
        throw ShapeError("model expects " + std::to_string(spec_.patch_size) + "x" +
                         std::to_string(spec_.patch_size) + " patches, got " + to_string(batch.shape()));
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& batch, Mode mode, bool with_loss_head,
                                   bool detach_taps) {
    check_input(batch);
    ForwardResult<T> result;
    auto h = relu(stem_norm_.forward(stem_.forward(batch), mode));
    if (spec_.initial_maxpool) h = maxpool2d(h);
    for (std::size_t b = 0; b < 4; ++b) {
        h = blocks_[b].forward(h, mode);
        result.taps[b] = h;
        if (b < 3) h = transitions_[b].forward(h);
    }
    result.scores = classifier_.forward(global_avg_pool(h));
    if (with_loss_head) {
        if (detach_taps) {
            std::array<Tensor<T>, 4> cut;
            for (std::size_t i = 0; i < 4; ++i) cut[i] = result.taps[i].detach();
            result.predicted_loss = head_.forward(cut);
        } else {
            result.predicted_loss = head_.forward(result.taps);
        }
    }
    return result;
}

template <typename T>
Tensor<T> Model<T>::classify(const Tensor<T>& batch) {
    NoGradGuard guard;
    return forward(batch, Mode::Infer, false).scores;
}

template <typename T>
Tensor<T> Model<T>::predict_loss(const Tensor<T>& batch) {
    NoGradGuard guard;
    return forward(batch, Mode::Infer, true).predicted_loss;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto bn = [&](const std::string& prefix, const BatchNorm2d<T>& n) {
        out.emplace_back(prefix + ".gamma", n.gamma);
        out.emplace_back(prefix + ".beta", n.beta);
    };
    auto lin = [&](const std::string& prefix, const Linear<T>& l) {
        out.emplace_back(prefix + ".weight", l.weight);
        out.emplace_back(prefix + ".bias", l.bias);
    };
    out.emplace_back("stem.weight", stem_.weight);
    bn("stem.norm", stem_norm_);
    for (std::size_t b = 0; b < 4; ++b) {
        for (std::size_t l = 0; l < blocks_[b].layers.size(); ++l) {
            const auto& layer = blocks_[b].layers[l];
            const std::string prefix = "block" + std::to_string(b + 1) + ".layer" + std::to_string(l);
            bn(prefix + ".norm1", layer.norm1);
            out.emplace_back(prefix + ".reduce.weight", layer.reduce.weight);
            bn(prefix + ".norm2", layer.norm2);
            out.emplace_back(prefix + ".grow.weight", layer.grow.weight);
        }
        if (b < 3)
            out.emplace_back("transition" + std::to_string(b + 1) + ".weight",
                             transitions_[b].compress.weight);
    }
    lin("classifier", classifier_);
    for (std::size_t i = 0; i < 4; ++i) lin("loss_head.projection" + std::to_string(i), head_.projections[i]);
    lin("loss_head.output", head_.output);
    return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : parameters()) total += p.size();
    return total;
}

template <typename T>
std::vector<BatchNormStats<T>*> Model<T>::batchnorm_stats() {
    std::vector<BatchNormStats<T>*> out{&stem_norm_.stats};
    for (auto& block : blocks_)
        for (auto& layer : block.layers) {
            out.push_back(&layer.norm1.stats);
            out.push_back(&layer.norm2.stats);
        }
    return out;
}

template <typename T>
std::vector<const BatchNormStats<T>*> Model<T>::batchnorm_stats() const {
    auto stats = const_cast<Model*>(this)->batchnorm_stats();
    return {stats.begin(), stats.end()};
}

template <typename T>
Model<T> Model<T>::clone() const {
    Model copy(spec_, 0);
    auto dst = copy.parameters();
    const auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
        std::copy(src[i].values().begin(), src[i].values().end(), dst[i].mutable_values().begin());
    auto dst_stats = copy.batchnorm_stats();
    const auto src_stats = batchnorm_stats();
    for (std::size_t i = 0; i < src_stats.size(); ++i) *dst_stats[i] = *src_stats[i];
    return copy;
}

template <typename T>
void Model<T>::zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
}

template struct BatchNorm2d<float>;
template struct BatchNorm2d<double>;
template struct Bottleneck<float>;
template struct Bottleneck<double>;
template struct DenseBlock<float>;
template struct DenseBlock<double>;
template struct Transition<float>;
template struct Transition<double>;
template struct LossHead<float>;
template struct LossHead<double>;
template class Model<float>;
template class Model<double>;

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kCheckpointMagic[] = "DNSLCKP1";
constexpr std::uint32_t kCheckpointVersion = 1;

void write_spec(std::ostream& out, const BackboneSpec& s) {
    io::write<std::uint64_t>(out, s.initial_channels);
    io::write<std::uint64_t>(out, s.growth_rate);
    io::write<std::uint64_t>(out, s.bottleneck_width);
    for (auto n : s.block_sizes) io::write<std::uint64_t>(out, n);
    io::write<double>(out, s.theta);
    io::write<std::uint64_t>(out, s.num_classes);
    io::write<std::uint64_t>(out, s.input_bands);
    io::write<std::uint64_t>(out, s.patch_size);
    io::write<std::uint8_t>(out, s.initial_maxpool ? 1 : 0);
    io::write<std::uint64_t>(out, s.loss_hidden);
}

BackboneSpec read_spec(std::istream& in) {
    BackboneSpec s;
    s.initial_channels = io::read<std::uint64_t>(in, "spec");
    s.growth_rate = io::read<std::uint64_t>(in, "spec");
    s.bottleneck_width = io::read<std::uint64_t>(in, "spec");
    for (auto& n : s.block_sizes) n = io::read<std::uint64_t>(in, "spec");
    s.theta = io::read<double>(in, "spec");
    s.num_classes = io::read<std::uint64_t>(in, "spec");
    s.input_bands = io::read<std::uint64_t>(in, "spec");
    s.patch_size = io::read<std::uint64_t>(in, "spec");
    s.initial_maxpool = io::read<std::uint8_t>(in, "spec") != 0;
    s.loss_hidden = io::read<std::uint64_t>(in, "spec");
    return s;
}

}  // namespace

void save_checkpoint(const Model<float>& model, std::ostream& out) {
    out.write(kCheckpointMagic, 8);
    io::write<std::uint32_t>(out, kCheckpointVersion);
    write_spec(out, model.spec());
    const auto params = model.named_parameters();
    io::write<std::uint64_t>(out, params.size());
    for (const auto& [name, t] : params) {
        io::write_string(out, name);
        io::write<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) io::write<std::uint64_t>(out, d);
        io::write_array(out, t.values().data(), t.size());
    }
    const auto stats = model.batchnorm_stats();
    io::write<std::uint64_t>(out, stats.size());
    for (const auto* s : stats) {
        io::write<std::uint64_t>(out, s->running_mean.size());
        io::write_array(out, s->running_mean.data(), s->running_mean.size());
        io::write_array(out, s->running_var.data(), s->running_var.size());
    }
    if (!out) throw std::runtime_error("failed to write checkpoint");
}

void save_checkpoint(const Model<float>& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    save_checkpoint(model, out);
}

Model<float> load_checkpoint(std::istream& in) {
    io::expect_magic(in, kCheckpointMagic);
    const auto version = io::read<std::uint32_t>(in, "checkpoint version");
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto spec = read_spec(in);
    Model<float> model(spec, 0);
    auto params = model.named_parameters();
    const auto count = io::read<std::uint64_t>(in, "parameter count");
    if (count != params.size())
        throw FormatError("checkpoint holds " + std::to_string(count) + " parameter tensors, spec needs " +
                          std::to_string(params.size()));
    for (auto& [name, t] : params) {
        const auto stored = io::read_string(in, "parameter name");
        if (stored != name) throw FormatError("checkpoint parameter '" + stored + "' where '" + name + "' expected");
        const auto rank = io::read<std::uint32_t>(in, "parameter rank");
        Shape shape(rank);
        for (auto& d : shape) d = io::read<std::uint64_t>(in, "parameter shape");
        if (shape != t.shape())
            throw FormatError("checkpoint parameter '" + name + "' has shape " + to_string(shape) +
                              ", expected " + to_string(t.shape()));
        const auto values = io::read_array<float>(in, t.size(), name.c_str());
        std::copy(values.begin(), values.end(), t.mutable_values().begin());
    }
    auto stats = model.batchnorm_stats();
    const auto nstats = io::read<std::uint64_t>(in, "batchnorm count");
    if (nstats != stats.size()) throw FormatError("checkpoint batchnorm count mismatch");
    for (auto* s : stats) {
        const auto channels = io::read<std::uint64_t>(in, "batchnorm channels");
        if (channels != s->running_mean.size()) throw FormatError("checkpoint batchnorm channel mismatch");
        s->running_mean = io::read_array<float>(in, channels, "running mean");
        s->running_var = io::read_array<float>(in, channels, "running variance");
    }
    return model;
}

Model<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    return load_checkpoint(in);
}

}  // namespace densal
