#include <doctest.h>

#include <random>
#include <sstream>

#include "densal/error.hpp"
#include "densal/losses.hpp"
#include "densal/network.hpp"
#include "support/gradcheck.hpp"

using namespace densal;
using namespace densal::testing;

namespace {

// Independent hand count: stem conv + BN, bottlenecks, transitions,
// classifier and loss head. Convolutions carry no bias.
std::size_t hand_parameter_count(const BackboneSpec& s) {
    std::size_t total = s.initial_channels * s.input_bands * 9 + 2 * s.initial_channels;
    std::size_t c = s.initial_channels;
    std::size_t taps[4];
    for (int b = 0; b < 4; ++b) {
        for (std::size_t l = 0; l < s.block_sizes[b]; ++l) {
            total += 2 * c + c * s.bottleneck_width + 2 * s.bottleneck_width + s.bottleneck_width * s.growth_rate * 9;
            c += s.growth_rate;
        }
        taps[b] = c;
        if (b < 3) {
            const auto out = static_cast<std::size_t>(s.theta * static_cast<double>(c));
            total += c * out;
            c = out;
        }
    }
    total += c * s.num_classes + s.num_classes;
    for (auto t : taps) total += t * s.loss_hidden + s.loss_hidden;
    total += s.loss_hidden + 1;
    return total;
}

Tensor<float> random_batch(std::size_t n, const BackboneSpec& s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0, 1);
    std::vector<float> v(n * s.input_bands * s.patch_size * s.patch_size);
    for (auto& x : v) x = u(rng);
    return Tensor<float>::from({n, s.input_bands, s.patch_size, s.patch_size}, std::move(v));
}

}  // namespace

TEST_CASE("preset channel arithmetic") {
    const auto d121 = BackboneSpec::densenet121(9, 103);
    CHECK(d121.tap_channels() == std::array<std::size_t, 4>{256, 512, 1024, 1024});
    CHECK(d121.transition_outputs() == std::array<std::size_t, 3>{128, 256, 512});
    const auto d169 = BackboneSpec::densenet169(9, 103);
    CHECK(d169.tap_channels() == std::array<std::size_t, 4>{256, 512, 1280, 1664});
    CHECK(d169.transition_outputs() == std::array<std::size_t, 3>{128, 256, 640});
    const auto d201 = BackboneSpec::densenet201(9, 103);
    CHECK(d201.tap_channels() == std::array<std::size_t, 4>{256, 512, 1792, 1920});
    CHECK(d201.transition_outputs() == std::array<std::size_t, 3>{128, 256, 896});
    const auto tiny = BackboneSpec::tiny(4, 8);
    CHECK(tiny.tap_channels() == std::array<std::size_t, 4>{32, 32, 32, 32});
    CHECK(tiny.transition_outputs() == std::array<std::size_t, 3>{16, 16, 16});
    CHECK(tiny.transition_channels(511) == 511 / 2);
    CHECK(BackboneSpec::preset("densenet169", 2, 1) == BackboneSpec::densenet169(2, 1));
    CHECK_THROWS_AS(BackboneSpec::preset("resnet50", 2, 1), ConfigError);
}

TEST_CASE("built models honour the closed-form channel counts") {
    for (const auto& name : {"tiny", "densenet121"}) {
        auto spec = BackboneSpec::preset(name, 3, 2);
        spec.patch_size = 16;
        Model<float> model(spec, 1);
        auto out = model.forward(random_batch(2, spec, 2), Mode::Infer);
        const auto taps = spec.tap_channels();
        for (int b = 0; b < 4; ++b) CHECK(out.taps[b].dim(1) == taps[b]);
        CHECK(out.scores.shape() == Shape{2, 3});
        CHECK(out.predicted_loss.shape() == Shape{2});
        for (std::size_t t = 0; t < 3; ++t)
            CHECK(model.transitions()[t].compress.weight.dim(0) == spec.transition_outputs()[t]);
    }
}

TEST_CASE("randomized dense blocks map cin to cin + n*k with per-layer instrumentation") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<std::size_t> small(1, 6);
        BackboneSpec spec = BackboneSpec::tiny(2, small(rng));
        spec.initial_channels = small(rng) * 2;
        spec.growth_rate = small(rng);
        spec.bottleneck_width = small(rng) * 2;
        spec.block_sizes = {small(rng), small(rng), 1, 1};
        spec.theta = std::uniform_real_distribution<double>(0.3, 1.0)(rng);
        spec.patch_size = 16;
        spec.loss_hidden = 4;
        Model<float> model(spec, trial);
        auto& block = model.blocks()[0];
        const std::size_t cin = spec.initial_channels;
        std::vector<std::size_t> seen;
        auto x = random_batch(2, spec, trial);
        auto input = Tensor<float>::zeros({2, cin, 4, 4});
        auto y = block.forward(input, Mode::Infer, [&](std::size_t, std::size_t c) { seen.push_back(c); });
        REQUIRE(seen.size() == spec.block_sizes[0]);
        for (std::size_t l = 0; l < seen.size(); ++l) CHECK(seen[l] == cin + l * spec.growth_rate);
        CHECK(y.dim(1) == cin + spec.block_sizes[0] * spec.growth_rate);
        CHECK(y.dim(2) == 4);
        const auto out = model.forward(x, Mode::Infer);
        CHECK(out.taps[1].dim(1) == spec.tap_channels()[1]);
    }
}

TEST_CASE("an empty dense block is the identity") {
    DenseBlock<float> block;
    auto x = Tensor<float>::full({1, 3, 2, 2}, 0.5f);
    auto y = block.forward(x, Mode::Infer);
    CHECK(y.shape() == x.shape());
    CHECK(std::equal(y.values().begin(), y.values().end(), x.values().begin()));
}

TEST_CASE("bottleneck shape contract and channel mismatch") {
    auto spec = BackboneSpec::densenet121(2, 1);
    spec.patch_size = 32;
    Model<float> model(spec, 3);
    auto& first = model.blocks()[0].layers[0];
    CHECK(first.in_channels == 64);
    CHECK(first.reduce.weight.shape() == Shape{128, 64, 1, 1});
    CHECK(first.grow.weight.shape() == Shape{32, 128, 3, 3});
    auto y = first.forward(Tensor<float>::zeros({1, 64, 8, 8}), Mode::Infer);
    CHECK(y.shape() == Shape{1, 32, 8, 8});
    CHECK_THROWS_AS(first.forward(Tensor<float>::zeros({1, 63, 8, 8}), Mode::Infer), ShapeError);
}

TEST_CASE("tiny preset parameter count matches a hand count") {
    const auto spec = BackboneSpec::tiny(4, 8);
    Model<float> model(spec, 0);
    CHECK(model.parameter_count() == hand_parameter_count(spec));
    const auto d121 = BackboneSpec::densenet121(9, 103);
    CHECK(Model<float>(d121, 0).parameter_count() == hand_parameter_count(d121));
}

TEST_CASE("backbone description validation") {
    auto s = BackboneSpec::tiny(4, 8);
    s.theta = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = BackboneSpec::tiny(4, 8);
    s.num_classes = 1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = BackboneSpec::tiny(4, 8);
    s.patch_size = 8;
    try {
        s.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("patch_size") != std::string::npos);
    }
    s = BackboneSpec::tiny(4, 8);
    s.theta = 1.0;
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("classification contract") {
    const auto spec = BackboneSpec::tiny(5, 3);
    Model<float> model(spec, 9);
    auto x = random_batch(3, spec, 4);
    const auto scores = model.classify(x);
    REQUIRE(scores.shape() == Shape{3, 5});
    const auto p = softmax_rows<float>(scores.values(), 5);
    for (std::size_t r = 0; r < 3; ++r) {
        double total = 0;
        for (std::size_t c = 0; c < 5; ++c) total += p[r * 5 + c];
        CHECK(total == doctest::Approx(1).epsilon(1e-6));
    }
    CHECK_THROWS_AS(model.classify(Tensor<float>::zeros({1, 4, 16, 16})), ShapeError);
    CHECK_THROWS_AS(model.classify(Tensor<float>::zeros({1, 3, 15, 15})), ShapeError);
}

TEST_CASE("infer mode is independent of batch composition") {
    const auto spec = BackboneSpec::tiny(3, 2);
    Model<float> model(spec, 2);
    // Move the running statistics away from their initial values.
    for (int i = 0; i < 3; ++i) model.forward(random_batch(4, spec, 10 + i), Mode::Train);
    auto a = random_batch(1, spec, 20);
    auto b = random_batch(3, spec, 21);
    std::vector<float> joined(a.values().begin(), a.values().end());
    joined.insert(joined.end(), a.values().begin(), a.values().end());
    joined.insert(joined.end(), b.values().begin(), b.values().end());
    auto batch = Tensor<float>::from({5, 2, 16, 16}, joined);
    const auto alone = model.classify(a);
    const auto mixed = model.classify(batch);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(mixed.at(c) == mixed.at(3 + c));
        CHECK(mixed.at(c) == doctest::Approx(alone.at(c)).epsilon(1e-5));
    }
}

TEST_CASE("zeroed loss head predicts zero") {
    const auto spec = BackboneSpec::tiny(3, 2);
    Model<float> model(spec, 2);
    model.loss_head().zero();
    const auto l = model.predict_loss(random_batch(4, spec, 1));
    REQUIRE(l.shape() == Shape{4});
    for (float v : l.values()) CHECK(v == 0.0f);
}

TEST_CASE("initialization is deterministic under the seed") {
    const auto spec = BackboneSpec::tiny(3, 2);
    Model<float> a(spec, 42), b(spec, 42), c(spec, 43);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(std::equal(pa[i].values().begin(), pa[i].values().end(), pb[i].values().begin()));
        if (!std::equal(pa[i].values().begin(), pa[i].values().end(), pc[i].values().begin())) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("checkpoint round-trip is exact and byte-stable") {
    const auto spec = BackboneSpec::tiny(3, 2);
    Model<float> model(spec, 5);
    model.forward(random_batch(4, spec, 1), Mode::Train);
    std::stringstream first;
    save_checkpoint(model, first);
    auto loaded = load_checkpoint(first);
    CHECK(loaded.spec() == spec);
    const auto a = model.named_parameters(), b = loaded.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(std::equal(a[i].second.values().begin(), a[i].second.values().end(), b[i].second.values().begin()));
    }
    const auto sa = model.batchnorm_stats();
    const auto sb = loaded.batchnorm_stats();
    for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i]->running_var == sb[i]->running_var);
    std::stringstream again, original;
    save_checkpoint(loaded, again);
    save_checkpoint(model, original);
    CHECK(again.str() == original.str());
    std::stringstream cloned;
    save_checkpoint(model.clone(), cloned);
    CHECK(cloned.str() == original.str());
    std::stringstream truncated(again.str().substr(0, again.str().size() / 2));
    CHECK_THROWS_AS(load_checkpoint(truncated), FormatError);
}

TEST_CASE("bottleneck chain gradient in 64-bit") {
    std::mt19937_64 rng(3);
    BackboneSpec spec = BackboneSpec::tiny(2, 1);
    Model<double> model(spec, 4);
    auto& layer = model.blocks()[0].layers[0];
    auto x = random_tensor({2, layer.in_channels, 4, 4}, rng);
    auto r = random_tensor({1, 2 * spec.growth_rate * 16}, rng, false);
    std::vector<TensorD> params{x, layer.norm1.gamma, layer.norm1.beta, layer.reduce.weight,
                                layer.norm2.gamma, layer.norm2.beta, layer.grow.weight};
    auto loss = [&] { return weighted_sum(layer.forward(x, Mode::Train), r); };
    CHECK(check_all(params, loss) < 1e-3);
}

TEST_CASE("end-to-end objective gradient on a tiny 64-bit model") {
    BackboneSpec spec = BackboneSpec::tiny(3, 2);
    spec.initial_channels = 4;
    spec.growth_rate = 2;
    spec.bottleneck_width = 4;
    spec.block_sizes = {1, 1, 1, 1};
    spec.loss_hidden = 3;
    Model<double> model(spec, 11);
    std::mt19937_64 rng(12);
    auto x = random_tensor({4, 2, 16, 16}, rng, false, 0, 1);
    const std::vector<std::int32_t> labels{0, 2, 1, 2};
    auto loss = [&] {
        auto out = model.forward(x, Mode::Train);
        return batch_objective<double>(out.scores, labels, out.predicted_loss, 1.0).total;
    };
    const auto result = check_sampled(model.parameters(), loss, 4, 13);
    CHECK(result.worst_coordinate < 1e-3);
    CHECK(result.worst_directional < 1e-3);
}
