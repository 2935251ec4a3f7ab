#include <doctest.h>

#include <cmath>
#include <random>

#include "densal/error.hpp"
#include "densal/losses.hpp"
#include "densal/ops.hpp"
#include "support/gradcheck.hpp"

using namespace densal;
using namespace densal::testing;

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr std::size_t kInstances = 10;

}  // namespace

TEST_CASE("conv2d forward against a direct loop") {
    std::mt19937_64 rng(1);
    auto x = random_tensor({2, 3, 5, 6}, rng, false);
    auto w = random_tensor({4, 3, 3, 3}, rng, false);
    auto b = random_tensor({4}, rng, false);
    const std::size_t stride = 2, pad = 1;
    auto y = conv2d(x, w, std::optional<TensorD>(b), stride, pad);
    REQUIRE(y.shape() == Shape{2, 4, 3, 3});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t r = 0; r < 3; ++r)
                for (std::size_t c = 0; c < 3; ++c) {
                    double acc = b.at(o);
                    for (std::size_t i = 0; i < 3; ++i)
                        for (std::size_t kr = 0; kr < 3; ++kr)
                            for (std::size_t kc = 0; kc < 3; ++kc) {
                                const long rr = long(r * stride + kr) - long(pad);
                                const long cc = long(c * stride + kc) - long(pad);
                                if (rr < 0 || cc < 0 || rr >= 5 || cc >= 6) continue;
                                acc += x.at(((n * 3 + i) * 5 + rr) * 6 + cc) * w.at(((o * 3 + i) * 3 + kr) * 3 + kc);
                            }
                    CHECK(y.at(((n * 4 + o) * 3 + r) * 3 + c) == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("conv2d gradients") {
    std::mt19937_64 rng(11);
    for (std::size_t t = 0; t < kInstances; ++t) {
        std::uniform_int_distribution<std::size_t> pick(1, 3);
        const std::size_t cin = pick(rng), cout = pick(rng), k = t % 2 ? 3 : 1;
        const std::size_t stride = 1 + t % 2, pad = k == 3 ? t % 2 : 0;
        auto x = random_tensor({2, cin, 5, 4}, rng);
        auto w = random_tensor({cout, cin, k, k}, rng);
        auto b = random_tensor({cout}, rng);
        const bool with_bias = t % 3 != 0;
        auto probe_shape = conv2d(x, w, std::optional<TensorD>{}, stride, pad).shape();
        auto r = random_tensor({1, numel(probe_shape)}, rng, false);
        auto loss = [&] {
            return weighted_sum(conv2d(x, w, with_bias ? std::optional<TensorD>(b) : std::nullopt, stride, pad), r);
        };
        std::vector<TensorD> params{x, w};
        if (with_bias) params.push_back(b);
        CHECK(check_all(params, loss) < kOpTolerance);
    }
}

TEST_CASE("conv2d rejects mismatched channels") {
    auto x = TensorD::zeros({1, 3, 4, 4});
    auto w = TensorD::zeros({2, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w, std::optional<TensorD>{}, 1, 1), ShapeError);
}

TEST_CASE("batchnorm gradients in train and infer mode") {
    std::mt19937_64 rng(12);
    for (std::size_t t = 0; t < kInstances; ++t) {
        const std::size_t c = 1 + t % 3;
        auto x = random_tensor({3, c, 2, 3}, rng);
        auto gamma = random_tensor({c}, rng, true, 0.5, 1.5);
        auto beta = random_tensor({c}, rng);
        auto r = random_tensor({1, x.size()}, rng, false);
        BatchNormStats<double> stats(c);
        for (auto& v : stats.running_var) v = 0.5 + 0.1 * t;
        const Mode mode = t % 2 ? Mode::Infer : Mode::Train;
        auto loss = [&] {
            auto s = stats;
            return weighted_sum(batchnorm(x, gamma, beta, s, mode), r);
        };
        CHECK(check_all({x, gamma, beta}, loss) < kOpTolerance);
    }
}

TEST_CASE("batchnorm running statistics use the unbiased variance") {
    auto x = TensorD::from({4, 1, 1, 1}, {1, 2, 3, 6});
    auto gamma = TensorD::full({1}, 1.0), beta = TensorD::zeros({1});
    BatchNormStats<double> stats(1);
    auto y = batchnorm(x, gamma, beta, stats, Mode::Train);
    // mean 3, biased var 3.5, unbiased var 14/3
    CHECK(stats.running_mean[0] == doctest::Approx(0.3));
    CHECK(stats.running_var[0] == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
    CHECK(y.at(0) == doctest::Approx(-2.0 / std::sqrt(3.5 + 1e-5)));
    BatchNormStats<double> tiny(1);
    auto single = TensorD::from({1, 1, 1, 1}, {1.0});
    CHECK_THROWS(batchnorm(single, gamma, beta, tiny, Mode::Train));
}

TEST_CASE("relu, maxpool and global average pooling gradients") {
    std::mt19937_64 rng(13);
    for (std::size_t t = 0; t < kInstances; ++t) {
        auto x = random_tensor({2, 2, 4 + t % 3, 5 - t % 2}, rng);
        auto r1 = random_tensor({1, x.size()}, rng, false);
        CHECK(check_all({x}, [&] { return weighted_sum(relu(x), r1); }) < kOpTolerance);
        const auto pooled = maxpool2d(x).size();
        auto r2 = random_tensor({1, pooled}, rng, false);
        CHECK(check_all({x}, [&] { return weighted_sum(maxpool2d(x), r2); }) < kOpTolerance);
        auto r3 = random_tensor({1, 4}, rng, false);
        CHECK(check_all({x}, [&] { return weighted_sum(global_avg_pool(x), r3); }) < kOpTolerance);
    }
}

TEST_CASE("maxpool floor semantics and first-maximum tie rule") {
    auto x = TensorD::from({1, 1, 3, 3}, {1, 1, 0, 1, 1, 0, 9, 9, 9}, true);
    auto y = maxpool2d(x);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.at(0) == 1);
    backward(sum(y));
    CHECK(x.grad()[0] == 1);
    for (std::size_t i = 1; i < 9; ++i) CHECK(x.grad()[i] == 0);
    CHECK_THROWS(maxpool2d(TensorD::zeros({1, 1, 1, 4})));
}

TEST_CASE("relu subgradient at zero is zero") {
    auto x = TensorD::from({3}, {-1.0, 0.0, 2.0}, true);
    backward(sum(relu(x)));
    CHECK(x.grad()[0] == 0);
    CHECK(x.grad()[1] == 0);
    CHECK(x.grad()[2] == 1);
}

TEST_CASE("concat, linear, add, scale, mean and reshape gradients") {
    std::mt19937_64 rng(14);
    for (std::size_t t = 0; t < kInstances; ++t) {
        auto a = random_tensor({2, 1 + t % 2, 2, 2}, rng);
        auto b = random_tensor({2, 2, 2, 2}, rng);
        const std::vector<TensorD> parts{a, b};
        const auto cat_size = concat_channels<double>(parts).size();
        auto r = random_tensor({1, cat_size}, rng, false);
        CHECK(check_all({a, b}, [&] { return weighted_sum(concat_channels<double>(parts), r); }) < kOpTolerance);

        auto x = random_tensor({3, 4}, rng);
        auto w = random_tensor({2 + t % 3, 4}, rng);
        auto bias = random_tensor({2 + t % 3}, rng);
        auto r2 = random_tensor({1, 3 * (2 + t % 3)}, rng, false);
        CHECK(check_all({x, w, bias}, [&] { return weighted_sum(linear(x, w, bias), r2); }) < kOpTolerance);

        auto p = random_tensor({2, 3}, rng), q = random_tensor({2, 3}, rng);
        auto r3 = random_tensor({1, 6}, rng, false);
        CHECK(check_all({p, q}, [&] { return weighted_sum(add(p, scale(q, -1.7)), r3); }) < kOpTolerance);
        CHECK(check_all({p}, [&] { return mean(reshape(p, {3, 2})); }) < kOpTolerance);
    }
}

TEST_CASE("cross entropy gradients and log-sum-exp stability") {
    std::mt19937_64 rng(15);
    for (std::size_t t = 0; t < kInstances; ++t) {
        const std::size_t n = 3, c = 2 + t % 4;
        auto s = random_tensor({n, c}, rng, true, -3, 3);
        std::vector<std::int32_t> labels;
        for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<std::int32_t>((i + t) % c));
        auto r = random_tensor({1, n}, rng, false);
        CHECK(check_all({s}, [&] { return weighted_sum(cross_entropy(s, labels), r); }) < kOpTolerance);
    }
    auto big = TensorD::from({1, 2}, {1000.0, 0.0});
    const std::int32_t label = 1;
    const auto ce = cross_entropy(big, std::span(&label, 1));
    CHECK(std::isfinite(ce.at(0)));
    CHECK(ce.at(0) == doctest::Approx(1000.0));
    const std::int32_t bad = 2;
    CHECK_THROWS_AS(cross_entropy(big, std::span(&bad, 1)), std::out_of_range);
}

TEST_CASE("ranking loss and batch objective gradients") {
    std::mt19937_64 rng(16);
    for (std::size_t t = 0; t < kInstances; ++t) {
        const std::size_t b = 2 * (1 + t % 3), c = 3;
        auto scores = random_tensor({b, c}, rng, true, -2, 2);
        auto predicted = random_tensor({b}, rng, true, -2, 2);
        std::vector<std::int32_t> labels;
        for (std::size_t i = 0; i < b; ++i) labels.push_back(static_cast<std::int32_t>((i * 7 + t) % c));
        const double xi = 0.5 + 0.1 * t;
        // The true losses enter the ranking term detached, so the scores only
        // see the target term; predicted sees the ranking term.
        auto loss = [&] { return batch_objective(scores, labels, predicted, xi).total; };
        CHECK(check_all({predicted}, loss) < kOpTolerance);
        scores.zero_grad();
        backward(loss());
        const std::vector<double> from_objective(scores.grad().begin(), scores.grad().end());
        auto target = [&] { return mean(cross_entropy(scores, labels)); };
        CHECK(check_all({scores}, target) < kOpTolerance);
        scores.zero_grad();
        backward(target());
        CHECK(relative_error(from_objective, {scores.grad().begin(), scores.grad().end()}) < 1e-12);
    }
}

TEST_CASE("softmax rows sum to one") {
    const std::vector<double> s{1, 2, 3, -1, -1, -1};
    const auto p = softmax_rows<double>(s, 3);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1));
    CHECK(p[3] == doctest::Approx(1.0 / 3));
}
