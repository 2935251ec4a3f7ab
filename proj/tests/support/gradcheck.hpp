#pragma once

// Central-difference gradient checks in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "densal/ops.hpp"
#include "densal/tensor.hpp"

namespace densal::testing {

using TensorD = Tensor<double>;
using LossFn = std::function<TensorD()>;

inline double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||). Below kVanishing both gradients are zero up
// to finite-difference roundoff and the absolute difference is returned.
inline constexpr double kVanishing = 1e-7;

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double scale = std::max(norm(a), norm(b));
    return scale < kVanishing ? norm(d) : norm(d) / scale;
}

inline double numeric_partial(TensorD& param, std::size_t i, const LossFn& loss, double h) {
    auto v = param.mutable_values();
    const double saved = v[i];
    v[i] = saved + h;
    const double up = loss().item();
    v[i] = saved - h;
    const double down = loss().item();
    v[i] = saved;
    return (up - down) / (2 * h);
}

inline void analytic_gradients(std::vector<TensorD>& params, const LossFn& loss) {
    for (auto& p : params) p.zero_grad();
    backward(loss());
}

// Every coordinate of every tensor; returns the worst per-tensor error.
inline double check_all(std::vector<TensorD> params, const LossFn& loss, double h = 1e-6) {
    analytic_gradients(params, loss);
    double worst = 0;
    for (auto& p : params) {
        std::vector<double> analytic(p.grad().begin(), p.grad().end());
        std::vector<double> numeric(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) numeric[i] = numeric_partial(p, i, loss, h);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

struct SampledCheck {
    double worst_coordinate = 0;   // per-tensor error over sampled coordinates
    double worst_directional = 0;  // per-tensor random-direction error
};

// A seeded sample of coordinates per tensor plus one random-direction
// directional derivative per tensor.
inline SampledCheck check_sampled(std::vector<TensorD> params, const LossFn& loss, std::size_t per_tensor,
                                  std::uint64_t seed, double h = 1e-6) {
    analytic_gradients(params, loss);
    std::mt19937_64 rng(seed);
    SampledCheck out;
    for (auto& p : params) {
        const auto grad = p.grad();
        std::vector<std::size_t> idx(p.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(per_tensor, idx.size()));
        std::vector<double> analytic, numeric;
        for (auto i : idx) {
            analytic.push_back(grad[i]);
            numeric.push_back(numeric_partial(p, i, loss, h));
        }
        out.worst_coordinate = std::max(out.worst_coordinate, relative_error(analytic, numeric));

        std::normal_distribution<double> gauss;
        std::vector<double> dir(p.size());
        for (auto& d : dir) d = gauss(rng);
        const double n = norm(dir);
        for (auto& d : dir) d /= n;
        double along = 0;
        for (std::size_t i = 0; i < dir.size(); ++i) along += grad[i] * dir[i];
        auto v = p.mutable_values();
        const std::vector<double> saved(v.begin(), v.end());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = saved[i] + h * dir[i];
        const double up = loss().item();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = saved[i] - h * dir[i];
        const double down = loss().item();
        std::copy(saved.begin(), saved.end(), v.begin());
        out.worst_directional =
            std::max(out.worst_directional, relative_error({along}, {(up - down) / (2 * h)}));
    }
    return out;
}

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double lo = -1,
                             double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = u(rng);
    return TensorD::from(std::move(shape), std::move(v), requires_grad);
}

// Reduces any tensor to a scalar with fixed random weights so that every
// output element contributes a distinct coefficient.
inline TensorD weighted_sum(const TensorD& t, const TensorD& weights) {
    auto flat = reshape(t, {1, t.size()});
    auto zero = TensorD::zeros({1});
    return sum(linear(flat, weights, zero));
}

}  // namespace densal::testing
