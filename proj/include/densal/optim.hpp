#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "densal/tensor.hpp"

namespace densal {

struct AdamParameters {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias-corrected moments over a fixed list of parameter tensors.
template <typename T>
class Adam {
  public:
    Adam(std::vector<Tensor<T>> params, AdamParameters hp = {}) : params_(std::move(params)), hp_(hp) {
        for (const auto& p : params_) {
            mom1_.emplace_back(p.size(), T(0));
            mom2_.emplace_back(p.size(), T(0));
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const double corr1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
        const double corr2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
        const T b1 = T(hp_.beta1), b2 = T(hp_.beta2);
        const T step_size = T(hp_.learning_rate / corr1);
        const T inv_sqrt_corr2 = T(1.0 / std::sqrt(corr2));
        const T eps = T(hp_.epsilon);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto values = params_[k].mutable_values();
            const auto grad = params_[k].grad();
            if (grad.empty()) continue;
            auto& m = mom1_[k];
            auto& v = mom2_[k];
            for (std::size_t i = 0; i < values.size(); ++i) {
                const T g = grad[i];
                m[i] = b1 * m[i] + (T(1) - b1) * g;
                v[i] = b2 * v[i] + (T(1) - b2) * g * g;
                values[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_corr2 + eps);
            }
        }
    }

    std::size_t steps() const { return t_; }

  private:
    std::vector<Tensor<T>> params_;
    AdamParameters hp_;
    std::vector<std::vector<T>> mom1_;
    std::vector<std::vector<T>> mom2_;
    std::size_t t_ = 0;
};

}  // namespace densal
