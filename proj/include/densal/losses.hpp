#pragma once

// Target loss, pairwise loss-prediction loss and their batch combination.

#include <cstdint>
#include <span>
#include <vector>

#include "densal/tensor.hpp"

namespace densal {

// Per-sample negative log-likelihood of softmax(scores), computed in
// log-sum-exp form. scores is [N,C]; result is [N].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& scores, std::span<const std::int32_t> labels);

// Indices into a predicted-loss vector plus the detached true losses.
template <typename T>
struct LossPair {
    std::size_t i = 0;
    std::size_t j = 0;
    T loss_i = 0;
    T loss_j = 0;
};

struct TrainObjectiveConfig {
    double xi = 1.0;
    std::size_t batch_size = 10;

    void validate() const;
};

// +1 when loss_i > loss_j, otherwise -1.
template <typename T>
int ranking_sign(T loss_i, T loss_j) {
    return loss_i > loss_j ? 1 : -1;
}

// max(0, -(lhat_i - lhat_j) * sign(l_i, l_j) + xi). Gradient flows into
// predicted[pair.i] and predicted[pair.j] only.
template <typename T>
Tensor<T> ranking_loss(const Tensor<T>& predicted, const LossPair<T>& pair, T xi);

// Sum of ranking_loss over disjoint consecutive pairs (0,1), (2,3), ...
template <typename T>
Tensor<T> paired_ranking_loss(const Tensor<T>& predicted, std::span<const T> true_losses, T xi);

template <typename T>
struct ObjectiveTerms {
    Tensor<T> total;
    Tensor<T> per_sample_ce;  // [B], differentiable
    T target_term = 0;        // (1/B) sum CE
    T ranking_term = 0;       // (2/B) sum ranking
};

// (1/B) sum_i CE_i + (2/B) sum_p ranking_p. The true losses fed to the
// pairs are detached copies of the CE values. B must be even.
template <typename T>
ObjectiveTerms<T> batch_objective(const Tensor<T>& scores, std::span<const std::int32_t> labels,
                                  const Tensor<T>& predicted, T xi);

}  // namespace densal
