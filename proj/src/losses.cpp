#include "densal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "densal/error.hpp"
#include "densal/ops.hpp"

namespace densal {

void TrainObjectiveConfig::validate() const {
    if (!(xi > 0)) throw ConfigError("xi: margin must be positive, got " + std::to_string(xi));
    if (batch_size == 0 || batch_size % 2 != 0)
        throw ConfigError("batch_size: must be a positive even number, got " +
                          std::to_string(batch_size));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& scores, std::span<const std::int32_t> labels) {
    if (scores.rank() != 2) throw ShapeError("cross_entropy: scores must be [N,C], got " + to_string(scores.shape()));
    const std::size_t rows = scores.dim(0), classes = scores.dim(1);
    if (labels.size() != rows)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " score rows");
    for (std::size_t r = 0; r < rows; ++r)
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes)
            throw std::out_of_range("cross_entropy: label " + std::to_string(labels[r]) + " at row " +
                                    std::to_string(r) + " outside [0, " + std::to_string(classes) + ")");
    const auto s = scores.values();
    std::vector<T> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = s.data() + r * classes;
        const T mx = *std::max_element(row, row + classes);
        T total = 0;
        for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
        out[r] = mx + std::log(total) - row[labels[r]];
    }
    std::vector<std::int32_t> saved(labels.begin(), labels.end());
    return Tensor<T>::make_result(
        Shape{rows}, std::move(out), "cross_entropy", {scores},
        [saved = std::move(saved), rows, classes](detail::Node<T>& self) {
            auto& in = *self.inputs[0];
            const auto probs = softmax_rows<T>(in.value, classes);
            for (std::size_t r = 0; r < rows; ++r) {
                const T g = self.grad[r];
                for (std::size_t c = 0; c < classes; ++c) {
                    const T onehot = static_cast<std::int32_t>(c) == saved[r] ? T(1) : T(0);
                    in.grad[r * classes + c] += g * (probs[r * classes + c] - onehot);
                }
            }
        });
}

namespace {

template <typename T>
void check_xi(T xi) {
    if (!(xi > T(0))) throw std::invalid_argument("ranking loss margin xi must be positive");
}

template <typename T>
Tensor<T> hinge_over_pairs(const Tensor<T>& predicted, std::vector<LossPair<T>> pairs, T xi) {
    const auto lhat = predicted.values();
    std::vector<int> signs(pairs.size());
    T total = 0;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto& pr = pairs[p];
        if (pr.i == pr.j) throw std::invalid_argument("loss pair requires distinct samples");
        if (pr.i >= lhat.size() || pr.j >= lhat.size())
            throw std::out_of_range("loss pair index outside predicted-loss vector");
        if (!std::isfinite(pr.loss_i) || !std::isfinite(pr.loss_j) || pr.loss_i < 0 || pr.loss_j < 0)
            throw std::invalid_argument("loss pair true losses must be finite and non-negative");
        signs[p] = ranking_sign(pr.loss_i, pr.loss_j);
        total += std::max(T(0), -(lhat[pr.i] - lhat[pr.j]) * T(signs[p]) + xi);
    }
    return Tensor<T>::make_result(
        Shape{1}, std::vector<T>{total}, "ranking_loss", {predicted},
        [pairs = std::move(pairs), signs = std::move(signs), xi](detail::Node<T>& self) {
            auto& in = *self.inputs[0];
            const T g = self.grad[0];
            for (std::size_t p = 0; p < pairs.size(); ++p) {
                const auto& pr = pairs[p];
                const T margin = -(in.value[pr.i] - in.value[pr.j]) * T(signs[p]) + xi;
                if (margin <= T(0)) continue;
                in.grad[pr.i] -= g * T(signs[p]);
                in.grad[pr.j] += g * T(signs[p]);
            }
        });
}

}  // namespace

template <typename T>
Tensor<T> ranking_loss(const Tensor<T>& predicted, const LossPair<T>& pair, T xi) {
    check_xi(xi);
    return hinge_over_pairs(predicted, {pair}, xi);
}

template <typename T>
Tensor<T> paired_ranking_loss(const Tensor<T>& predicted, std::span<const T> true_losses, T xi) {
    check_xi(xi);
    if (true_losses.size() != predicted.size())
        throw ShapeError("paired_ranking_loss: " + std::to_string(true_losses.size()) +
                         " true losses for " + std::to_string(predicted.size()) + " predictions");
    if (true_losses.size() % 2 != 0)
        throw std::invalid_argument("paired_ranking_loss: batch size must be an even number, got " +
                                    std::to_string(true_losses.size()));
    std::vector<LossPair<T>> pairs;
    for (std::size_t p = 0; p + 1 < true_losses.size(); p += 2)
        pairs.push_back({p, p + 1, true_losses[p], true_losses[p + 1]});
    return hinge_over_pairs(predicted, std::move(pairs), xi);
}

template <typename T>
ObjectiveTerms<T> batch_objective(const Tensor<T>& scores, std::span<const std::int32_t> labels,
                                  const Tensor<T>& predicted, T xi) {
    check_xi(xi);
    const std::size_t batch = labels.size();
    if (batch == 0 || batch % 2 != 0)
        throw std::invalid_argument("batch_objective: batch size should be an even number, got " +
                                    std::to_string(batch));
    if (predicted.rank() != 1 || predicted.dim(0) != batch)
        throw ShapeError("batch_objective: predicted losses " + to_string(predicted.shape()) +
                         " do not align with batch of " + std::to_string(batch));
    ObjectiveTerms<T> terms;
    terms.per_sample_ce = cross_entropy(scores, labels);
    const std::vector<T> detached(terms.per_sample_ce.values().begin(),
                                  terms.per_sample_ce.values().end());
    auto target = scale(sum(terms.per_sample_ce), T(1) / T(batch));
    auto ranking = scale(paired_ranking_loss(predicted, std::span<const T>(detached), xi), T(2) / T(batch));
    terms.target_term = target.item();
    terms.ranking_term = ranking.item();
    terms.total = add(target, ranking);
    return terms;
}

#define DENSAL_INSTANTIATE_LOSSES(T)                                                               \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);             \
    template Tensor<T> ranking_loss(const Tensor<T>&, const LossPair<T>&, T);                      \
    template Tensor<T> paired_ranking_loss(const Tensor<T>&, std::span<const T>, T);               \
    template ObjectiveTerms<T> batch_objective(const Tensor<T>&, std::span<const std::int32_t>,    \
                                               const Tensor<T>&, T);

DENSAL_INSTANTIATE_LOSSES(float)
DENSAL_INSTANTIATE_LOSSES(double)

}  // namespace densal
