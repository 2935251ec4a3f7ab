#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace densal {

// confusion[true][predicted] counts.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

struct MetricsReport {
    double overall_accuracy = 0;   // trace / total
    double average_accuracy = 0;   // mean recall over classes with test samples
    double kappa = 0;              // (p_o - p_e) / (1 - p_e)
    std::vector<double> per_class; // recall; NaN for classes without test samples
    ConfusionMatrix confusion;
    std::size_t total = 0;

    bool operator==(const MetricsReport& other) const;
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted,
                                 std::size_t classes);

// Throws std::invalid_argument for an empty matrix.
MetricsReport metrics_from_confusion(const ConfusionMatrix& confusion);

}  // namespace densal
