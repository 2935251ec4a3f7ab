#include "densal/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace densal {

bool MetricsReport::operator==(const MetricsReport& other) const {
    if (per_class.size() != other.per_class.size()) return false;
    for (std::size_t i = 0; i < per_class.size(); ++i) {
        const bool both_nan = std::isnan(per_class[i]) && std::isnan(other.per_class[i]);
        if (!both_nan && per_class[i] != other.per_class[i]) return false;
    }
    return overall_accuracy == other.overall_accuracy && average_accuracy == other.average_accuracy &&
           kappa == other.kappa && confusion == other.confusion && total == other.total;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted,
                                 std::size_t classes) {
    if (truth.size() != predicted.size())
        throw std::invalid_argument("confusion_matrix: truth and prediction lengths differ");
    ConfusionMatrix cm(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= classes ||
            static_cast<std::size_t>(predicted[i]) >= classes)
            throw std::out_of_range("confusion_matrix: class index out of range at sample " + std::to_string(i));
        ++cm[truth[i]][predicted[i]];
    }
    return cm;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& confusion) {
    const std::size_t classes = confusion.size();
    MetricsReport report;
    report.confusion = confusion;
    std::vector<double> row_sum(classes, 0), col_sum(classes, 0);
    double diagonal = 0, total = 0;
    for (std::size_t t = 0; t < classes; ++t) {
        if (confusion[t].size() != classes) throw std::invalid_argument("confusion matrix is not square");
        for (std::size_t p = 0; p < classes; ++p) {
            const auto v = static_cast<double>(confusion[t][p]);
            row_sum[t] += v;
            col_sum[p] += v;
            total += v;
        }
        diagonal += static_cast<double>(confusion[t][t]);
    }
    if (total == 0) throw std::invalid_argument("metrics of an empty test set");
    report.total = static_cast<std::size_t>(total);
    report.overall_accuracy = diagonal / total;

    report.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());
    double recall_sum = 0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (row_sum[c] == 0) continue;
        report.per_class[c] = static_cast<double>(confusion[c][c]) / row_sum[c];
        recall_sum += report.per_class[c];
        ++present;
    }
    report.average_accuracy = recall_sum / static_cast<double>(present);

    double chance = 0;
    for (std::size_t c = 0; c < classes; ++c) chance += row_sum[c] * col_sum[c];
    chance /= total * total;
    // Chance agreement of 1 means a single class on both sides; agreement is then perfect.
    report.kappa = chance >= 1.0 ? 1.0 : (report.overall_accuracy - chance) / (1.0 - chance);
    return report;
}

}  // namespace densal
