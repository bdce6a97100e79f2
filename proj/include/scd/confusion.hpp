#pragma once

// Confusion-matrix accumulation and the derived evaluation metrics
// (total accuracy, precision, recall, Dice, Cohen's kappa).
//
// Orientation is fixed once and enforced by tests: ground truth on rows,
// predictions on columns. For binary change detection the class order is
// (no change, change), so counts[1][1] = TP, counts[0][0] = TN,
// counts[0][1] = FP, counts[1][0] = FN.

#include <cstdint>
#include <optional>
#include <vector>

#include "scd/raster.hpp"

namespace scd {

class ConfusionMatrix {
public:
    ConfusionMatrix() : k_(0) {}
    explicit ConfusionMatrix(const Nomenclature& nom)
        : nomenclature_id_(nom.id()), k_(nom.size()),
          counts_(static_cast<size_t>(k_) * k_, 0) {}

    const std::string& nomenclature_id() const { return nomenclature_id_; }
    int k() const { return k_; }

    int64_t& at(int truth, int pred) {
        return counts_[static_cast<size_t>(truth) * k_ + pred];
    }
    int64_t at(int truth, int pred) const {
        return counts_[static_cast<size_t>(truth) * k_ + pred];
    }
    const std::vector<int64_t>& counts() const { return counts_; }

    int64_t total() const {
        int64_t t = 0;
        for (int64_t c : counts_) t += c;
        return t;
    }

    void merge(const ConfusionMatrix& other) {
        if (other.k_ != k_ || other.nomenclature_id_ != nomenclature_id_)
            throw std::invalid_argument("ConfusionMatrix::merge: mismatch");
        for (size_t i = 0; i < counts_.size(); ++i)
            counts_[i] += other.counts_[i];
    }

private:
    std::string nomenclature_id_;
    int k_;
    std::vector<int64_t> counts_;
};

// Counts one entry per pixel where the mask (if given) is nonzero and the
// truth class counts toward metrics. The input matrix is left untouched if
// any pixel fails validation.
inline ConfusionMatrix accumulate(const ConfusionMatrix& cm,
                                  const Nomenclature& nom,
                                  const LabelRaster& truth,
                                  const LabelRaster& pred,
                                  const LabelRaster* mask = nullptr) {
    if (!same_shape(truth, pred))
        throw std::invalid_argument("accumulate: truth/pred shape mismatch");
    if (mask && !same_shape(truth, *mask))
        throw std::invalid_argument("accumulate: mask shape mismatch");
    if (cm.k() != nom.size() || cm.nomenclature_id() != nom.id())
        throw std::invalid_argument("accumulate: matrix/nomenclature mismatch");

    ConfusionMatrix out = cm;
    const auto& t = truth.data();
    const auto& p = pred.data();
    for (size_t i = 0; i < t.size(); ++i) {
        if (mask && mask->data()[i] == 0) continue;
        int ti = nom.index_of(t[i]);  // throws on unknown code
        int pi = nom.index_of(p[i]);
        if (!nom.class_at(ti).counts_toward_metrics) continue;
        out.at(ti, pi) += 1;
    }
    return out;
}

// Ratios in [0,1]; std::nullopt marks an undefined value (0/0 denominator),
// which keeps averages over degenerate tiles honest.
struct MetricReport {
    std::optional<double> total_accuracy;
    std::optional<double> precision;  // binary only
    std::optional<double> recall;     // binary only
    std::optional<double> dice;       // binary only
    std::optional<double> kappa;
};

inline MetricReport metrics(const ConfusionMatrix& cm) {
    const int k = cm.k();
    const int64_t total = cm.total();
    if (total == 0)
        throw std::invalid_argument("metrics: empty confusion matrix");

    MetricReport r;
    int64_t diag = 0;
    std::vector<int64_t> row(k, 0), col(k, 0);
    for (int i = 0; i < k; ++i) {
        diag += cm.at(i, i);
        for (int j = 0; j < k; ++j) {
            row[i] += cm.at(i, j);
            col[j] += cm.at(i, j);
        }
    }
    const double p_o = static_cast<double>(diag) / total;
    double p_e = 0.0;
    for (int i = 0; i < k; ++i)
        p_e += (static_cast<double>(row[i]) / total) *
               (static_cast<double>(col[i]) / total);

    r.total_accuracy = p_o;
    if (1.0 - p_e != 0.0) r.kappa = (p_o - p_e) / (1.0 - p_e);

    if (k == 2) {
        const double tp = static_cast<double>(cm.at(1, 1));
        const double fp = static_cast<double>(cm.at(0, 1));
        const double fn = static_cast<double>(cm.at(1, 0));
        if (tp + fp > 0) r.precision = tp / (tp + fp);
        if (tp + fn > 0) r.recall = tp / (tp + fn);
        if (2 * tp + fp + fn > 0) r.dice = 2 * tp / (2 * tp + fp + fn);
    }
    return r;
}

}  // namespace scd
