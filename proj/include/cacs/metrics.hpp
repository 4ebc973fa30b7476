#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "cacs/candidates.hpp"
#include "cacs/scoring.hpp"

namespace cacs {

enum class CountGranularity { Pixel, Lesion };

struct ConfusionCounts {
    size_t tp = 0, fp = 0, tn = 0, fn = 0;
    CountGranularity granularity = CountGranularity::Pixel;

    size_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
};

/// Ratio statistics; a zero denominator leaves the statistic empty rather
/// than defaulting it.
struct DetectionStats {
    std::optional<double> sensitivity;  // tp / (tp + fn)
    std::optional<double> specificity;  // tn / (tn + fp)
    std::optional<double> ppv;          // tp / (tp + fp)
};

DetectionStats detection_stats(const ConfusionCounts& counts);

/// Lesion-level matching: a reference coronary lesion counts as TP when at
/// least one of its pixels is predicted positive, FN otherwise.
/// Predicted-positive pixels outside every reference coronary lesion are
/// grouped into 26-connected 3D components, one FP each. TN is the number of
/// reference non-coronary lesions untouched by positive pixels.
ConfusionCounts match_lesions(const std::vector<Coord>& predicted_pixels,
                              const std::vector<Lesion>& reference_lesions, Dims dims);

/// Pearson product-moment correlation; empty when either variance is zero.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

/// 5x5 risk-class contingency table, rows = reference, columns = predicted.
struct AgreementTable {
    std::array<std::array<size_t, 5>, 5> counts{};

    void add(RiskClass reference, RiskClass predicted) {
        ++counts[static_cast<size_t>(reference) - 'A'][static_cast<size_t>(predicted) - 'A'];
    }
    size_t total() const {
        size_t t = 0;
        for (const auto& row : counts)
            for (size_t v : row) t += v;
        return t;
    }
};

/// Linearly weighted Cohen's kappa: w_ij = |i-j|/(k-1),
/// kappa = 1 - sum(w*observed) / sum(w*expected). Empty when the expected
/// disagreement is zero (all mass in one class on both sides).
std::optional<double> weighted_kappa(const AgreementTable& table);

/// Fraction of volumes on the table diagonal.
double risk_accuracy(const AgreementTable& table);

struct BlandAltman {
    double mean_diff = 0;
    double sd_diff = 0;  // sample standard deviation (divisor n-1)
    double loa_low = 0;  // mean_diff - 1.96 * sd
    double loa_high = 0; // mean_diff + 1.96 * sd
    std::vector<std::pair<double, double>> points;  // (pair mean, difference)
};

/// Differences d_i = x_i - y_i with 95% limits of agreement.
BlandAltman bland_altman(std::span<const double> xs, std::span<const double> ys);

}  // namespace cacs
