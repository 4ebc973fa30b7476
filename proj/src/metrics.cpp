#include "cacs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "cacs/errors.hpp"

namespace cacs {

namespace {

size_t flat_index(const Coord& c, const Dims& d) {
    return static_cast<size_t>(c.x) +
           static_cast<size_t>(d.nx) * (static_cast<size_t>(c.y) + static_cast<size_t>(d.ny) * c.z);
}

void check_coord(const Coord& c, const Dims& d, const char* what) {
    if (c.x < 0 || c.x >= d.nx || c.y < 0 || c.y >= d.ny || c.z < 0 || c.z >= d.nz)
        throw dim_mismatch_error(std::string(what) + ": coordinate outside grid");
}

}  // namespace

DetectionStats detection_stats(const ConfusionCounts& c) {
    DetectionStats s;
    if (c.tp + c.fn > 0) s.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    if (c.tn + c.fp > 0) s.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    if (c.tp + c.fp > 0) s.ppv = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    return s;
}

ConfusionCounts match_lesions(const std::vector<Coord>& predicted_pixels,
                              const std::vector<Lesion>& reference_lesions, Dims dims) {
    std::unordered_set<size_t> predicted;
    predicted.reserve(predicted_pixels.size());
    for (const Coord& c : predicted_pixels) {
        check_coord(c, dims, "match_lesions");
        predicted.insert(flat_index(c, dims));
    }

    ConfusionCounts counts;
    counts.granularity = CountGranularity::Lesion;

    std::unordered_set<size_t> coronary_voxels;
    for (const auto& lesion : reference_lesions) {
        bool touched = false;
        for (const Coord& v : lesion.voxels) {
            check_coord(v, dims, "match_lesions");
            if (predicted.count(flat_index(v, dims))) touched = true;
            if (lesion.label == LesionLabel::Coronary) coronary_voxels.insert(flat_index(v, dims));
        }
        if (lesion.label == LesionLabel::Coronary) {
            if (touched) ++counts.tp;
            else ++counts.fn;
        } else if (!touched) {
            ++counts.tn;
        }
    }

    // spurious positives: predicted pixels in no reference coronary lesion,
    // grouped into 3D components
    std::vector<CandidatePixel> spurious;
    for (const Coord& c : predicted_pixels)
        if (!coronary_voxels.count(flat_index(c, dims)))
            spurious.push_back({c, kCandidateThresholdHu, LesionLabel::Unlabeled});
    counts.fp = connected_components_3d(spurious, dims, {1, 1, 1}).size();
    return counts;
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
    if (xs.size() < 2) throw std::invalid_argument("pearson: need at least 2 points");
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

std::optional<double> weighted_kappa(const AgreementTable& table) {
    const size_t total = table.total();
    if (total == 0) throw std::invalid_argument("weighted_kappa: empty table");
    const double n = static_cast<double>(total);

    std::array<double, 5> row_marginal{}, col_marginal{};
    for (size_t i = 0; i < 5; ++i)
        for (size_t j = 0; j < 5; ++j) {
            row_marginal[i] += static_cast<double>(table.counts[i][j]);
            col_marginal[j] += static_cast<double>(table.counts[i][j]);
        }

    double observed = 0, expected = 0;
    for (size_t i = 0; i < 5; ++i)
        for (size_t j = 0; j < 5; ++j) {
            const double w = std::abs(static_cast<double>(i) - static_cast<double>(j)) / 4.0;
            observed += w * static_cast<double>(table.counts[i][j]) / n;
            expected += w * (row_marginal[i] / n) * (col_marginal[j] / n);
        }
    if (expected == 0) return std::nullopt;
    return 1.0 - observed / expected;
}

double risk_accuracy(const AgreementTable& table) {
    const size_t total = table.total();
    if (total == 0) throw std::invalid_argument("risk_accuracy: empty table");
    size_t diag = 0;
    for (size_t i = 0; i < 5; ++i) diag += table.counts[i][i];
    return static_cast<double>(diag) / static_cast<double>(total);
}

BlandAltman bland_altman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("bland_altman: length mismatch");
    if (xs.size() < 2) throw std::invalid_argument("bland_altman: need at least 2 points");
    BlandAltman ba;
    const double n = static_cast<double>(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        const double d = xs[i] - ys[i];
        ba.points.emplace_back((xs[i] + ys[i]) / 2.0, d);
        ba.mean_diff += d;
    }
    ba.mean_diff /= n;
    double sq = 0;
    for (const auto& [m, d] : ba.points) {
        const double dev = d - ba.mean_diff;
        sq += dev * dev;
    }
    ba.sd_diff = std::sqrt(sq / (n - 1.0));
    ba.loa_low = ba.mean_diff - 1.96 * ba.sd_diff;
    ba.loa_high = ba.mean_diff + 1.96 * ba.sd_diff;
    return ba;
}

}  // namespace cacs
