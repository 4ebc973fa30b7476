#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cacs/metrics.hpp"
#include "cacs/phantom.hpp"
#include "cacs/scoring.hpp"

namespace cacs {

struct VolumeEvaluation {
    std::string id;
    double reference_agatston = 0;
    double predicted_agatston = 0;
    RiskClass reference_class = RiskClass::A;
    RiskClass predicted_class = RiskClass::A;
    ConfusionCounts pixel;
    ConfusionCounts lesion;
};

/// Mean of the per-scan statistics over the scans where each is defined.
struct AveragedStats {
    std::optional<double> sensitivity, specificity, ppv;
    size_t sensitivity_scans = 0, specificity_scans = 0, ppv_scans = 0;
};

struct CohortEvaluation {
    std::vector<VolumeEvaluation> volumes;
    AveragedStats pixel_mean, lesion_mean;
    ConfusionCounts pixel_pooled, lesion_pooled;
    DetectionStats pixel_pooled_stats, lesion_pooled_stats;
    AgreementTable agreement;
    std::optional<double> pearson_r;
    std::optional<double> kappa;
    double accuracy = 0;
    BlandAltman agatston_agreement;
};

/// Scores one predicted report against the reference annotation: per-scan
/// pixel and lesion confusion counts plus the Agatston/risk pairing.
VolumeEvaluation evaluate_volume(const ScoreReport& predicted, const Volume& vol,
                                 const RoiMask& mask, const std::vector<Lesion>& annotations);

/// Evaluates every volume of a cohort: reference data resolved through the
/// manifest in ref_dir, predictions read from "<id>.report.json" in pred_dir.
CohortEvaluation evaluate_cohort(const std::string& pred_dir, const std::string& ref_dir);

/// Writes metrics.json, bland_altman.csv, and agreement.csv into out_dir.
void write_evaluation(const CohortEvaluation& eval, const std::string& out_dir);

}  // namespace cacs
