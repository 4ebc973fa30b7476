#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cacs/candidates.hpp"
#include "cacs/cnn.hpp"
#include "cacs/patches.hpp"
#include "cacs/volume.hpp"

namespace cacs {

enum class RiskClass : char { A = 'A', B = 'B', C = 'C', D = 'D', E = 'E' };

inline char to_char(RiskClass c) { return static_cast<char>(c); }
RiskClass risk_class_from_char(char c);

/// Agatston density factor from the lesion's peak intensity:
/// 130-199 HU -> 1, 200-299 -> 2, 300-399 -> 3, >= 400 -> 4.
int density_factor(int max_hu);

/// Sum over per-slice lesions of area * density_factor(max_hu) * (dz/3.0).
double agatston_score(const std::vector<Lesion>& lesions_2d, double slice_thickness_mm);

/// A: score 0; B: (0,10]; C: (10,100]; D: (100,400]; E: >400.
RiskClass risk_class(double score);

struct LesionScore {
    int slice = 0;
    double area_mm2 = 0;
    int max_hu = 0;
    int rho = 0;
    double contribution = 0;
};

struct KeptPixel {
    Coord coord;
    int16_t hu = 0;
    double pcac = 0;
};

struct PcacStats {
    size_t evaluated = 0;  // candidate pixels classified
    size_t kept = 0;       // pixels over the 0.5 decision threshold
    double mean = 0;
    double min = 0;
    double max = 0;
};

struct ScoreReport {
    std::string volume_id;
    double agatston = 0;
    RiskClass risk = RiskClass::A;
    std::vector<LesionScore> lesions;
    size_t candidate_count = 0;
    std::vector<KeptPixel> kept_pixels;
    PcacStats pcac;
};

/// Classifies every candidate pixel (>=130 HU inside the mask) of the
/// resampled, masked volume, keeps pixels with pCAC > 0.5, groups them into
/// per-slice 8-connected lesions, and scores them. The per-lesion density
/// factor uses the peak HU among kept pixels.
ScoreReport predict_volume(const Model& model, const Volume& vol, const RoiMask& mask,
                           const std::string& volume_id = "", int threads = 1);

/// Same pipeline with an arbitrary patch classifier; used by the oracle
/// stub hooks and tests.
using PatchClassifier = std::function<double(const Patch&)>;
ScoreReport predict_volume_with(const PatchClassifier& classifier, const Volume& vol,
                                const RoiMask& mask, const std::string& volume_id = "",
                                int threads = 1);

/// Reference scoring: per-slice components of the annotated coronary lesion
/// voxels, intensities looked up in the volume. No CNN involved.
ScoreReport score_reference(const std::vector<Lesion>& annotations, const Volume& vol,
                            const std::string& volume_id = "");

void save_score_report_json(const ScoreReport& report, const std::string& path);
ScoreReport load_score_report_json(const std::string& path);
std::string score_report_csv_line(const ScoreReport& report);

}  // namespace cacs
