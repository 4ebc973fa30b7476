#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cacs/candidates.hpp"
#include "cacs/scoring.hpp"
#include "cacs/volume.hpp"

namespace cacs {

struct LesionPlanRange {
    int count_min = 0, count_max = 0;
    int size_min = 1, size_max = 1;  // voxels per lesion
    int hu_min = 150, hu_max = 800;  // peak intensity range
};

/// Synthetic cardiac CT recipe: soft-tissue background with Gaussian noise,
/// a blood-pool ellipsoid standing in for the heart, an aorta tube, and
/// planned lesions with exactly known ground truth. Geometry is in voxel
/// units at the default 0.5 x 0.5 x 3.0 mm grid.
struct PhantomSpec {
    uint64_t seed = 0;
    Dims dims{160, 160, 24};
    Spacing spacing{0.5, 0.5, 3.0};

    double heart_center_x = 88, heart_center_y = 96, heart_center_z = 11.5;
    double heart_radius_x = 46, heart_radius_y = 40, heart_radius_z = 8.5;
    double aorta_center_x = 60, aorta_center_y = 36, aorta_radius = 10;

    LesionPlanRange coronary{1, 6, 2, 40, 150, 800};  // blobs near the heart shell
    LesionPlanRange aortic{0, 4, 4, 24, 150, 800};    // arcs on the aorta wall
    LesionPlanRange noise_specks{0, 8, 1, 1, 130, 300};

    double background_hu = 30;
    double noise_sd = 15;
    double blood_pool_hu = 45;
};

struct GroundTruth {
    std::vector<Lesion> lesions;  // coronary + aortic + specks (label "other")
    double reference_agatston = 0;
    RiskClass risk = RiskClass::A;
};

struct PhantomResult {
    Volume volume;
    RoiMask mask;
    GroundTruth truth;
};

/// Deterministic given spec.seed. Every non-lesion voxel is clamped below
/// the 130 HU candidate threshold, so threshold_candidates recovers exactly
/// the planned lesion voxels and noise specks. The reference Agatston score
/// is computed from the planned coronary voxels through the real scoring
/// path. Throws plan_error when the lesion plan does not fit the geometry.
PhantomResult generate_phantom(const PhantomSpec& spec);

struct CohortEntry {
    std::string id;
    std::string volume_path;      // relative to the manifest directory
    std::string mask_path;
    std::string annotation_path;
    double reference_agatston = 0;
    RiskClass risk = RiskClass::A;
    RiskClass target = RiskClass::A;
    size_t candidate_count = 0;
};

struct CohortManifest {
    uint64_t base_seed = 0;
    std::vector<CohortEntry> volumes;
};

/// Generates n phantoms seeded base_seed + i, with per-volume lesion plans
/// chosen so the cohort covers the risk classes in proportion to class_mix
/// (largest-remainder apportionment) and all four density-factor bands.
/// Writes CTV/CTMSK/annotation files plus manifest.json into out_dir.
CohortManifest generate_cohort(size_t n, uint64_t base_seed,
                               const std::array<double, 5>& class_mix,
                               const std::string& out_dir, int threads = 1);

void save_manifest(const CohortManifest& manifest, const std::string& path);
CohortManifest load_manifest(const std::string& path);

}  // namespace cacs
