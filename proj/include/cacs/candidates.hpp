#pragma once

#include <string>
#include <vector>

#include "cacs/volume.hpp"

namespace cacs {

enum class LesionLabel : uint8_t {
    OtherNegative = 0,
    Coronary = 1,
    Aortic = 2,
    Unlabeled = 3,
};

std::string to_string(LesionLabel label);
LesionLabel lesion_label_from_string(const std::string& s);

struct CandidatePixel {
    Coord coord;
    int16_t hu = 0;
    LesionLabel label = LesionLabel::Unlabeled;
};

struct SliceArea {
    int z = 0;
    double area_mm2 = 0;
};

struct Lesion {
    int id = 0;
    std::vector<Coord> voxels;         // sorted by (z, y, x)
    std::vector<SliceArea> slice_areas; // ascending slice index
    int16_t max_hu = 0;
    LesionLabel label = LesionLabel::Unlabeled;

    size_t voxel_count() const { return voxels.size(); }
    double total_area_mm2() const {
        double a = 0;
        for (const auto& s : slice_areas) a += s.area_mm2;
        return a;
    }
};

/// All voxels with hu >= thr inside the mask, in ascending (z, y, x) order,
/// each unlabeled.
std::vector<CandidatePixel> threshold_candidates(const Volume& vol, const RoiMask& mask,
                                                 int16_t thr = kCandidateThresholdHu);

/// Groups candidates into per-slice 8-connected lesions (the Agatston
/// per-plane objects). Lesion ids follow (z, y, x) scan order of each
/// component's first voxel; the result depends only on the candidate set,
/// not on input ordering.
std::vector<Lesion> connected_components_2d(const std::vector<CandidatePixel>& cands, Dims dims,
                                            Spacing spacing);

/// Groups candidates into 26-connected 3D lesions, used for lesion-level
/// detection matching. Same determinism contract as the 2D variant.
std::vector<Lesion> connected_components_3d(const std::vector<CandidatePixel>& cands, Dims dims,
                                            Spacing spacing);

/// Reference annotations: lesions with voxel lists and labels, stored as a
/// JSON list at the resampled grid resolution.
std::vector<Lesion> load_annotations(const std::string& path);
void save_annotations(const std::vector<Lesion>& lesions, const std::string& path);

}  // namespace cacs
