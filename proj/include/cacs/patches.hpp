#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cacs/candidates.hpp"
#include "cacs/volume.hpp"

namespace cacs {

constexpr int kPatchSide = 51;                              // 25.5 mm at 0.5 mm/pixel
constexpr int kPatchValues = kPatchSide * kPatchSide;       // 2601
constexpr int kPatchHalf = kPatchSide / 2;                  // 25

/// A 51x51 axial intensity window centered on a candidate pixel.
struct Patch {
    std::vector<double> values;  // row y-major, kPatchValues entries
    Coord center;
    LesionLabel label = LesionLabel::Unlabeled;
    double raw_mean = 0;
    double raw_std = 0;

    double at(int px, int py) const { return values[static_cast<size_t>(py) * kPatchSide + px]; }
};

/// 51x51 window from the axial slice of `center`, center pixel at (25,25);
/// out-of-bounds positions are filled with -1024.
Patch extract_patch(const Volume& vol, Coord center);

/// Mean/population-std statistics of a value span.
struct ValueStats {
    double mean = 0;
    double stddev = 0;  // population (divisor n)
};
ValueStats compute_stats(std::span<const double> values);

/// In-place zero-mean unit-std normalization (population std). Degenerate
/// spans (std <= 1e-6) are only mean-shifted. Returns the pre-normalization
/// statistics.
ValueStats normalize_values(std::span<double> values);

/// Per-patch normalization; records raw_mean/raw_std on the patch.
Patch normalize_patch(Patch p);

struct PatchRecord {
    std::array<uint32_t, 3> center;  // x, y, z
    uint8_t label_code;              // LesionLabel as stored on disk
    std::vector<float> values;       // kPatchValues normalized intensities
};

/// Labeled patch database for one or more volumes, indexable per label for
/// stratified sampling. Disk format: magic "CACPDB\x01", u64 record count,
/// then fixed records (3 x u32 center, u8 label, 2601 x f32 LE).
class PatchStore {
public:
    void append(PatchRecord rec);
    void merge(const PatchStore& other);

    const std::vector<PatchRecord>& records() const { return records_; }
    size_t size() const { return records_.size(); }

    /// Record indices carrying the given label, in insertion order.
    const std::vector<size_t>& by_label(LesionLabel label) const {
        return by_label_[static_cast<size_t>(label)];
    }

    void save(const std::string& path) const;
    static PatchStore load(const std::string& path);
    /// Loads and merges every *.pdb file in a directory, sorted by filename.
    static PatchStore load_dir(const std::string& dir);

private:
    std::vector<PatchRecord> records_;
    std::array<std::vector<size_t>, 4> by_label_;
};

/// Extracts, normalizes, and labels one patch per candidate pixel of the
/// masked volume. Candidates inside an annotated lesion take that lesion's
/// label; every other candidate is labeled other-negative.
PatchStore build_patch_store(const Volume& vol, const std::vector<Lesion>& annotations,
                             const RoiMask& mask);

}  // namespace cacs
