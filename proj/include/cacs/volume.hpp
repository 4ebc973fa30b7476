#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cacs {

constexpr int16_t kHuMin = -1024;
constexpr int16_t kHuMax = 4095;
constexpr int16_t kHuAir = -1024;
constexpr int16_t kCandidateThresholdHu = 130;

struct Dims {
    int nx = 0, ny = 0, nz = 0;
    bool operator==(const Dims&) const = default;
    size_t count() const { return static_cast<size_t>(nx) * ny * nz; }
};

struct Spacing {
    double sx = 0, sy = 0, sz = 0;
    bool operator==(const Spacing&) const = default;
};

struct Coord {
    int x = 0, y = 0, z = 0;
    bool operator==(const Coord&) const = default;
    bool operator<(const Coord& o) const {
        if (z != o.z) return z < o.z;
        if (y != o.y) return y < o.y;
        return x < o.x;
    }
};

/// CT volume: int16 Hounsfield intensities on a regular anisotropic grid,
/// x-fastest memory order. Immutable once built; intensities are clamped to
/// [-1024, 4095] at construction.
class Volume {
public:
    Volume() = default;
    Volume(Dims dims, Spacing spacing, std::vector<int16_t> voxels);

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    const std::vector<int16_t>& voxels() const { return voxels_; }

    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(x) + static_cast<size_t>(dims_.nx) * (static_cast<size_t>(y) + static_cast<size_t>(dims_.ny) * z);
    }
    int16_t at(int x, int y, int z) const { return voxels_[index(x, y, z)]; }
    int16_t at(const Coord& c) const { return at(c.x, c.y, c.z); }
    bool contains(const Coord& c) const {
        return c.x >= 0 && c.x < dims_.nx && c.y >= 0 && c.y < dims_.ny && c.z >= 0 && c.z < dims_.nz;
    }

private:
    Dims dims_;
    Spacing spacing_{1, 1, 1};
    std::vector<int16_t> voxels_;
};

/// Binary inside/outside cardiac region mask on the same grid as a Volume.
class RoiMask {
public:
    RoiMask() = default;
    RoiMask(Dims dims, std::vector<uint8_t> bits);
    static RoiMask all_inside(Dims dims);

    const Dims& dims() const { return dims_; }
    const std::vector<uint8_t>& bits() const { return bits_; }
    std::vector<uint8_t>& bits() { return bits_; }

    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(x) + static_cast<size_t>(dims_.nx) * (static_cast<size_t>(y) + static_cast<size_t>(dims_.ny) * z);
    }
    bool inside(int x, int y, int z) const { return bits_[index(x, y, z)] != 0; }
    bool inside(const Coord& c) const { return inside(c.x, c.y, c.z); }
    size_t inside_count() const;

private:
    Dims dims_;
    std::vector<uint8_t> bits_;
};

// CTV / CTMSK file formats: 8-byte magic, one JSON header line
// {"dims":[nx,ny,nz],"spacing_mm":[sx,sy,sz]}, then the little-endian
// payload (int16 per voxel for CTV, one 0/1 byte per voxel for CTMSK),
// x-fastest, then y, then z.
Volume load_volume(const std::string& path);
void save_volume(const Volume& vol, const std::string& path);

RoiMask load_mask(const std::string& path);
void save_mask(const RoiMask& mask, const std::string& path, Spacing spacing = {1, 1, 1});

/// Nearest-neighbor in-plane resampling to `target` mm (default 0.5); slice
/// spacing is never touched. Output dims are round(n*s/target) per in-plane
/// axis. Voxel centers follow the half-voxel convention; equidistant inputs
/// resolve to the lower index. No new intensity values are created.
Volume resample_inplane(const Volume& vol, double target = 0.5);

/// Keeps voxels inside the mask, sets everything outside to -1024 (air).
Volume apply_mask(const Volume& vol, const RoiMask& mask);

}  // namespace cacs
