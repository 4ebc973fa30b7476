#include "cacs/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "cacs/errors.hpp"
#include "cacs/parallel.hpp"
#include "cacs/rng.hpp"

namespace cacs {

namespace {

constexpr int16_t kNonLesionCeiling = 125;  // keeps accidental candidates impossible
constexpr double kMaskHeartScale = 1.12;
constexpr double kMaskAortaDilation = 4.0;
constexpr double kAortaClearance = 4.0;  // min distance lesion voxel -> tube surface
constexpr double kShellLow = 0.90, kShellHigh = 1.06;    // seeding band
constexpr double kGrowLow = 0.86, kGrowHigh = 1.10;      // growth band
constexpr int kPlacttempts = 40;

struct Geometry {
    const PhantomSpec& spec;

    double ellipsoid_norm(int x, int y, int z) const {
        const double dx = (x - spec.heart_center_x) / spec.heart_radius_x;
        const double dy = (y - spec.heart_center_y) / spec.heart_radius_y;
        const double dz = (z - spec.heart_center_z) / spec.heart_radius_z;
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    double aorta_dist(int x, int y) const {
        const double dx = x - spec.aorta_center_x;
        const double dy = y - spec.aorta_center_y;
        return std::sqrt(dx * dx + dy * dy);
    }
    bool in_mask(int x, int y, int z) const {
        const double dxm = (x - spec.heart_center_x) / (spec.heart_radius_x * kMaskHeartScale);
        const double dym = (y - spec.heart_center_y) / (spec.heart_radius_y * kMaskHeartScale);
        const double dzm = (z - spec.heart_center_z) / (spec.heart_radius_z * kMaskHeartScale);
        if (dxm * dxm + dym * dym + dzm * dzm <= 1.0) return true;
        return aorta_dist(x, y) <= spec.aorta_radius + kMaskAortaDilation;
    }
    bool in_blood_pool(int x, int y, int z) const {
        return ellipsoid_norm(x, y, z) <= 1.0 || aorta_dist(x, y) <= spec.aorta_radius;
    }
    bool clear_of_aorta(int x, int y) const {
        return aorta_dist(x, y) >= spec.aorta_radius + kAortaClearance;
    }
    bool on_aorta_wall(int x, int y) const {
        const double d = aorta_dist(x, y);
        return d >= spec.aorta_radius - 1.0 && d <= spec.aorta_radius + 1.0;
    }
};

struct VoxelGrid {
    Dims dims;
    std::vector<uint8_t> occupied;  // lesion voxels plus a 1-voxel buffer

    explicit VoxelGrid(Dims d) : dims(d), occupied(d.count(), 0) {}

    size_t flat(int x, int y, int z) const {
        return static_cast<size_t>(x) +
               static_cast<size_t>(dims.nx) * (static_cast<size_t>(y) + static_cast<size_t>(dims.ny) * z);
    }
    bool in_bounds(int x, int y, int z) const {
        return x >= 1 && x < dims.nx - 1 && y >= 1 && y < dims.ny - 1 && z >= 0 && z < dims.nz;
    }
    bool is_free(const Coord& c) const { return occupied[flat(c.x, c.y, c.z)] == 0; }

    /// Marks the voxel and its 26-neighborhood, keeping later lesions at
    /// Chebyshev distance >= 2 so components never merge.
    void claim(const Coord& c) {
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int x = c.x + dx, y = c.y + dy, z = c.z + dz;
                    if (x >= 0 && x < dims.nx && y >= 0 && y < dims.ny && z >= 0 && z < dims.nz)
                        occupied[flat(x, y, z)] = 1;
                }
    }
};

struct PlannedLesion {
    std::vector<Coord> voxels;
    std::vector<int16_t> hu;  // parallel to voxels
    int peak_hu = 0;
    LesionLabel label = LesionLabel::Unlabeled;
};

/// Density-band floor of a peak intensity; member voxels are drawn at or
/// above it so every axial slice of the lesion scores in the planned band.
int band_floor(int peak) {
    if (peak <= 199) return 140;
    if (peak <= 299) return 200;
    if (peak <= 399) return 300;
    return 400;
}

int draw_peak_hu(const LesionPlanRange& plan, Rng& rng) {
    struct Band {
        int lo, hi;
    };
    static constexpr Band bands[4] = {{130, 199}, {200, 299}, {300, 399}, {400, 4095}};
    std::vector<Band> eligible;
    for (const auto& b : bands) {
        const int lo = std::max(b.lo, plan.hu_min);
        const int hi = std::min(b.hi, plan.hu_max);
        if (lo <= hi) eligible.push_back({lo, hi});
    }
    if (eligible.empty()) throw plan_error("lesion plan HU range matches no density band");
    const auto& band = eligible[rng.index(eligible.size())];
    return static_cast<int>(rng.uniform_int(band.lo, band.hi));
}

void assign_hu(PlannedLesion& lesion, Rng& rng) {
    lesion.hu.resize(lesion.voxels.size());
    const int lo = std::max(band_floor(lesion.peak_hu), lesion.peak_hu - 150);
    lesion.hu[0] = static_cast<int16_t>(lesion.peak_hu);  // seed voxel carries the peak
    for (size_t i = 1; i < lesion.voxels.size(); ++i)
        lesion.hu[i] = static_cast<int16_t>(rng.uniform_int(lo, lesion.peak_hu));
}

/// Connected blob growth from a seed within an eligibility predicate;
/// in-plane growth is preferred, slices join occasionally.
template <typename Eligible>
bool grow_blob(const Coord& seed, int target_size, const VoxelGrid& grid, Eligible eligible,
               Rng& rng, std::vector<Coord>& out) {
    out.assign(1, seed);
    std::unordered_set<size_t> taken{grid.flat(seed.x, seed.y, seed.z)};
    while (static_cast<int>(out.size()) < target_size) {
        std::vector<Coord> inplane, crossplane;
        for (const Coord& v : out) {
            static constexpr int off[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                              {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
            for (const auto& o : off) {
                const Coord n{v.x + o[0], v.y + o[1], v.z + o[2]};
                if (!grid.in_bounds(n.x, n.y, n.z)) continue;
                if (taken.count(grid.flat(n.x, n.y, n.z))) continue;
                if (!grid.is_free(n)) continue;
                if (!eligible(n)) continue;
                (o[2] == 0 ? inplane : crossplane).push_back(n);
            }
        }
        const bool use_inplane =
            !inplane.empty() && (crossplane.empty() || rng.uniform() < 0.85);
        const auto& pool = use_inplane ? inplane : crossplane;
        if (pool.empty()) return false;
        const Coord next = pool[rng.index(pool.size())];
        taken.insert(grid.flat(next.x, next.y, next.z));
        out.push_back(next);
    }
    return true;
}

Lesion to_lesion(const PlannedLesion& planned, int id, const Spacing& spacing) {
    Lesion lesion;
    lesion.id = id;
    lesion.label = planned.label;
    lesion.max_hu = static_cast<int16_t>(planned.peak_hu);
    std::vector<std::pair<Coord, int16_t>> zipped;
    for (size_t i = 0; i < planned.voxels.size(); ++i)
        zipped.emplace_back(planned.voxels[i], planned.hu[i]);
    std::sort(zipped.begin(), zipped.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    int16_t max_hu = kHuMin;
    std::vector<SliceArea> areas;
    for (const auto& [coord, hu] : zipped) {
        lesion.voxels.push_back(coord);
        max_hu = std::max(max_hu, hu);
        if (!areas.empty() && areas.back().z == coord.z)
            areas.back().area_mm2 += spacing.sx * spacing.sy;
        else
            areas.push_back({coord.z, spacing.sx * spacing.sy});
    }
    lesion.max_hu = max_hu;
    lesion.slice_areas = std::move(areas);
    return lesion;
}

}  // namespace

PhantomResult generate_phantom(const PhantomSpec& spec) {
    const Dims& d = spec.dims;
    if (d.nx < 32 || d.ny < 32 || d.nz < 2)
        throw plan_error("phantom dims too small for the geometry");
    Geometry geo{spec};
    Rng rng(spec.seed);
    VoxelGrid grid(d);

    // eligible coronary seed positions: a shell around the heart ellipsoid,
    // inside the mask, clear of the aorta
    std::vector<Coord> shell;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 1; y < d.ny - 1; ++y)
            for (int x = 1; x < d.nx - 1; ++x) {
                const double en = geo.ellipsoid_norm(x, y, z);
                if (en >= kShellLow && en <= kShellHigh && geo.in_mask(x, y, z) &&
                    geo.clear_of_aorta(x, y))
                    shell.push_back({x, y, z});
            }

    const auto grow_eligible_coronary = [&](const Coord& c) {
        const double en = geo.ellipsoid_norm(c.x, c.y, c.z);
        return en >= kGrowLow && en <= kGrowHigh && geo.in_mask(c.x, c.y, c.z) &&
               geo.clear_of_aorta(c.x, c.y);
    };

    std::vector<PlannedLesion> lesions;

    const int n_coronary =
        static_cast<int>(rng.uniform_int(spec.coronary.count_min, spec.coronary.count_max));
    for (int i = 0; i < n_coronary; ++i) {
        const int size = static_cast<int>(rng.uniform_int(spec.coronary.size_min,
                                                          std::max(spec.coronary.size_min,
                                                                   spec.coronary.size_max)));
        PlannedLesion lesion;
        lesion.label = LesionLabel::Coronary;
        lesion.peak_hu = draw_peak_hu(spec.coronary, rng);
        bool placed = false;
        for (int attempt = 0; attempt < kPlacttempts && !placed; ++attempt) {
            if (shell.empty()) break;
            const Coord seed = shell[rng.index(shell.size())];
            if (!grid.is_free(seed)) continue;
            placed = grow_blob(seed, size, grid, grow_eligible_coronary, rng, lesion.voxels);
        }
        if (!placed) throw plan_error("cannot place coronary lesion within the heart shell");
        assign_hu(lesion, rng);
        for (const Coord& v : lesion.voxels) grid.claim(v);
        lesions.push_back(std::move(lesion));
    }

    const int n_aortic =
        static_cast<int>(rng.uniform_int(spec.aortic.count_min, spec.aortic.count_max));
    for (int i = 0; i < n_aortic; ++i) {
        const int size = static_cast<int>(
            rng.uniform_int(spec.aortic.size_min, std::max(spec.aortic.size_min,
                                                           spec.aortic.size_max)));
        PlannedLesion lesion;
        lesion.label = LesionLabel::Aortic;
        lesion.peak_hu = draw_peak_hu(spec.aortic, rng);
        bool placed = false;
        for (int attempt = 0; attempt < kPlacttempts && !placed; ++attempt) {
            const int z = static_cast<int>(rng.uniform_int(0, d.nz - 1));
            // wall voxels of this slice
            std::vector<Coord> wall;
            const int r = static_cast<int>(std::ceil(spec.aorta_radius)) + 2;
            for (int y = std::max(1, static_cast<int>(spec.aorta_center_y) - r);
                 y <= std::min(d.ny - 2, static_cast<int>(spec.aorta_center_y) + r); ++y)
                for (int x = std::max(1, static_cast<int>(spec.aorta_center_x) - r);
                     x <= std::min(d.nx - 2, static_cast<int>(spec.aorta_center_x) + r); ++x)
                    if (geo.on_aorta_wall(x, y) && geo.in_mask(x, y, z))
                        wall.push_back({x, y, z});
            if (wall.empty()) continue;
            const Coord seed = wall[rng.index(wall.size())];
            if (!grid.is_free(seed)) continue;
            const auto grow_eligible_wall = [&](const Coord& c) {
                return c.z == z && geo.on_aorta_wall(c.x, c.y) && geo.in_mask(c.x, c.y, c.z);
            };
            placed = grow_blob(seed, size, grid, grow_eligible_wall, rng, lesion.voxels);
        }
        if (!placed) throw plan_error("cannot place aortic lesion on the tube wall");
        assign_hu(lesion, rng);
        for (const Coord& v : lesion.voxels) grid.claim(v);
        lesions.push_back(std::move(lesion));
    }

    const int n_specks = static_cast<int>(
        rng.uniform_int(spec.noise_specks.count_min, spec.noise_specks.count_max));
    for (int i = 0; i < n_specks; ++i) {
        PlannedLesion speck;
        speck.label = LesionLabel::OtherNegative;
        speck.peak_hu =
            static_cast<int>(rng.uniform_int(spec.noise_specks.hu_min, spec.noise_specks.hu_max));
        bool placed = false;
        for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
            const Coord c{static_cast<int>(rng.uniform_int(1, d.nx - 2)),
                          static_cast<int>(rng.uniform_int(1, d.ny - 2)),
                          static_cast<int>(rng.uniform_int(0, d.nz - 1))};
            if (!geo.in_mask(c.x, c.y, c.z) || !grid.is_free(c)) continue;
            speck.voxels.assign(1, c);
            speck.hu.assign(1, static_cast<int16_t>(speck.peak_hu));
            grid.claim(c);
            placed = true;
        }
        if (!placed) throw plan_error("cannot place noise speck inside the mask");
        lesions.push_back(std::move(speck));
    }

    // background: soft tissue + blood pool + Gaussian noise, everything
    // non-lesion capped below the candidate threshold
    std::vector<int16_t> voxels(d.count());
    size_t w = 0;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const double base =
                    geo.in_blood_pool(x, y, z) ? spec.blood_pool_hu : spec.background_hu;
                const double v = base + rng.normal(0.0, spec.noise_sd);
                voxels[w++] = static_cast<int16_t>(
                    std::min<double>(kNonLesionCeiling, std::lround(v)));
            }

    std::vector<uint8_t> mask_bits(d.count());
    w = 0;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) mask_bits[w++] = geo.in_mask(x, y, z) ? 1 : 0;

    // stamp planned lesions
    for (const auto& lesion : lesions)
        for (size_t i = 0; i < lesion.voxels.size(); ++i) {
            const Coord& v = lesion.voxels[i];
            voxels[static_cast<size_t>(v.x) +
                   static_cast<size_t>(d.nx) *
                       (static_cast<size_t>(v.y) + static_cast<size_t>(d.ny) * v.z)] =
                lesion.hu[i];
        }

    PhantomResult result{Volume(d, spec.spacing, std::move(voxels)),
                         RoiMask(d, std::move(mask_bits)),
                         GroundTruth{}};

    int id = 0;
    std::vector<CandidatePixel> coronary_pixels;
    for (const auto& planned : lesions) {
        Lesion lesion = to_lesion(planned, id++, spec.spacing);
        if (planned.label == LesionLabel::Coronary)
            for (size_t i = 0; i < planned.voxels.size(); ++i)
                coronary_pixels.push_back(
                    {planned.voxels[i], planned.hu[i], LesionLabel::Coronary});
        result.truth.lesions.push_back(std::move(lesion));
    }

    const auto lesions_2d = connected_components_2d(coronary_pixels, d, spec.spacing);
    result.truth.reference_agatston = agatston_score(lesions_2d, spec.spacing.sz);
    result.truth.risk = risk_class(result.truth.reference_agatston);
    return result;
}

namespace {

LesionPlanRange coronary_plan_for_class(RiskClass target) {
    // bounds chosen so score = voxels * 0.25 mm^2 * rho lands inside the
    // class interval for every draw
    switch (target) {
        case RiskClass::A: return {0, 0, 1, 1, 150, 800};
        case RiskClass::B: return {1, 1, 2, 8, 150, 199};
        case RiskClass::C: return {3, 4, 18, 30, 150, 299};
        case RiskClass::D: return {5, 6, 30, 40, 300, 800};
        case RiskClass::E: return {9, 12, 50, 80, 400, 800};
    }
    throw plan_error("unknown risk class target");
}

std::vector<RiskClass> apportion_classes(size_t n, const std::array<double, 5>& mix) {
    double total = 0;
    for (double wgt : mix) {
        if (wgt < 0) throw std::invalid_argument("class mix weights must be >= 0");
        total += wgt;
    }
    if (total <= 0) throw std::invalid_argument("class mix weights must not all be zero");

    std::array<size_t, 5> counts{};
    std::array<double, 5> remainder{};
    size_t assigned = 0;
    for (size_t c = 0; c < 5; ++c) {
        const double exact = static_cast<double>(n) * mix[c] / total;
        counts[c] = static_cast<size_t>(std::floor(exact));
        remainder[c] = exact - std::floor(exact);
        assigned += counts[c];
    }
    while (assigned < n) {
        size_t best = 0;
        for (size_t c = 1; c < 5; ++c)
            if (remainder[c] > remainder[best]) best = c;
        ++counts[best];
        remainder[best] = -1;
        ++assigned;
    }

    std::vector<RiskClass> classes;
    classes.reserve(n);
    // round-robin so every slice of the cohort mixes classes
    bool any = true;
    while (any) {
        any = false;
        for (size_t c = 0; c < 5; ++c)
            if (counts[c] > 0) {
                classes.push_back(static_cast<RiskClass>('A' + static_cast<char>(c)));
                --counts[c];
                any = true;
            }
    }
    return classes;
}

}  // namespace

CohortManifest generate_cohort(size_t n, uint64_t base_seed,
                               const std::array<double, 5>& class_mix,
                               const std::string& out_dir, int threads) {
    if (n < 1) throw std::invalid_argument("generate_cohort: n must be >= 1");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    const auto targets = apportion_classes(n, class_mix);
    CohortManifest manifest;
    manifest.base_seed = base_seed;
    manifest.volumes.resize(n);

    std::vector<std::string> errors(n);
    parallel_for(n, threads, [&](size_t i) {
        try {
            PhantomSpec spec;
            spec.seed = base_seed + i;
            spec.coronary = coronary_plan_for_class(targets[i]);
            const PhantomResult phantom = generate_phantom(spec);
            if (phantom.truth.risk != targets[i])
                throw plan_error("realized risk class missed its target");

            char name[32];
            std::snprintf(name, sizeof(name), "vol_%03zu", i);
            CohortEntry entry;
            entry.id = name;
            entry.volume_path = std::string(name) + ".ctv";
            entry.mask_path = std::string(name) + ".msk";
            entry.annotation_path = std::string(name) + ".ann.json";
            entry.reference_agatston = phantom.truth.reference_agatston;
            entry.risk = phantom.truth.risk;
            entry.target = targets[i];
            entry.candidate_count =
                threshold_candidates(phantom.volume, phantom.mask).size();

            const fs::path dir(out_dir);
            save_volume(phantom.volume, (dir / entry.volume_path).string());
            save_mask(phantom.mask, (dir / entry.mask_path).string(), spec.spacing);
            save_annotations(phantom.truth.lesions, (dir / entry.annotation_path).string());
            manifest.volumes[i] = std::move(entry);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    for (const auto& err : errors)
        if (!err.empty()) throw plan_error("cohort generation failed: " + err);

    save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

void save_manifest(const CohortManifest& manifest, const std::string& path) {
    nlohmann::json vols = nlohmann::json::array();
    for (const auto& v : manifest.volumes)
        vols.push_back({{"id", v.id},
                        {"volume", v.volume_path},
                        {"mask", v.mask_path},
                        {"annotation", v.annotation_path},
                        {"reference_agatston", v.reference_agatston},
                        {"risk_class", std::string(1, to_char(v.risk))},
                        {"target_class", std::string(1, to_char(v.target))},
                        {"candidates", v.candidate_count}});
    nlohmann::json j;
    j["base_seed"] = manifest.base_seed;
    j["count"] = manifest.volumes.size();
    j["volumes"] = std::move(vols);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f << j.dump(2) << '\n';
    if (!f) throw io_error("write failed: " + path);
}

CohortManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("volumes"))
        throw bad_header_error(path + ": not a cohort manifest");
    CohortManifest manifest;
    manifest.base_seed = j.value("base_seed", uint64_t{0});
    for (const auto& v : j["volumes"]) {
        CohortEntry entry;
        entry.id = v.at("id").get<std::string>();
        entry.volume_path = v.at("volume").get<std::string>();
        entry.mask_path = v.at("mask").get<std::string>();
        entry.annotation_path = v.at("annotation").get<std::string>();
        entry.reference_agatston = v.at("reference_agatston").get<double>();
        entry.risk = risk_class_from_char(v.at("risk_class").get<std::string>().at(0));
        entry.target = risk_class_from_char(v.value("target_class", std::string("A")).at(0));
        entry.candidate_count = v.value("candidates", size_t{0});
        manifest.volumes.push_back(std::move(entry));
    }
    return manifest;
}

}  // namespace cacs
