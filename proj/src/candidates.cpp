#include "cacs/candidates.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "cacs/errors.hpp"

namespace cacs {

namespace {

size_t flat_index(const Coord& c, const Dims& d) {
    return static_cast<size_t>(c.x) +
           static_cast<size_t>(d.nx) * (static_cast<size_t>(c.y) + static_cast<size_t>(d.ny) * c.z);
}

/// Shared flood-fill labeling. Neighbor offsets decide the connectivity;
/// lesions come out in (z, y, x) scan order of their first voxel.
std::vector<Lesion> label_components(const std::vector<CandidatePixel>& cands, Dims dims,
                                     Spacing spacing, const std::vector<Coord>& offsets) {
    std::vector<Lesion> lesions;
    if (cands.empty()) return lesions;

    std::vector<int32_t> grid(dims.count(), -1);
    for (size_t i = 0; i < cands.size(); ++i) {
        const Coord& c = cands[i].coord;
        if (c.x < 0 || c.x >= dims.nx || c.y < 0 || c.y >= dims.ny || c.z < 0 || c.z >= dims.nz)
            throw dim_mismatch_error("connected_components: candidate outside dims");
        grid[flat_index(c, dims)] = static_cast<int32_t>(i);
    }

    std::vector<uint8_t> visited(cands.size(), 0);
    std::vector<size_t> stack;
    for (int z = 0; z < dims.nz; ++z)
        for (int y = 0; y < dims.ny; ++y)
            for (int x = 0; x < dims.nx; ++x) {
                const int32_t seed = grid[flat_index({x, y, z}, dims)];
                if (seed < 0 || visited[seed]) continue;

                Lesion lesion;
                lesion.id = static_cast<int>(lesions.size());
                lesion.max_hu = kHuMin;
                bool uniform_label = true;
                LesionLabel first_label = cands[seed].label;

                stack.assign(1, static_cast<size_t>(seed));
                visited[seed] = 1;
                while (!stack.empty()) {
                    const size_t cur = stack.back();
                    stack.pop_back();
                    const CandidatePixel& px = cands[cur];
                    lesion.voxels.push_back(px.coord);
                    lesion.max_hu = std::max(lesion.max_hu, px.hu);
                    if (px.label != first_label) uniform_label = false;
                    for (const Coord& off : offsets) {
                        const Coord n{px.coord.x + off.x, px.coord.y + off.y, px.coord.z + off.z};
                        if (n.x < 0 || n.x >= dims.nx || n.y < 0 || n.y >= dims.ny || n.z < 0 ||
                            n.z >= dims.nz)
                            continue;
                        const int32_t ni = grid[flat_index(n, dims)];
                        if (ni >= 0 && !visited[ni]) {
                            visited[ni] = 1;
                            stack.push_back(static_cast<size_t>(ni));
                        }
                    }
                }

                std::sort(lesion.voxels.begin(), lesion.voxels.end());
                std::map<int, size_t> per_slice;
                for (const Coord& v : lesion.voxels) ++per_slice[v.z];
                for (const auto& [slice, count] : per_slice)
                    lesion.slice_areas.push_back({slice, count * spacing.sx * spacing.sy});
                lesion.label = uniform_label ? first_label : LesionLabel::Unlabeled;
                lesions.push_back(std::move(lesion));
            }
    return lesions;
}

std::vector<Coord> offsets_2d_8conn() {
    std::vector<Coord> offs;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
            if (dx || dy) offs.push_back({dx, dy, 0});
    return offs;
}

std::vector<Coord> offsets_3d_26conn() {
    std::vector<Coord> offs;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
                if (dx || dy || dz) offs.push_back({dx, dy, dz});
    return offs;
}

}  // namespace

std::string to_string(LesionLabel label) {
    switch (label) {
        case LesionLabel::OtherNegative: return "other";
        case LesionLabel::Coronary: return "coronary";
        case LesionLabel::Aortic: return "aortic";
        case LesionLabel::Unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

LesionLabel lesion_label_from_string(const std::string& s) {
    if (s == "coronary") return LesionLabel::Coronary;
    if (s == "aortic") return LesionLabel::Aortic;
    if (s == "other") return LesionLabel::OtherNegative;
    if (s == "unlabeled") return LesionLabel::Unlabeled;
    throw bad_header_error("unknown lesion label: " + s);
}

std::vector<CandidatePixel> threshold_candidates(const Volume& vol, const RoiMask& mask,
                                                 int16_t thr) {
    if (vol.dims() != mask.dims())
        throw dim_mismatch_error("threshold_candidates: volume and mask dims differ");
    std::vector<CandidatePixel> out;
    const Dims& d = vol.dims();
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const int16_t hu = vol.at(x, y, z);
                if (hu >= thr && mask.inside(x, y, z))
                    out.push_back({{x, y, z}, hu, LesionLabel::Unlabeled});
            }
    return out;
}

std::vector<Lesion> connected_components_2d(const std::vector<CandidatePixel>& cands, Dims dims,
                                            Spacing spacing) {
    static const std::vector<Coord> offsets = offsets_2d_8conn();
    return label_components(cands, dims, spacing, offsets);
}

std::vector<Lesion> connected_components_3d(const std::vector<CandidatePixel>& cands, Dims dims,
                                            Spacing spacing) {
    static const std::vector<Coord> offsets = offsets_3d_26conn();
    return label_components(cands, dims, spacing, offsets);
}

std::vector<Lesion> load_annotations(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded() || !j.is_array())
        throw bad_header_error(path + ": annotation file must be a JSON list");
    std::vector<Lesion> lesions;
    int id = 0;
    for (const auto& item : j) {
        if (!item.contains("voxels") || !item.contains("label"))
            throw bad_header_error(path + ": lesion entry lacks voxels/label");
        Lesion lesion;
        lesion.id = id++;
        lesion.label = lesion_label_from_string(item["label"].get<std::string>());
        for (const auto& v : item["voxels"]) {
            if (!v.is_array() || v.size() != 3)
                throw bad_header_error(path + ": voxel entries must be [x,y,z]");
            lesion.voxels.push_back({v[0].get<int>(), v[1].get<int>(), v[2].get<int>()});
        }
        if (lesion.voxels.empty())
            throw bad_header_error(path + ": lesion with no voxels");
        std::sort(lesion.voxels.begin(), lesion.voxels.end());
        lesions.push_back(std::move(lesion));
    }
    return lesions;
}

void save_annotations(const std::vector<Lesion>& lesions, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& lesion : lesions) {
        nlohmann::json voxels = nlohmann::json::array();
        for (const auto& v : lesion.voxels) voxels.push_back({v.x, v.y, v.z});
        j.push_back({{"voxels", std::move(voxels)}, {"label", to_string(lesion.label)}});
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f << j.dump(2) << '\n';
    if (!f) throw io_error("write failed: " + path);
}

}  // namespace cacs
