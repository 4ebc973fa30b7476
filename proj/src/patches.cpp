#include "cacs/patches.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "cacs/errors.hpp"

namespace cacs {

namespace {

constexpr char kStoreMagic[7] = {'C', 'A', 'C', 'P', 'D', 'B', '\x01'};
constexpr double kDegenerateStd = 1e-6;

}  // namespace

Patch extract_patch(const Volume& vol, Coord center) {
    if (!vol.contains(center))
        throw std::out_of_range("extract_patch: center outside volume");
    Patch p;
    p.center = center;
    p.values.resize(kPatchValues);
    size_t w = 0;
    for (int dy = -kPatchHalf; dy <= kPatchHalf; ++dy) {
        const int y = center.y + dy;
        for (int dx = -kPatchHalf; dx <= kPatchHalf; ++dx) {
            const int x = center.x + dx;
            const bool in = x >= 0 && x < vol.dims().nx && y >= 0 && y < vol.dims().ny;
            p.values[w++] = in ? static_cast<double>(vol.at(x, y, center.z))
                               : static_cast<double>(kHuAir);
        }
    }
    return p;
}

ValueStats compute_stats(std::span<const double> values) {
    ValueStats s;
    if (values.empty()) return s;
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double sq = 0;
    for (double v : values) {
        const double d = v - s.mean;
        sq += d * d;
    }
    s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
    return s;
}

ValueStats normalize_values(std::span<double> values) {
    const ValueStats s = compute_stats(values);
    if (s.stddev > kDegenerateStd) {
        for (double& v : values) v = (v - s.mean) / s.stddev;
    } else {
        for (double& v : values) v -= s.mean;
    }
    return s;
}

Patch normalize_patch(Patch p) {
    const ValueStats s = normalize_values(p.values);
    p.raw_mean = s.mean;
    p.raw_std = s.stddev;
    return p;
}

void PatchStore::append(PatchRecord rec) {
    if (rec.values.size() != static_cast<size_t>(kPatchValues))
        throw payload_size_error("PatchStore: record must hold 2601 values");
    if (rec.label_code > 3)
        throw bad_header_error("PatchStore: label code out of range");
    by_label_[rec.label_code].push_back(records_.size());
    records_.push_back(std::move(rec));
}

void PatchStore::merge(const PatchStore& other) {
    for (const auto& rec : other.records_) append(rec);
}

void PatchStore::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f.write(kStoreMagic, sizeof(kStoreMagic));
    const uint64_t count = records_.size();
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& rec : records_) {
        f.write(reinterpret_cast<const char*>(rec.center.data()), 3 * sizeof(uint32_t));
        f.write(reinterpret_cast<const char*>(&rec.label_code), 1);
        f.write(reinterpret_cast<const char*>(rec.values.data()),
                static_cast<std::streamsize>(rec.values.size() * sizeof(float)));
    }
    if (!f) throw io_error("write failed: " + path);
}

PatchStore PatchStore::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    char magic[sizeof(kStoreMagic)] = {};
    f.read(magic, sizeof(magic));
    if (f.gcount() != sizeof(magic) || std::memcmp(magic, kStoreMagic, 6) != 0)
        throw bad_magic_error(path + ": not a CACPDB file");
    if (magic[6] != kStoreMagic[6])
        throw bad_version_error(path + ": unsupported CACPDB version");
    uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (f.gcount() != sizeof(count))
        throw payload_size_error(path + ": truncated record count");
    PatchStore store;
    for (uint64_t i = 0; i < count; ++i) {
        PatchRecord rec;
        rec.values.resize(kPatchValues);
        f.read(reinterpret_cast<char*>(rec.center.data()), 3 * sizeof(uint32_t));
        f.read(reinterpret_cast<char*>(&rec.label_code), 1);
        f.read(reinterpret_cast<char*>(rec.values.data()),
               static_cast<std::streamsize>(rec.values.size() * sizeof(float)));
        if (!f) throw payload_size_error(path + ": truncated record payload");
        store.append(std::move(rec));
    }
    if (f.peek() != std::ifstream::traits_type::eof())
        throw payload_size_error(path + ": trailing bytes after records");
    return store;
}

PatchStore PatchStore::load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw io_error(dir + " is not a directory");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pdb")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw io_error(dir + ": no .pdb files found");
    PatchStore merged;
    for (const auto& file : files) merged.merge(load(file));
    return merged;
}

PatchStore build_patch_store(const Volume& vol, const std::vector<Lesion>& annotations,
                             const RoiMask& mask) {
    const Dims& d = vol.dims();
    std::unordered_map<size_t, LesionLabel> label_of;
    for (const auto& lesion : annotations)
        for (const Coord& v : lesion.voxels) {
            if (v.x < 0 || v.x >= d.nx || v.y < 0 || v.y >= d.ny || v.z < 0 || v.z >= d.nz)
                throw dim_mismatch_error("build_patch_store: annotation voxel outside dims");
            label_of[vol.index(v.x, v.y, v.z)] = lesion.label;
        }

    const Volume masked = apply_mask(vol, mask);
    const auto candidates = threshold_candidates(vol, mask);

    PatchStore store;
    for (const auto& cand : candidates) {
        const auto it = label_of.find(vol.index(cand.coord.x, cand.coord.y, cand.coord.z));
        const LesionLabel label = it == label_of.end() ? LesionLabel::OtherNegative : it->second;

        Patch patch = normalize_patch(extract_patch(masked, cand.coord));
        PatchRecord rec;
        rec.center = {static_cast<uint32_t>(cand.coord.x), static_cast<uint32_t>(cand.coord.y),
                      static_cast<uint32_t>(cand.coord.z)};
        rec.label_code = static_cast<uint8_t>(label);
        rec.values.resize(kPatchValues);
        for (int i = 0; i < kPatchValues; ++i)
            rec.values[i] = static_cast<float>(patch.values[i]);
        store.append(std::move(rec));
    }
    return store;
}

}  // namespace cacs
