#include "cacs/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cacs/errors.hpp"

namespace cacs {

namespace {

constexpr char kVolumeMagic[8] = {'C', 'T', 'V', 'O', 'L', '\0', '\0', '\x01'};
constexpr char kMaskMagic[8] = {'C', 'T', 'M', 'S', 'K', '\0', '\0', '\x01'};

static_assert(std::endian::native == std::endian::little,
              "CTV/CTMSK writers assume a little-endian host");

void check_dims(const Dims& d, const char* what) {
    if (d.nx < 1 || d.ny < 1 || d.nz < 1)
        throw bad_header_error(std::string(what) + ": dims must be >= 1");
}

struct Header {
    Dims dims;
    Spacing spacing;
};

void read_magic(std::ifstream& f, const char (&magic)[8], const std::string& path) {
    char buf[8] = {};
    f.read(buf, 8);
    if (f.gcount() != 8 || std::memcmp(buf, magic, 5) != 0)
        throw bad_magic_error(path + ": not a " + std::string(magic, 5) + " file");
    if (std::memcmp(buf, magic, 8) != 0)
        throw bad_version_error(path + ": unsupported format version");
}

Header read_header(std::ifstream& f, const std::string& path) {
    std::string line;
    if (!std::getline(f, line))
        throw bad_header_error(path + ": missing header line");
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw bad_header_error(path + ": header is not valid JSON");
    if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 3)
        throw bad_header_error(path + ": header lacks dims[3]");
    if (!j.contains("spacing_mm") || !j["spacing_mm"].is_array() || j["spacing_mm"].size() != 3)
        throw bad_header_error(path + ": header lacks spacing_mm[3]");
    Header h;
    for (int i = 0; i < 3; ++i) {
        if (!j["dims"][i].is_number_integer())
            throw bad_header_error(path + ": dims must be integers");
        if (!j["spacing_mm"][i].is_number())
            throw bad_header_error(path + ": spacing_mm must be numeric");
    }
    h.dims = {j["dims"][0].get<int>(), j["dims"][1].get<int>(), j["dims"][2].get<int>()};
    h.spacing = {j["spacing_mm"][0].get<double>(), j["spacing_mm"][1].get<double>(),
                 j["spacing_mm"][2].get<double>()};
    if (h.dims.nx < 1 || h.dims.ny < 1 || h.dims.nz < 1)
        throw bad_header_error(path + ": dims must be >= 1");
    if (!(h.spacing.sx > 0) || !(h.spacing.sy > 0) || !(h.spacing.sz > 0))
        throw bad_header_error(path + ": spacing must be > 0");
    return h;
}

void write_header(std::ofstream& f, const Dims& d, const Spacing& s) {
    nlohmann::json j;
    j["dims"] = {d.nx, d.ny, d.nz};
    j["spacing_mm"] = {s.sx, s.sy, s.sz};
    f << j.dump() << '\n';
}

/// Nearest input index for output voxel i along one axis, half-voxel center
/// convention, ties resolved toward the lower index.
int nearest_index(int i, double target, double spacing, int n) {
    const double center_mm = (i + 0.5) * target;
    const double continuous = center_mm / spacing - 0.5;
    int idx = static_cast<int>(std::ceil(continuous - 0.5));
    return std::clamp(idx, 0, n - 1);
}

}  // namespace

Volume::Volume(Dims dims, Spacing spacing, std::vector<int16_t> voxels)
    : dims_(dims), spacing_(spacing), voxels_(std::move(voxels)) {
    check_dims(dims_, "Volume");
    if (!(spacing_.sx > 0) || !(spacing_.sy > 0) || !(spacing_.sz > 0))
        throw bad_header_error("Volume: spacing must be > 0");
    if (voxels_.size() != dims_.count())
        throw payload_size_error("Volume: voxel count does not match dims");
    for (auto& v : voxels_) v = std::clamp(v, kHuMin, kHuMax);
}

RoiMask::RoiMask(Dims dims, std::vector<uint8_t> bits) : dims_(dims), bits_(std::move(bits)) {
    check_dims(dims_, "RoiMask");
    if (bits_.size() != dims_.count())
        throw payload_size_error("RoiMask: bit count does not match dims");
    for (auto& b : bits_) b = b ? 1 : 0;
}

RoiMask RoiMask::all_inside(Dims dims) {
    return RoiMask(dims, std::vector<uint8_t>(dims.count(), 1));
}

size_t RoiMask::inside_count() const {
    size_t n = 0;
    for (uint8_t b : bits_) n += b;
    return n;
}

Volume load_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    read_magic(f, kVolumeMagic, path);
    const Header h = read_header(f, path);
    std::vector<int16_t> voxels(h.dims.count());
    const std::streamsize bytes = static_cast<std::streamsize>(voxels.size() * sizeof(int16_t));
    f.read(reinterpret_cast<char*>(voxels.data()), bytes);
    if (f.gcount() != bytes)
        throw payload_size_error(path + ": payload shorter than dims require");
    if (f.peek() != std::ifstream::traits_type::eof())
        throw payload_size_error(path + ": trailing bytes after payload");
    return Volume(h.dims, h.spacing, std::move(voxels));
}

void save_volume(const Volume& vol, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f.write(kVolumeMagic, 8);
    write_header(f, vol.dims(), vol.spacing());
    f.write(reinterpret_cast<const char*>(vol.voxels().data()),
            static_cast<std::streamsize>(vol.voxels().size() * sizeof(int16_t)));
    if (!f) throw io_error("write failed: " + path);
}

RoiMask load_mask(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    read_magic(f, kMaskMagic, path);
    const Header h = read_header(f, path);
    std::vector<uint8_t> bits(h.dims.count());
    const auto bytes = static_cast<std::streamsize>(bits.size());
    f.read(reinterpret_cast<char*>(bits.data()), bytes);
    if (f.gcount() != bytes)
        throw payload_size_error(path + ": payload shorter than dims require");
    if (f.peek() != std::ifstream::traits_type::eof())
        throw payload_size_error(path + ": trailing bytes after payload");
    return RoiMask(h.dims, std::move(bits));
}

void save_mask(const RoiMask& mask, const std::string& path, Spacing spacing) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f.write(kMaskMagic, 8);
    write_header(f, mask.dims(), spacing);
    f.write(reinterpret_cast<const char*>(mask.bits().data()),
            static_cast<std::streamsize>(mask.bits().size()));
    if (!f) throw io_error("write failed: " + path);
}

Volume resample_inplane(const Volume& vol, double target) {
    if (!(target > 0)) throw std::invalid_argument("resample_inplane: target must be > 0");
    const Dims& d = vol.dims();
    const Spacing& s = vol.spacing();
    Dims out_dims;
    out_dims.nx = std::max<int>(1, static_cast<int>(std::lround(d.nx * s.sx / target)));
    out_dims.ny = std::max<int>(1, static_cast<int>(std::lround(d.ny * s.sy / target)));
    out_dims.nz = d.nz;

    std::vector<int> map_x(out_dims.nx), map_y(out_dims.ny);
    for (int i = 0; i < out_dims.nx; ++i) map_x[i] = nearest_index(i, target, s.sx, d.nx);
    for (int j = 0; j < out_dims.ny; ++j) map_y[j] = nearest_index(j, target, s.sy, d.ny);

    std::vector<int16_t> out(out_dims.count());
    size_t w = 0;
    for (int z = 0; z < out_dims.nz; ++z)
        for (int y = 0; y < out_dims.ny; ++y) {
            const int sy = map_y[y];
            for (int x = 0; x < out_dims.nx; ++x) out[w++] = vol.at(map_x[x], sy, z);
        }
    return Volume(out_dims, {target, target, s.sz}, std::move(out));
}

Volume apply_mask(const Volume& vol, const RoiMask& mask) {
    if (vol.dims() != mask.dims())
        throw dim_mismatch_error("apply_mask: volume and mask dims differ");
    std::vector<int16_t> out = vol.voxels();
    const auto& bits = mask.bits();
    for (size_t i = 0; i < out.size(); ++i)
        if (!bits[i]) out[i] = kHuAir;
    return Volume(vol.dims(), vol.spacing(), std::move(out));
}

}  // namespace cacs
