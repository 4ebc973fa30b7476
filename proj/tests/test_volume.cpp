#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "cacs/errors.hpp"
#include "cacs/rng.hpp"
#include "cacs/volume.hpp"

using namespace cacs;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "cacs_test_volume";
    fs::create_directories(dir);
    return dir;
}

/// Builds CTV file bytes by hand, independent of save_volume.
std::string raw_ctv(const std::string& magic, const std::string& header,
                    const std::vector<int16_t>& payload) {
    std::string bytes = magic;
    bytes += header;
    bytes += '\n';
    bytes.append(reinterpret_cast<const char*>(payload.data()), payload.size() * 2);
    return bytes;
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

const std::string kMagic = std::string("CTVOL\0\0\x01", 8);

Volume random_volume(Dims d, Spacing s, uint64_t seed) {
    Rng rng(seed);
    std::vector<int16_t> vox(d.count());
    for (auto& v : vox) v = static_cast<int16_t>(rng.uniform_int(-200, 900));
    return Volume(d, s, std::move(vox));
}

}  // namespace

TEST_CASE("load_volume reads a hand-built file") {
    std::vector<int16_t> payload(32);
    for (int i = 0; i < 32; ++i) payload[i] = static_cast<int16_t>(i * 10 - 50);
    const auto path = temp_dir() / "hand.ctv";
    write_file(path, raw_ctv(kMagic, R"({"dims":[4,4,2],"spacing_mm":[0.5,0.5,3.0]})", payload));

    const Volume vol = load_volume(path.string());
    CHECK(vol.dims() == Dims{4, 4, 2});
    CHECK(vol.spacing() == Spacing{0.5, 0.5, 3.0});
    for (int i = 0; i < 32; ++i) CHECK(vol.voxels()[i] == payload[i]);
}

TEST_CASE("load_volume clamps intensities to [-1024, 4095]") {
    std::vector<int16_t> payload{5000, -2000, 130, 4095};
    const auto path = temp_dir() / "clamp.ctv";
    write_file(path, raw_ctv(kMagic, R"({"dims":[4,1,1],"spacing_mm":[1,1,1]})", payload));
    const Volume vol = load_volume(path.string());
    CHECK(vol.voxels()[0] == 4095);
    CHECK(vol.voxels()[1] == -1024);
    CHECK(vol.voxels()[2] == 130);
    CHECK(vol.voxels()[3] == 4095);
}

TEST_CASE("load_volume rejects malformed files distinctly") {
    const auto dir = temp_dir();
    SUBCASE("payload shorter than dims require") {
        write_file(dir / "short.ctv",
                   raw_ctv(kMagic, R"({"dims":[4,4,2],"spacing_mm":[1,1,1]})",
                           std::vector<int16_t>(31)));
        CHECK_THROWS_AS(load_volume((dir / "short.ctv").string()), payload_size_error);
    }
    SUBCASE("trailing bytes") {
        write_file(dir / "long.ctv",
                   raw_ctv(kMagic, R"({"dims":[4,4,2],"spacing_mm":[1,1,1]})",
                           std::vector<int16_t>(33)));
        CHECK_THROWS_AS(load_volume((dir / "long.ctv").string()), payload_size_error);
    }
    SUBCASE("wrong magic") {
        write_file(dir / "magic.ctv",
                   raw_ctv(std::string("NOTVOL\0\x01", 8), R"({"dims":[1,1,1]})",
                           std::vector<int16_t>(1)));
        CHECK_THROWS_AS(load_volume((dir / "magic.ctv").string()), bad_magic_error);
    }
    SUBCASE("unsupported version") {
        write_file(dir / "ver.ctv",
                   raw_ctv(std::string("CTVOL\0\0\x02", 8),
                           R"({"dims":[1,1,1],"spacing_mm":[1,1,1]})",
                           std::vector<int16_t>(1)));
        CHECK_THROWS_AS(load_volume((dir / "ver.ctv").string()), bad_version_error);
    }
    SUBCASE("header not JSON") {
        write_file(dir / "hdr.ctv", raw_ctv(kMagic, "not json at all", std::vector<int16_t>(1)));
        CHECK_THROWS_AS(load_volume((dir / "hdr.ctv").string()), bad_header_error);
    }
    SUBCASE("header missing spacing") {
        write_file(dir / "hdr2.ctv",
                   raw_ctv(kMagic, R"({"dims":[1,1,1]})", std::vector<int16_t>(1)));
        CHECK_THROWS_AS(load_volume((dir / "hdr2.ctv").string()), bad_header_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_volume((dir / "nope.ctv").string()), io_error);
    }
}

TEST_CASE("save/load round-trip is bit-exact") {
    const Volume vol = random_volume({7, 5, 3}, {0.4, 0.6, 3.0}, 42);
    const auto path = temp_dir() / "rt.ctv";
    save_volume(vol, path.string());
    const Volume back = load_volume(path.string());
    CHECK(back.dims() == vol.dims());
    CHECK(back.spacing() == vol.spacing());
    CHECK(back.voxels() == vol.voxels());
}

TEST_CASE("1x1x1 volume with value 130 round-trips") {
    const Volume vol({1, 1, 1}, {0.5, 0.5, 3.0}, {130});
    const auto path = temp_dir() / "tiny.ctv";
    save_volume(vol, path.string());
    const Volume back = load_volume(path.string());
    CHECK(back.voxels().size() == 1);
    CHECK(back.voxels()[0] == 130);
}

TEST_CASE("save to an unwritable path raises io_error") {
    const Volume vol({1, 1, 1}, {1, 1, 1}, {0});
    CHECK_THROWS_AS(save_volume(vol, "/nonexistent_dir_cacs/x.ctv"), io_error);
}

TEST_CASE("mask round-trip and validation") {
    RoiMask mask({3, 2, 2}, {1, 0, 1, 0, 1, 0, 1, 1, 0, 0, 1, 0});
    const auto path = temp_dir() / "rt.msk";
    save_mask(mask, path.string(), {0.5, 0.5, 3.0});
    const RoiMask back = load_mask(path.string());
    CHECK(back.dims() == mask.dims());
    CHECK(back.bits() == mask.bits());
    CHECK(back.inside_count() == 6);

    CHECK_THROWS_AS(RoiMask({2, 2, 2}, std::vector<uint8_t>(7)), payload_size_error);
}

TEST_CASE("resample at the current spacing is the identity") {
    for (double s : {0.5, 0.37, 1.0}) {
        const Volume vol = random_volume({9, 7, 2}, {s, s, 3.0}, 7);
        const Volume out = resample_inplane(vol, s);
        CHECK(out.dims() == vol.dims());
        CHECK(out.voxels() == vol.voxels());
        CHECK(out.spacing() == vol.spacing());
    }
}

TEST_CASE("upsampling 1.0mm -> 0.5mm turns each voxel into a 2x2 block") {
    // hand trace: output centers 0.25,0.75,1.25,1.75; input centers 0.5,1.5
    const Volume vol({2, 2, 1}, {1.0, 1.0, 3.0}, {100, 200, 300, 400});
    const Volume out = resample_inplane(vol, 0.5);
    REQUIRE(out.dims() == Dims{4, 4, 1});
    const std::vector<int16_t> expected{100, 100, 200, 200, 100, 100, 200, 200,
                                        300, 300, 400, 400, 300, 300, 400, 400};
    CHECK(out.voxels() == expected);
}

TEST_CASE("equidistant output centers resolve to the lower input index") {
    // 4 voxels at 0.5mm -> 2 at 1.0mm: output centers 0.5 and 1.5 sit exactly
    // between input center pairs (0.25,0.75) and (1.25,1.75)
    const Volume vol({4, 1, 1}, {0.5, 1.0, 3.0}, {10, 20, 30, 40});
    const Volume out = resample_inplane(vol, 1.0);
    REQUIRE(out.dims() == Dims{2, 1, 1});
    CHECK(out.voxels() == std::vector<int16_t>{10, 30});
}

TEST_CASE("resampling never invents intensity values") {
    const Volume vol = random_volume({13, 11, 3}, {0.33, 0.45, 3.0}, 99);
    const Volume out = resample_inplane(vol, 0.5);
    const std::set<int16_t> in_set(vol.voxels().begin(), vol.voxels().end());
    for (int16_t v : out.voxels()) CHECK(in_set.count(v) == 1);
}

TEST_CASE("resample rejects nonpositive targets") {
    const Volume vol = random_volume({2, 2, 1}, {1, 1, 3}, 1);
    CHECK_THROWS_AS(resample_inplane(vol, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(resample_inplane(vol, -0.5), std::invalid_argument);
}

TEST_CASE("apply_mask keeps inside voxels and airs out the rest") {
    const Volume vol = random_volume({3, 3, 1}, {1, 1, 3}, 5);

    SUBCASE("all-true mask is the identity") {
        const Volume out = apply_mask(vol, RoiMask::all_inside(vol.dims()));
        CHECK(out.voxels() == vol.voxels());
    }
    SUBCASE("all-false mask airs out everything") {
        const Volume out = apply_mask(vol, RoiMask({3, 3, 1}, std::vector<uint8_t>(9, 0)));
        for (int16_t v : out.voxels()) CHECK(v == -1024);
    }
    SUBCASE("single inside voxel survives") {
        std::vector<uint8_t> bits(9, 0);
        bits[4] = 1;
        Volume src({3, 3, 1}, {1, 1, 3}, std::vector<int16_t>(9, 300));
        const Volume out = apply_mask(src, RoiMask({3, 3, 1}, bits));
        for (size_t i = 0; i < 9; ++i) CHECK(out.voxels()[i] == (i == 4 ? 300 : -1024));
    }
    SUBCASE("idempotent") {
        std::vector<uint8_t> bits(9, 0);
        bits[2] = bits[6] = 1;
        const RoiMask mask({3, 3, 1}, bits);
        const Volume once = apply_mask(vol, mask);
        const Volume twice = apply_mask(once, mask);
        CHECK(once.voxels() == twice.voxels());
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(apply_mask(vol, RoiMask::all_inside({2, 2, 1})), dim_mismatch_error);
    }
}
