#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "cacs/errors.hpp"
#include "cacs/phantom.hpp"

using namespace cacs;
namespace fs = std::filesystem;

namespace {

PhantomSpec lesion_free_spec(uint64_t seed) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.coronary = {0, 0, 1, 1, 150, 800};
    spec.aortic = {0, 0, 1, 1, 150, 800};
    spec.noise_specks = {0, 0, 1, 1, 130, 300};
    return spec;
}

std::set<std::tuple<int, int, int>> planned_voxels(const GroundTruth& truth) {
    std::set<std::tuple<int, int, int>> out;
    for (const auto& lesion : truth.lesions)
        for (const Coord& v : lesion.voxels) out.insert({v.x, v.y, v.z});
    return out;
}

}  // namespace

TEST_CASE("the same seed reproduces the phantom bit for bit") {
    PhantomSpec spec;
    spec.seed = 31;
    const PhantomResult a = generate_phantom(spec);
    const PhantomResult b = generate_phantom(spec);
    CHECK(a.volume.voxels() == b.volume.voxels());
    CHECK(a.mask.bits() == b.mask.bits());
    CHECK(a.truth.reference_agatston == b.truth.reference_agatston);
    REQUIRE(a.truth.lesions.size() == b.truth.lesions.size());
    for (size_t i = 0; i < a.truth.lesions.size(); ++i)
        CHECK(a.truth.lesions[i].voxels == b.truth.lesions[i].voxels);

    PhantomSpec other = spec;
    other.seed = 32;
    CHECK(generate_phantom(other).volume.voxels() != a.volume.voxels());
}

TEST_CASE("a lesion-free phantom has no candidates and class A") {
    const PhantomResult phantom = generate_phantom(lesion_free_spec(5));
    CHECK(threshold_candidates(phantom.volume, phantom.mask).empty());
    CHECK(phantom.truth.reference_agatston == 0.0);
    CHECK(phantom.truth.risk == RiskClass::A);
    CHECK(phantom.truth.lesions.empty());
    CHECK(phantom.mask.inside_count() > 0);
}

TEST_CASE("a forced 10-voxel lesion with 250 HU peak scores 5.0") {
    PhantomSpec spec = lesion_free_spec(8);
    spec.coronary = {1, 1, 10, 10, 250, 250};
    const PhantomResult phantom = generate_phantom(spec);
    REQUIRE(phantom.truth.lesions.size() == 1);
    CHECK(phantom.truth.lesions[0].voxel_count() == 10);
    CHECK(phantom.truth.lesions[0].max_hu == 250);
    // 10 voxels x 0.25 mm^2 x rho 2 x (3/3); every member voxel stays in the
    // 200-299 band so slice splits cannot change the density factor
    CHECK(phantom.truth.reference_agatston == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(phantom.truth.risk == RiskClass::B);
}

TEST_CASE("thresholding recovers exactly the planned voxels") {
    PhantomSpec spec;
    spec.seed = 77;
    spec.coronary = {2, 4, 4, 30, 150, 800};
    spec.aortic = {1, 3, 4, 20, 150, 800};
    spec.noise_specks = {2, 6, 1, 1, 130, 300};
    const PhantomResult phantom = generate_phantom(spec);

    const auto planned = planned_voxels(phantom.truth);
    const auto cands = threshold_candidates(phantom.volume, phantom.mask);
    CHECK(cands.size() == planned.size());
    for (const auto& c : cands) {
        CHECK(planned.count({c.coord.x, c.coord.y, c.coord.z}) == 1);
        CHECK(c.hu >= 130);
        CHECK(phantom.mask.inside(c.coord));
    }
}

TEST_CASE("planned lesions stay geometrically separated") {
    PhantomSpec spec;
    spec.seed = 123;
    spec.coronary = {3, 6, 2, 40, 150, 800};
    spec.aortic = {1, 4, 4, 24, 150, 800};
    spec.noise_specks = {2, 8, 1, 1, 130, 300};
    const PhantomResult phantom = generate_phantom(spec);

    SUBCASE("3D components equal the planned lesion count") {
        const auto cands = threshold_candidates(phantom.volume, phantom.mask);
        const auto comps = connected_components_3d(cands, phantom.volume.dims(),
                                                   phantom.volume.spacing());
        CHECK(comps.size() == phantom.truth.lesions.size());
    }
    SUBCASE("coronary voxels keep 3 voxels of clearance from the aorta surface") {
        for (const auto& lesion : phantom.truth.lesions) {
            if (lesion.label != LesionLabel::Coronary) continue;
            for (const Coord& v : lesion.voxels) {
                const double dx = v.x - spec.aorta_center_x;
                const double dy = v.y - spec.aorta_center_y;
                CHECK(std::sqrt(dx * dx + dy * dy) >= spec.aorta_radius + 3.0);
            }
        }
    }
    SUBCASE("every planned lesion peaks at or above its floor") {
        for (const auto& lesion : phantom.truth.lesions) {
            if (lesion.label == LesionLabel::OtherNegative) CHECK(lesion.max_hu >= 130);
            else CHECK(lesion.max_hu >= 150);
        }
    }
    SUBCASE("aortic lesions sit on the tube wall") {
        for (const auto& lesion : phantom.truth.lesions) {
            if (lesion.label != LesionLabel::Aortic) continue;
            for (const Coord& v : lesion.voxels) {
                const double dx = v.x - spec.aorta_center_x;
                const double dy = v.y - spec.aorta_center_y;
                const double dist = std::sqrt(dx * dx + dy * dy);
                CHECK(dist >= spec.aorta_radius - 1.0);
                CHECK(dist <= spec.aorta_radius + 1.0);
            }
        }
    }
}

TEST_CASE("unsatisfiable plans are rejected") {
    SUBCASE("geometry too small") {
        PhantomSpec spec;
        spec.dims = {8, 8, 1};
        CHECK_THROWS_AS(generate_phantom(spec), plan_error);
    }
    SUBCASE("lesion budget exceeds the shell") {
        PhantomSpec spec = lesion_free_spec(3);
        spec.coronary = {60, 60, 400, 400, 150, 800};
        CHECK_THROWS_AS(generate_phantom(spec), plan_error);
    }
}

TEST_CASE("cohorts cover the requested classes with reproducible manifests") {
    const auto dir = fs::temp_directory_path() / "cacs_test_phantom" / "cohort";
    fs::remove_all(dir.parent_path());
    const CohortManifest manifest = generate_cohort(5, 900, {1, 1, 1, 1, 1}, dir.string(), 2);

    REQUIRE(manifest.volumes.size() == 5);
    std::set<char> classes;
    for (const auto& v : manifest.volumes) classes.insert(to_char(v.risk));
    CHECK(classes == std::set<char>{'A', 'B', 'C', 'D', 'E'});

    SUBCASE("manifest scores equal recomputed annotation scores") {
        for (const auto& entry : manifest.volumes) {
            const Volume vol = load_volume((dir / entry.volume_path).string());
            const auto ann = load_annotations((dir / entry.annotation_path).string());
            const ScoreReport ref = score_reference(ann, vol, entry.id);
            CHECK(ref.agatston ==
                  doctest::Approx(entry.reference_agatston).epsilon(1e-12));
            CHECK(ref.risk == entry.risk);
        }
    }
    SUBCASE("regenerating with the same base seed matches exactly") {
        const auto dir2 = fs::temp_directory_path() / "cacs_test_phantom" / "cohort2";
        const CohortManifest again = generate_cohort(5, 900, {1, 1, 1, 1, 1}, dir2.string(), 1);
        REQUIRE(again.volumes.size() == manifest.volumes.size());
        for (size_t i = 0; i < again.volumes.size(); ++i) {
            CHECK(again.volumes[i].reference_agatston ==
                  manifest.volumes[i].reference_agatston);
            CHECK(again.volumes[i].risk == manifest.volumes[i].risk);
            CHECK(again.volumes[i].candidate_count == manifest.volumes[i].candidate_count);
        }
    }
    SUBCASE("manifest round-trips through JSON") {
        const CohortManifest back = load_manifest((dir / "manifest.json").string());
        REQUIRE(back.volumes.size() == manifest.volumes.size());
        CHECK(back.base_seed == manifest.base_seed);
        for (size_t i = 0; i < back.volumes.size(); ++i) {
            CHECK(back.volumes[i].id == manifest.volumes[i].id);
            CHECK(back.volumes[i].reference_agatston ==
                  manifest.volumes[i].reference_agatston);
            CHECK(back.volumes[i].risk == manifest.volumes[i].risk);
        }
    }
}

TEST_CASE("cohort lesions cover all four density bands") {
    const auto dir = fs::temp_directory_path() / "cacs_test_phantom" / "bands";
    fs::remove_all(dir);
    const CohortManifest manifest = generate_cohort(10, 50, {1, 1, 1, 1, 1}, dir.string(), 2);
    std::set<int> bands;
    for (const auto& entry : manifest.volumes) {
        const auto ann = load_annotations((dir / entry.annotation_path).string());
        const Volume vol = load_volume((dir / entry.volume_path).string());
        for (const auto& lesion : ann) {
            if (lesion.label != LesionLabel::Coronary) continue;
            int16_t peak = -1024;
            for (const Coord& v : lesion.voxels) peak = std::max(peak, vol.at(v));
            bands.insert(density_factor(peak));
        }
    }
    CHECK(bands == std::set<int>{1, 2, 3, 4});
}
