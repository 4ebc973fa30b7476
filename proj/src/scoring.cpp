#include "cacs/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "cacs/errors.hpp"
#include "cacs/parallel.hpp"
#include "cacs/patches.hpp"

namespace cacs {

RiskClass risk_class_from_char(char c) {
    switch (c) {
        case 'A': return RiskClass::A;
        case 'B': return RiskClass::B;
        case 'C': return RiskClass::C;
        case 'D': return RiskClass::D;
        case 'E': return RiskClass::E;
    }
    throw bad_header_error(std::string("unknown risk class '") + c + "'");
}

int density_factor(int max_hu) {
    if (max_hu < 130) throw std::invalid_argument("density_factor: max_hu below 130");
    if (max_hu <= 199) return 1;
    if (max_hu <= 299) return 2;
    if (max_hu <= 399) return 3;
    return 4;
}

double agatston_score(const std::vector<Lesion>& lesions_2d, double slice_thickness_mm) {
    if (!(slice_thickness_mm > 0))
        throw std::invalid_argument("agatston_score: slice thickness must be > 0");
    const double correction = slice_thickness_mm / 3.0;
    double score = 0;
    for (const auto& lesion : lesions_2d)
        score += lesion.total_area_mm2() * density_factor(lesion.max_hu) * correction;
    return score;
}

RiskClass risk_class(double score) {
    if (score < 0) throw std::invalid_argument("risk_class: negative score");
    if (score == 0) return RiskClass::A;
    if (score <= 10) return RiskClass::B;
    if (score <= 100) return RiskClass::C;
    if (score <= 400) return RiskClass::D;
    return RiskClass::E;
}

namespace {

ScoreReport score_kept_pixels(std::vector<KeptPixel> kept, size_t candidate_count,
                              const PcacStats& stats, const Volume& vol,
                              const std::string& volume_id) {
    ScoreReport report;
    report.volume_id = volume_id;
    report.candidate_count = candidate_count;
    report.pcac = stats;

    std::vector<CandidatePixel> pixels;
    pixels.reserve(kept.size());
    for (const auto& k : kept) pixels.push_back({k.coord, k.hu, LesionLabel::Unlabeled});
    const auto lesions = connected_components_2d(pixels, vol.dims(), vol.spacing());

    double total = 0;
    for (const auto& lesion : lesions) {
        LesionScore ls;
        ls.slice = lesion.voxels.front().z;
        ls.area_mm2 = lesion.total_area_mm2();
        ls.max_hu = lesion.max_hu;
        ls.rho = density_factor(lesion.max_hu);
        ls.contribution = ls.area_mm2 * ls.rho * (vol.spacing().sz / 3.0);
        total += ls.contribution;
        report.lesions.push_back(ls);
    }
    report.agatston = total;
    report.risk = risk_class(total);
    report.kept_pixels = std::move(kept);
    return report;
}

}  // namespace

ScoreReport predict_volume_with(const PatchClassifier& classifier, const Volume& vol,
                                const RoiMask& mask, const std::string& volume_id, int threads) {
    const Volume masked = apply_mask(vol, mask);
    const auto candidates = threshold_candidates(vol, mask);

    std::vector<double> pcac(candidates.size());
    parallel_for(candidates.size(), threads, [&](size_t i) {
        Patch patch = normalize_patch(extract_patch(masked, candidates[i].coord));
        pcac[i] = classifier(patch);
    });

    PcacStats stats;
    stats.evaluated = candidates.size();
    stats.min = std::numeric_limits<double>::infinity();
    stats.max = -std::numeric_limits<double>::infinity();
    double sum = 0;
    std::vector<KeptPixel> kept;
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (!std::isfinite(pcac[i]))
            throw numeric_error("predict_volume: non-finite pCAC");
        sum += pcac[i];
        stats.min = std::min(stats.min, pcac[i]);
        stats.max = std::max(stats.max, pcac[i]);
        if (pcac[i] > 0.5) kept.push_back({candidates[i].coord, candidates[i].hu, pcac[i]});
    }
    if (candidates.empty()) {
        stats.min = 0;
        stats.max = 0;
    }
    stats.mean = candidates.empty() ? 0 : sum / static_cast<double>(candidates.size());
    stats.kept = kept.size();
    return score_kept_pixels(std::move(kept), candidates.size(), stats, vol, volume_id);
}

ScoreReport predict_volume(const Model& model, const Volume& vol, const RoiMask& mask,
                           const std::string& volume_id, int threads) {
    const size_t expected = static_cast<size_t>(model.arch().input_size) * model.arch().input_size;
    if (expected != static_cast<size_t>(kPatchValues))
        throw dim_mismatch_error("predict_volume: model input size does not match 51x51 patches");
    return predict_volume_with(
        [&model](const Patch& patch) {
            thread_local Workspace ws;
            return forward(model, patch.values, ws);
        },
        vol, mask, volume_id, threads);
}

ScoreReport score_reference(const std::vector<Lesion>& annotations, const Volume& vol,
                            const std::string& volume_id) {
    std::vector<CandidatePixel> pixels;
    for (const auto& lesion : annotations) {
        if (lesion.label != LesionLabel::Coronary) continue;
        for (const Coord& v : lesion.voxels) {
            if (!vol.contains(v))
                throw dim_mismatch_error("score_reference: annotation voxel outside volume");
            pixels.push_back({v, vol.at(v), LesionLabel::Coronary});
        }
    }
    ScoreReport report;
    report.volume_id = volume_id;
    report.candidate_count = pixels.size();

    const auto lesions = connected_components_2d(pixels, vol.dims(), vol.spacing());
    double total = 0;
    for (const auto& lesion : lesions) {
        LesionScore ls;
        ls.slice = lesion.voxels.front().z;
        ls.area_mm2 = lesion.total_area_mm2();
        ls.max_hu = lesion.max_hu;
        ls.rho = density_factor(lesion.max_hu);
        ls.contribution = ls.area_mm2 * ls.rho * (vol.spacing().sz / 3.0);
        total += ls.contribution;
        report.lesions.push_back(ls);
    }
    report.agatston = total;
    report.risk = risk_class(total);
    return report;
}

void save_score_report_json(const ScoreReport& report, const std::string& path) {
    nlohmann::json j;
    j["volume_id"] = report.volume_id;
    j["agatston"] = report.agatston;
    j["risk_class"] = std::string(1, to_char(report.risk));
    nlohmann::json lesions = nlohmann::json::array();
    for (const auto& l : report.lesions)
        lesions.push_back({{"slice", l.slice},
                           {"area_mm2", l.area_mm2},
                           {"max_hu", l.max_hu},
                           {"rho", l.rho},
                           {"contribution", l.contribution}});
    j["lesions"] = std::move(lesions);
    j["candidate_count"] = report.candidate_count;
    nlohmann::json kept = nlohmann::json::array();
    for (const auto& k : report.kept_pixels)
        kept.push_back({{"coord", {k.coord.x, k.coord.y, k.coord.z}},
                        {"hu", k.hu},
                        {"pcac", k.pcac}});
    j["kept_pixels"] = std::move(kept);
    j["pcac"] = {{"evaluated", report.pcac.evaluated},
                 {"kept", report.pcac.kept},
                 {"mean", report.pcac.mean},
                 {"min", report.pcac.min},
                 {"max", report.pcac.max}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f << j.dump(2) << '\n';
    if (!f) throw io_error("write failed: " + path);
}

ScoreReport load_score_report_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw bad_header_error(path + ": not a JSON report");
    ScoreReport report;
    report.volume_id = j.value("volume_id", "");
    report.agatston = j.at("agatston").get<double>();
    report.risk = risk_class_from_char(j.at("risk_class").get<std::string>().at(0));
    for (const auto& l : j.value("lesions", nlohmann::json::array()))
        report.lesions.push_back({l.at("slice").get<int>(), l.at("area_mm2").get<double>(),
                                  l.at("max_hu").get<int>(), l.at("rho").get<int>(),
                                  l.at("contribution").get<double>()});
    report.candidate_count = j.value("candidate_count", size_t{0});
    for (const auto& k : j.value("kept_pixels", nlohmann::json::array())) {
        KeptPixel kp;
        kp.coord = {k.at("coord")[0].get<int>(), k.at("coord")[1].get<int>(),
                    k.at("coord")[2].get<int>()};
        kp.hu = static_cast<int16_t>(k.at("hu").get<int>());
        kp.pcac = k.at("pcac").get<double>();
        report.kept_pixels.push_back(kp);
    }
    if (j.contains("pcac")) {
        const auto& p = j["pcac"];
        report.pcac = {p.value("evaluated", size_t{0}), p.value("kept", size_t{0}),
                       p.value("mean", 0.0), p.value("min", 0.0), p.value("max", 0.0)};
    }
    return report;
}

std::string score_report_csv_line(const ScoreReport& report) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%c", report.volume_id.c_str(), report.agatston,
                  to_char(report.risk));
    return buf;
}

}  // namespace cacs
