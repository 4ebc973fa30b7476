#include "cacs/evaluate.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "cacs/errors.hpp"

namespace cacs {

namespace {

size_t flat_index(const Coord& c, const Dims& d) {
    return static_cast<size_t>(c.x) +
           static_cast<size_t>(d.nx) * (static_cast<size_t>(c.y) + static_cast<size_t>(d.ny) * c.z);
}

void accumulate(AveragedStats& avg, std::vector<double>& sens, std::vector<double>& spec,
                std::vector<double>& ppv) {
    const auto mean = [](const std::vector<double>& v) -> std::optional<double> {
        if (v.empty()) return std::nullopt;
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    avg.sensitivity = mean(sens);
    avg.specificity = mean(spec);
    avg.ppv = mean(ppv);
    avg.sensitivity_scans = sens.size();
    avg.specificity_scans = spec.size();
    avg.ppv_scans = ppv.size();
}

nlohmann::json opt_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}

nlohmann::json counts_json(const ConfusionCounts& c) {
    return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

nlohmann::json stats_json(const DetectionStats& s) {
    return {{"sensitivity", opt_json(s.sensitivity)},
            {"specificity", opt_json(s.specificity)},
            {"ppv", opt_json(s.ppv)}};
}

}  // namespace

VolumeEvaluation evaluate_volume(const ScoreReport& predicted, const Volume& vol,
                                 const RoiMask& mask, const std::vector<Lesion>& annotations) {
    VolumeEvaluation ev;
    ev.id = predicted.volume_id;
    ev.predicted_agatston = predicted.agatston;
    ev.predicted_class = predicted.risk;

    const ScoreReport reference = score_reference(annotations, vol, predicted.volume_id);
    ev.reference_agatston = reference.agatston;
    ev.reference_class = reference.risk;

    const Dims& d = vol.dims();
    std::unordered_set<size_t> coronary;
    for (const auto& lesion : annotations)
        if (lesion.label == LesionLabel::Coronary)
            for (const Coord& v : lesion.voxels) coronary.insert(flat_index(v, d));

    std::unordered_set<size_t> kept;
    std::vector<Coord> kept_coords;
    for (const auto& k : predicted.kept_pixels) {
        kept.insert(flat_index(k.coord, d));
        kept_coords.push_back(k.coord);
    }

    ev.pixel.granularity = CountGranularity::Pixel;
    for (const auto& cand : threshold_candidates(vol, mask)) {
        const bool positive = coronary.count(flat_index(cand.coord, d)) > 0;
        const bool predicted_positive = kept.count(flat_index(cand.coord, d)) > 0;
        if (positive && predicted_positive) ++ev.pixel.tp;
        else if (positive) ++ev.pixel.fn;
        else if (predicted_positive) ++ev.pixel.fp;
        else ++ev.pixel.tn;
    }

    ev.lesion = match_lesions(kept_coords, annotations, d);
    return ev;
}

CohortEvaluation evaluate_cohort(const std::string& pred_dir, const std::string& ref_dir) {
    namespace fs = std::filesystem;
    const CohortManifest manifest = load_manifest((fs::path(ref_dir) / "manifest.json").string());

    CohortEvaluation eval;
    eval.pixel_pooled.granularity = CountGranularity::Pixel;
    eval.lesion_pooled.granularity = CountGranularity::Lesion;

    std::vector<double> ref_scores, pred_scores;
    std::vector<double> px_sens, px_spec, px_ppv, ls_sens, ls_spec, ls_ppv;

    for (const auto& entry : manifest.volumes) {
        const Volume vol =
            resample_inplane(load_volume((fs::path(ref_dir) / entry.volume_path).string()));
        const RoiMask mask = load_mask((fs::path(ref_dir) / entry.mask_path).string());
        const auto annotations =
            load_annotations((fs::path(ref_dir) / entry.annotation_path).string());
        const ScoreReport predicted = load_score_report_json(
            (fs::path(pred_dir) / (entry.id + ".report.json")).string());

        VolumeEvaluation ev = evaluate_volume(predicted, vol, mask, annotations);
        eval.pixel_pooled += ev.pixel;
        eval.lesion_pooled += ev.lesion;
        eval.agreement.add(ev.reference_class, ev.predicted_class);
        ref_scores.push_back(ev.reference_agatston);
        pred_scores.push_back(ev.predicted_agatston);

        const DetectionStats px = detection_stats(ev.pixel);
        if (px.sensitivity) px_sens.push_back(*px.sensitivity);
        if (px.specificity) px_spec.push_back(*px.specificity);
        if (px.ppv) px_ppv.push_back(*px.ppv);
        const DetectionStats ls = detection_stats(ev.lesion);
        if (ls.sensitivity) ls_sens.push_back(*ls.sensitivity);
        if (ls.specificity) ls_spec.push_back(*ls.specificity);
        if (ls.ppv) ls_ppv.push_back(*ls.ppv);

        eval.volumes.push_back(std::move(ev));
    }

    accumulate(eval.pixel_mean, px_sens, px_spec, px_ppv);
    accumulate(eval.lesion_mean, ls_sens, ls_spec, ls_ppv);
    eval.pixel_pooled_stats = detection_stats(eval.pixel_pooled);
    eval.lesion_pooled_stats = detection_stats(eval.lesion_pooled);
    if (ref_scores.size() >= 2) {
        eval.pearson_r = pearson(pred_scores, ref_scores);
        eval.agatston_agreement = bland_altman(pred_scores, ref_scores);
    }
    eval.kappa = weighted_kappa(eval.agreement);
    eval.accuracy = risk_accuracy(eval.agreement);
    return eval;
}

void write_evaluation(const CohortEvaluation& eval, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    nlohmann::json volumes = nlohmann::json::array();
    for (const auto& v : eval.volumes)
        volumes.push_back({{"id", v.id},
                           {"reference_agatston", v.reference_agatston},
                           {"predicted_agatston", v.predicted_agatston},
                           {"reference_class", std::string(1, to_char(v.reference_class))},
                           {"predicted_class", std::string(1, to_char(v.predicted_class))},
                           {"pixel", counts_json(v.pixel)},
                           {"lesion", counts_json(v.lesion)}});

    const auto mean_json = [](const AveragedStats& a) {
        return nlohmann::json{{"sensitivity", opt_json(a.sensitivity)},
                              {"specificity", opt_json(a.specificity)},
                              {"ppv", opt_json(a.ppv)},
                              {"scans", {{"sensitivity", a.sensitivity_scans},
                                         {"specificity", a.specificity_scans},
                                         {"ppv", a.ppv_scans}}}};
    };

    nlohmann::json j;
    j["volumes"] = std::move(volumes);
    j["pixel"] = {{"per_scan_mean", mean_json(eval.pixel_mean)},
                  {"pooled_counts", counts_json(eval.pixel_pooled)},
                  {"pooled", stats_json(eval.pixel_pooled_stats)}};
    j["lesion"] = {{"per_scan_mean", mean_json(eval.lesion_mean)},
                   {"pooled_counts", counts_json(eval.lesion_pooled)},
                   {"pooled", stats_json(eval.lesion_pooled_stats)}};
    j["agatston"] = {{"pearson", opt_json(eval.pearson_r)},
                     {"weighted_kappa", opt_json(eval.kappa)},
                     {"risk_accuracy", eval.accuracy},
                     {"bland_altman",
                      {{"mean_diff", eval.agatston_agreement.mean_diff},
                       {"sd_diff", eval.agatston_agreement.sd_diff},
                       {"loa_low", eval.agatston_agreement.loa_low},
                       {"loa_high", eval.agatston_agreement.loa_high}}},
                     {"volumes", eval.volumes.size()}};

    std::ofstream mf((fs::path(out_dir) / "metrics.json").string(), std::ios::trunc);
    if (!mf) throw io_error("cannot write metrics.json");
    mf << j.dump(2) << '\n';

    // agreement.csv: reference rows, predicted columns
    std::ofstream af((fs::path(out_dir) / "agreement.csv").string(), std::ios::trunc);
    if (!af) throw io_error("cannot write agreement.csv");
    af << "ref\\pred,A,B,C,D,E\n";
    for (size_t i = 0; i < 5; ++i) {
        af << static_cast<char>('A' + i);
        for (size_t k = 0; k < 5; ++k) af << ',' << eval.agreement.counts[i][k];
        af << '\n';
    }

    // bland_altman.csv: one row per volume pair plus the limit lines
    std::ofstream bf((fs::path(out_dir) / "bland_altman.csv").string(), std::ios::trunc);
    if (!bf) throw io_error("cannot write bland_altman.csv");
    bf << "kind,x,y\n";
    char buf[128];
    for (const auto& [m, d] : eval.agatston_agreement.points) {
        std::snprintf(buf, sizeof(buf), "point,%.17g,%.17g\n", m, d);
        bf << buf;
    }
    std::snprintf(buf, sizeof(buf), "mean_diff,,%.17g\n", eval.agatston_agreement.mean_diff);
    bf << buf;
    std::snprintf(buf, sizeof(buf), "loa_low,,%.17g\n", eval.agatston_agreement.loa_low);
    bf << buf;
    std::snprintf(buf, sizeof(buf), "loa_high,,%.17g\n", eval.agatston_agreement.loa_high);
    bf << buf;
}

}  // namespace cacs
