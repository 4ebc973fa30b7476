#include "cacs/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cacs/candidates.hpp"
#include "cacs/cnn.hpp"
#include "cacs/errors.hpp"
#include "cacs/evaluate.hpp"
#include "cacs/patches.hpp"
#include "cacs/phantom.hpp"
#include "cacs/scoring.hpp"
#include "cacs/trainer.hpp"
#include "cacs/volume.hpp"

namespace cacs::cli {

namespace {

namespace fs = std::filesystem;

void print_resolved(const std::string& command, const nlohmann::json& config) {
    nlohmann::json line;
    line["command"] = command;
    line["config"] = config;
    std::cout << "resolved-config: " << line.dump() << "\n";
}

void print_error(int code, const std::string& kind, const std::string& message) {
    nlohmann::json j;
    j["error"] = {{"code", code}, {"kind", kind}, {"message", message}};
    std::cerr << j.dump() << "\n";
}

struct GlobalFlags {
    uint64_t seed = 0;
    int threads = 1;
    bool verbose = false;
};

int cmd_phantom_gen(const GlobalFlags& g, size_t n, const std::string& out, uint64_t base_seed,
                    const std::vector<double>& mix) {
    std::array<double, 5> weights{1, 1, 1, 1, 1};
    if (!mix.empty()) {
        if (mix.size() != 5)
            throw std::invalid_argument("--class-mix needs exactly 5 weights (A..E)");
        std::copy(mix.begin(), mix.end(), weights.begin());
    }
    print_resolved("phantom gen", {{"n", n},
                                   {"out", out},
                                   {"base_seed", base_seed},
                                   {"class_mix", weights},
                                   {"threads", g.threads}});
    const CohortManifest manifest = generate_cohort(n, base_seed, weights, out, g.threads);
    for (const auto& v : manifest.volumes)
        std::cout << v.id << "," << v.reference_agatston << "," << to_char(v.risk) << "\n";
    std::cout << "wrote " << manifest.volumes.size() << " volumes to " << out << "\n";
    return kExitOk;
}

int cmd_patches_build(const GlobalFlags& g, const std::string& vol_path,
                      const std::string& mask_path, const std::string& ann_path,
                      const std::string& out_path) {
    print_resolved("patches build", {{"vol", vol_path},
                                     {"mask", mask_path},
                                     {"ann", ann_path},
                                     {"out", out_path},
                                     {"threads", g.threads}});
    const Volume vol = resample_inplane(load_volume(vol_path));
    const RoiMask mask = load_mask(mask_path);
    const auto annotations = load_annotations(ann_path);
    const PatchStore store = build_patch_store(vol, annotations, mask);
    store.save(out_path);
    std::cout << "wrote " << store.size() << " patches ("
              << store.by_label(LesionLabel::Coronary).size() << " coronary, "
              << store.by_label(LesionLabel::Aortic).size() << " aortic, "
              << store.by_label(LesionLabel::OtherNegative).size() << " other)\n";
    return kExitOk;
}

int cmd_train(const GlobalFlags& g, const std::string& train_dir, const std::string& val_dir,
              const std::string& config_path, const std::string& out_model, int batch_size,
              double lr, int max_epochs, int patience) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = load_train_config(config_path);
    if (batch_size > 0) cfg.batch_size = batch_size;
    if (lr > 0) cfg.learning_rate = lr;
    if (max_epochs > 0) cfg.max_epochs = max_epochs;
    if (patience >= 0) cfg.early_stop_patience = patience;
    cfg.rng_seed = g.seed;
    cfg.threads = g.threads;
    cfg.validate();
    print_resolved("train", nlohmann::json::parse(train_config_to_json(cfg)));

    const PatchStore train_store = PatchStore::load_dir(train_dir);
    const PatchStore val_store = PatchStore::load_dir(val_dir);
    std::cout << "train records: " << train_store.size()
              << ", validation records: " << val_store.size() << "\n";

    auto [model, report] = train(train_store, val_store, cfg);
    save_model_file(out_model, model, nullptr, cfg.rng_seed, report.total_steps,
                    train_config_to_json(cfg));
    save_train_report_json(report, out_model + ".report.json");
    save_train_report_csv(report, out_model + ".report.csv");
    std::cout << "best epoch " << report.best_epoch << " (val loss " << report.best_val_loss
              << "), stop reason: " << report.stop_reason << "\n";
    std::cout << "wrote " << out_model << "\n";
    return kExitOk;
}

int cmd_predict(const GlobalFlags& g, const std::string& model_path, const std::string& vol_path,
                const std::string& mask_path, const std::string& out_report, bool oracle_positive,
                bool oracle_negative) {
    print_resolved("predict", {{"model", model_path},
                               {"vol", vol_path},
                               {"mask", mask_path},
                               {"out_report", out_report},
                               {"oracle_positive", oracle_positive},
                               {"oracle_negative", oracle_negative},
                               {"threads", g.threads}});
    if (oracle_positive && oracle_negative)
        throw std::invalid_argument("--oracle-positive and --oracle-negative are exclusive");
    if (model_path.empty() && !oracle_positive && !oracle_negative)
        throw std::invalid_argument("predict needs --model or an oracle stub flag");

    const Volume vol = resample_inplane(load_volume(vol_path));
    const RoiMask mask = load_mask(mask_path);
    const std::string id = fs::path(vol_path).stem().string();

    ScoreReport report;
    if (oracle_positive)
        report = predict_volume_with([](const Patch&) { return 1.0; }, vol, mask, id, g.threads);
    else if (oracle_negative)
        report = predict_volume_with([](const Patch&) { return 0.0; }, vol, mask, id, g.threads);
    else {
        const ModelFile file = load_model_file(model_path);
        report = predict_volume(file.model, vol, mask, id, g.threads);
    }
    if (!out_report.empty()) save_score_report_json(report, out_report);
    std::cout << score_report_csv_line(report) << "\n";
    return kExitOk;
}

int cmd_score(const GlobalFlags&, const std::string& ann_path, const std::string& vol_path,
              const std::string& out_report) {
    print_resolved("score", {{"ann", ann_path}, {"vol", vol_path}, {"out_report", out_report}});
    const Volume vol = resample_inplane(load_volume(vol_path));
    const auto annotations = load_annotations(ann_path);
    const std::string id = fs::path(vol_path).stem().string();
    const ScoreReport report = score_reference(annotations, vol, id);
    if (!out_report.empty()) save_score_report_json(report, out_report);
    std::cout << score_report_csv_line(report) << "\n";
    return kExitOk;
}

int cmd_evaluate(const GlobalFlags&, const std::string& pred_dir, const std::string& ref_dir,
                 const std::string& out_dir) {
    print_resolved("evaluate",
                   {{"pred_dir", pred_dir}, {"ref_dir", ref_dir}, {"out_dir", out_dir}});
    const CohortEvaluation eval = evaluate_cohort(pred_dir, ref_dir);
    write_evaluation(eval, out_dir);
    const auto show = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string("undefined");
    };
    std::cout << "volumes: " << eval.volumes.size() << "\n";
    std::cout << "pixel sensitivity (per-scan mean): " << show(eval.pixel_mean.sensitivity)
              << "\n";
    std::cout << "pixel specificity (per-scan mean): " << show(eval.pixel_mean.specificity)
              << "\n";
    std::cout << "pixel ppv (per-scan mean): " << show(eval.pixel_mean.ppv) << "\n";
    std::cout << "pearson: " << show(eval.pearson_r) << "\n";
    std::cout << "weighted kappa: " << show(eval.kappa) << "\n";
    std::cout << "risk accuracy: " << eval.accuracy << "\n";
    std::cout << "wrote metrics.json, agreement.csv, bland_altman.csv to " << out_dir << "\n";
    return kExitOk;
}

int cmd_gradcheck(const GlobalFlags& g, bool full) {
    print_resolved("gradcheck", {{"full", full}, {"seed", g.seed}});
    const double tolerance = 1e-5;
    double worst = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        Model model = he_init(ArchSpec::shrunken(), g.seed + seed);
        Rng rng(g.seed + 100 + seed);
        std::vector<CheckSample> batch(3);
        const size_t n = static_cast<size_t>(model.arch().input_size) * model.arch().input_size;
        for (size_t s = 0; s < batch.size(); ++s) {
            batch[s].values.resize(n);
            for (auto& v : batch[s].values) v = rng.normal();
            batch[s].label = static_cast<int>(s % 2);
        }
        const double err = gradient_check(model, batch, 1e-5);
        std::printf("seed %llu: max relative error %.3e\n",
                    static_cast<unsigned long long>(seed), err);
        worst = std::max(worst, err);
    }
    if (full) {
        Model model = he_init(ArchSpec::standard(), g.seed + 99);
        Rng rng(g.seed + 7);
        std::vector<CheckSample> batch(1);
        batch[0].values.resize(static_cast<size_t>(kPatchValues));
        for (auto& v : batch[0].values) v = rng.normal();
        batch[0].label = 1;
        const double err = gradient_check(model, batch, 1e-5);
        std::printf("full architecture: max relative error %.3e\n", err);
        worst = std::max(worst, err);
    }
    std::printf("max relative error %.3e (tolerance %.0e)\n", worst, tolerance);
    return worst < tolerance ? kExitOk : kExitCheckFailed;
}

const char* kExitCodeHelp =
    "Exit codes: 0 ok, 1 gradcheck failure, 2 usage/config, 3 I/O, 4 file format, "
    "5 dimension mismatch, 6 non-finite arithmetic, 7 empty sampling stratum, "
    "8 unsatisfiable phantom plan, 10 internal.";

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Coronary artery calcium scoring pipeline"};
    app.footer(kExitCodeHelp);
    app.require_subcommand(1);

    GlobalFlags g;
    app.add_option("--seed", g.seed, "Global RNG seed (all randomness derives from it)");
    app.add_option("--threads", g.threads, "Worker threads for classification and generation")
        ->check(CLI::PositiveNumber);
    app.add_flag("--verbose", g.verbose, "Chatty progress output");

    // phantom gen
    auto* phantom = app.add_subcommand("phantom", "Synthetic data generation");
    phantom->require_subcommand(1);
    auto* gen = phantom->add_subcommand("gen", "Generate a phantom cohort");
    size_t gen_n = 1;
    std::string gen_out;
    uint64_t gen_base_seed = 0;
    bool gen_base_seed_set = false;
    std::vector<double> gen_mix;
    gen->add_option("--n", gen_n, "Number of volumes")->required();
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--base-seed", gen_base_seed, "First volume seed (default: --seed)")
        ->each([&](const std::string&) { gen_base_seed_set = true; });
    gen->add_option("--class-mix", gen_mix,
                    "Five risk-class weights A..E (default equal)")
        ->expected(5);

    // patches build
    auto* patches = app.add_subcommand("patches", "Patch database construction");
    patches->require_subcommand(1);
    auto* build = patches->add_subcommand("build", "Extract labeled patches from one volume");
    std::string pb_vol, pb_mask, pb_ann, pb_out;
    build->add_option("--vol", pb_vol, "CTV volume")->required();
    build->add_option("--mask", pb_mask, "CTMSK cardiac mask")->required();
    build->add_option("--ann", pb_ann, "Annotation JSON")->required();
    build->add_option("--out", pb_out, "Output .pdb patch store")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the CNN on patch stores");
    std::string tr_train_dir, tr_val_dir, tr_config, tr_out_model;
    int tr_batch = 0, tr_epochs = 0, tr_patience = -1;
    double tr_lr = 0;
    train_cmd->add_option("--train-dir", tr_train_dir, "Directory of training .pdb files")
        ->required();
    train_cmd->add_option("--val-dir", tr_val_dir, "Directory of validation .pdb files")
        ->required();
    train_cmd->add_option("--config", tr_config, "Training config JSON");
    train_cmd->add_option("--out-model", tr_out_model, "Output model path")->required();
    train_cmd->add_option("--batch-size", tr_batch, "Override batch size");
    train_cmd->add_option("--lr", tr_lr, "Override learning rate");
    train_cmd->add_option("--max-epochs", tr_epochs, "Override epoch cap");
    train_cmd->add_option("--patience", tr_patience, "Override early-stop patience");

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "Score one volume with a trained model");
    std::string pr_model, pr_vol, pr_mask, pr_out;
    bool pr_oracle_pos = false, pr_oracle_neg = false;
    predict_cmd->add_option("--model", pr_model, "CACNN model file");
    predict_cmd->add_option("--vol", pr_vol, "CTV volume")->required();
    predict_cmd->add_option("--mask", pr_mask, "CTMSK cardiac mask")->required();
    predict_cmd->add_option("--out-report", pr_out, "Report JSON output path");
    predict_cmd->add_flag("--oracle-positive", pr_oracle_pos,
                          "Test hook: classify every candidate as CAC");
    predict_cmd->add_flag("--oracle-negative", pr_oracle_neg,
                          "Test hook: classify every candidate as non-CAC");

    // score
    auto* score_cmd = app.add_subcommand("score", "Reference Agatston from annotations (no CNN)");
    std::string sc_ann, sc_vol, sc_out;
    score_cmd->add_option("--ann", sc_ann, "Annotation JSON")->required();
    score_cmd->add_option("--vol", sc_vol, "CTV volume")->required();
    score_cmd->add_option("--out-report", sc_out, "Report JSON output path");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "Cohort metrics from predictions");
    std::string ev_pred, ev_ref, ev_out;
    eval_cmd->add_option("--pred-dir", ev_pred, "Directory of <id>.report.json files")
        ->required();
    eval_cmd->add_option("--ref-dir", ev_ref, "Cohort directory with manifest.json")->required();
    eval_cmd->add_option("--out-dir", ev_out, "Output directory for metrics files")->required();

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    bool gc_full = false;
    grad_cmd->add_flag("--full", gc_full, "Also check the full 51x51 architecture (slow)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);

        if (gen->parsed()) {
            if (!gen_base_seed_set) gen_base_seed = g.seed;
            return cmd_phantom_gen(g, gen_n, gen_out, gen_base_seed, gen_mix);
        }
        if (build->parsed()) return cmd_patches_build(g, pb_vol, pb_mask, pb_ann, pb_out);
        if (train_cmd->parsed())
            return cmd_train(g, tr_train_dir, tr_val_dir, tr_config, tr_out_model, tr_batch,
                             tr_lr, tr_epochs, tr_patience);
        if (predict_cmd->parsed())
            return cmd_predict(g, pr_model, pr_vol, pr_mask, pr_out, pr_oracle_pos,
                               pr_oracle_neg);
        if (score_cmd->parsed()) return cmd_score(g, sc_ann, sc_vol, sc_out);
        if (eval_cmd->parsed()) return cmd_evaluate(g, ev_pred, ev_ref, ev_out);
        if (grad_cmd->parsed()) return cmd_gradcheck(g, gc_full);
        print_error(kExitUsage, "usage", "no subcommand given");
        return kExitUsage;
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        print_error(kExitUsage, "usage", e.what());
        return kExitUsage;
    } catch (const bad_magic_error& e) {
        print_error(kExitFormat, "format", e.what());
        return kExitFormat;
    } catch (const bad_version_error& e) {
        print_error(kExitFormat, "format-version", e.what());
        return kExitFormat;
    } catch (const format_error& e) {
        print_error(kExitFormat, "format", e.what());
        return kExitFormat;
    } catch (const dim_mismatch_error& e) {
        print_error(kExitDims, "dimension-mismatch", e.what());
        return kExitDims;
    } catch (const stratum_empty_error& e) {
        print_error(kExitStratum, "stratum-empty", e.what());
        return kExitStratum;
    } catch (const numeric_error& e) {
        print_error(kExitNumeric, "numeric", e.what());
        return kExitNumeric;
    } catch (const plan_error& e) {
        print_error(kExitPlan, "plan", e.what());
        return kExitPlan;
    } catch (const io_error& e) {
        print_error(kExitIo, "io", e.what());
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        print_error(kExitUsage, "config", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        print_error(kExitInternal, "internal", e.what());
        return kExitInternal;
    }
}

}  // namespace cacs::cli
