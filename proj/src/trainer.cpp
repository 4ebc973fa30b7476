#include "cacs/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "cacs/errors.hpp"
#include "cacs/parallel.hpp"

namespace cacs {

namespace {

constexpr uint64_t kStepTagBase = 1;  // derive tag for step t is kStepTagBase + t
constexpr uint64_t kInitTag = 0;

int binary_label(uint8_t label_code) {
    return label_code == static_cast<uint8_t>(LesionLabel::Coronary) ? 1 : 0;
}

std::vector<double> draw_dropout_mask(int n, double rate, Rng& rng) {
    std::vector<double> mask(static_cast<size_t>(n));
    const double keep_scale = 1.0 / (1.0 - rate);
    for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    return mask;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 4 || batch_size % 2 != 0)
        throw std::invalid_argument("TrainConfig: batch_size must be even and >= 4");
    if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
    if (early_stop_patience < 0)
        throw std::invalid_argument("TrainConfig: early_stop_patience must be >= 0");
    if (validation_interval < 1)
        throw std::invalid_argument("TrainConfig: validation_interval must be >= 1");
    if (!(aortic_negative_fraction >= 0.0 && aortic_negative_fraction <= 1.0))
        throw std::invalid_argument("TrainConfig: aortic_negative_fraction must be in [0, 1]");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw std::invalid_argument("TrainConfig: dropout_rate must be in [0, 1)");
    if (threads < 1) throw std::invalid_argument("TrainConfig: threads must be >= 1");
}

TrainConfig train_config_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw bad_header_error("train config: not a JSON object");
    TrainConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "batch_size") cfg.batch_size = value.get<int>();
        else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
        else if (key == "max_epochs") cfg.max_epochs = value.get<int>();
        else if (key == "early_stop_patience") cfg.early_stop_patience = value.get<int>();
        else if (key == "validation_interval") cfg.validation_interval = value.get<int>();
        else if (key == "rng_seed") cfg.rng_seed = value.get<uint64_t>();
        else if (key == "aortic_negative_fraction") cfg.aortic_negative_fraction = value.get<double>();
        else if (key == "dropout_rate") cfg.dropout_rate = value.get<double>();
        else if (key == "threads") cfg.threads = value.get<int>();
        else throw std::invalid_argument("train config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["max_epochs"] = cfg.max_epochs;
    j["early_stop_patience"] = cfg.early_stop_patience;
    j["validation_interval"] = cfg.validation_interval;
    j["rng_seed"] = cfg.rng_seed;
    j["aortic_negative_fraction"] = cfg.aortic_negative_fraction;
    j["dropout_rate"] = cfg.dropout_rate;
    j["threads"] = cfg.threads;
    return j.dump();
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return train_config_from_json(text);
}

void save_train_report_json(const TrainReport& report, const std::string& path) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : report.epochs) {
        nlohmann::json row;
        row["epoch"] = e.epoch;
        if (std::isfinite(e.train_loss)) row["train_loss"] = e.train_loss;
        else row["train_loss"] = nullptr;
        row["val_loss"] = e.val_loss;
        row["val_acc"] = e.val_acc;
        rows.push_back(std::move(row));
    }
    nlohmann::json j;
    j["epochs"] = std::move(rows);
    j["best_epoch"] = report.best_epoch;
    j["best_val_loss"] = report.best_val_loss;
    j["stop_reason"] = report.stop_reason;
    j["total_steps"] = report.total_steps;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f << j.dump(2) << '\n';
    if (!f) throw io_error("write failed: " + path);
}

void save_train_report_csv(const TrainReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f << "epoch,train_loss,val_loss,val_acc\n";
    char buf[128];
    for (const auto& e : report.epochs) {
        if (std::isfinite(e.train_loss))
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                          e.val_loss, e.val_acc);
        else
            std::snprintf(buf, sizeof(buf), "%d,,%.17g,%.17g\n", e.epoch, e.val_loss, e.val_acc);
        f << buf;
    }
    if (!f) throw io_error("write failed: " + path);
}

std::vector<size_t> sample_balanced_batch(const PatchStore& store, const TrainConfig& cfg,
                                          Rng& rng) {
    cfg.validate();
    const int positives = cfg.batch_size / 2;
    const int negatives = cfg.batch_size - positives;
    const int aortic = static_cast<int>(
        std::lround(cfg.aortic_negative_fraction * static_cast<double>(negatives)));
    const int other = negatives - aortic;

    const auto& coronary_idx = store.by_label(LesionLabel::Coronary);
    const auto& aortic_idx = store.by_label(LesionLabel::Aortic);
    const auto& other_idx = store.by_label(LesionLabel::OtherNegative);
    if (positives > 0 && coronary_idx.empty()) throw stratum_empty_error("coronary");
    if (aortic > 0 && aortic_idx.empty()) throw stratum_empty_error("aortic");
    if (other > 0 && other_idx.empty()) throw stratum_empty_error("other-negative");

    std::vector<size_t> batch;
    batch.reserve(cfg.batch_size);
    for (int i = 0; i < positives; ++i) batch.push_back(coronary_idx[rng.index(coronary_idx.size())]);
    for (int i = 0; i < aortic; ++i) batch.push_back(aortic_idx[rng.index(aortic_idx.size())]);
    for (int i = 0; i < other; ++i) batch.push_back(other_idx[rng.index(other_idx.size())]);
    return batch;
}

ValidationResult validate_model(const Model& model, const PatchStore& store, int threads) {
    if (store.size() == 0) throw std::invalid_argument("validate_model: empty store");
    const size_t n = store.size();
    std::vector<double> losses(n);
    std::vector<uint8_t> correct(n);
    parallel_for(n, threads, [&](size_t i) {
        thread_local Workspace ws;
        const auto& rec = store.records()[i];
        std::vector<double> values(rec.values.begin(), rec.values.end());
        const auto probs = forward_probs(model, values, ws);
        const int label = binary_label(rec.label_code);
        losses[i] = -std::log(probs[label]);
        correct[i] = (probs[1] > 0.5 ? 1 : 0) == label ? 1 : 0;
    });
    ValidationResult res;
    double loss = 0;
    size_t hits = 0;
    for (size_t i = 0; i < n; ++i) {
        loss += losses[i];
        hits += correct[i];
    }
    res.loss = loss / static_cast<double>(n);
    res.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    if (!std::isfinite(res.loss)) throw numeric_error("validate_model: non-finite loss");
    return res;
}

TrainSession::TrainSession(const PatchStore& train_store, TrainConfig cfg, const ArchSpec& arch)
    : store_(train_store), cfg_(cfg),
      model_(he_init(arch, Rng(cfg.rng_seed).derive(kInitTag).seed())),
      optimizer_(model_.param_count(), cfg.learning_rate) {
    cfg_.validate();
}

TrainSession::TrainSession(const PatchStore& train_store, TrainConfig cfg, Model model,
                           OptimizerState optimizer, uint64_t step)
    : store_(train_store), cfg_(cfg), model_(std::move(model)), optimizer_(std::move(optimizer)),
      step_(step) {
    cfg_.validate();
    if (optimizer_.accum.size() != model_.param_count())
        throw dim_mismatch_error("TrainSession: optimizer state does not match model");
}

double TrainSession::step() {
    Rng rng = Rng(cfg_.rng_seed).derive(kStepTagBase + step_);
    const auto indices = sample_balanced_batch(store_, cfg_, rng);

    const size_t batch_n = indices.size();
    const size_t in_n = static_cast<size_t>(model_.arch().input_size) * model_.arch().input_size;
    value_buf_.resize(batch_n);
    mask_buf_.resize(batch_n);
    std::vector<BatchSample> samples(batch_n);
    for (size_t i = 0; i < batch_n; ++i) {
        const auto& rec = store_.records()[indices[i]];
        if (rec.values.size() != in_n)
            throw dim_mismatch_error("TrainSession: record size does not match architecture");
        value_buf_[i].assign(rec.values.begin(), rec.values.end());
        mask_buf_[i] = draw_dropout_mask(model_.plan().dense_units, cfg_.dropout_rate, rng);
        samples[i] = {value_buf_[i].data(), binary_label(rec.label_code), mask_buf_[i].data()};
    }

    const double loss = loss_and_backward(model_, samples, grads_, cfg_.threads);
    adagrad_step(model_, grads_, optimizer_);
    ++step_;
    return loss;
}

void checkpoint_save(const std::string& path, const Model& model, const OptimizerState& optimizer,
                     const TrainConfig& cfg, uint64_t step) {
    save_model_file(path, model, &optimizer, cfg.rng_seed, step, train_config_to_json(cfg));
}

TrainCheckpoint checkpoint_load(const std::string& path) {
    ModelFile file = load_model_file(path);
    if (!file.optimizer)
        throw bad_header_error(path + ": checkpoint lacks optimizer state");
    if (file.trainer_json.empty())
        throw bad_header_error(path + ": checkpoint lacks trainer config");
    TrainCheckpoint ck;
    ck.model = std::move(file.model);
    ck.optimizer = std::move(*file.optimizer);
    ck.config = train_config_from_json(file.trainer_json);
    ck.step = file.step;
    return ck;
}

std::pair<Model, TrainReport> train(const PatchStore& train_store, const PatchStore& val_store,
                                    const TrainConfig& cfg, const ArchSpec& arch) {
    cfg.validate();
    if (train_store.size() == 0) throw std::invalid_argument("train: empty training store");
    if (val_store.size() == 0) throw std::invalid_argument("train: empty validation store");

    TrainSession session(train_store, cfg, arch);
    TrainReport report;

    const auto baseline = validate_model(session.model(), val_store, cfg.threads);
    report.epochs.push_back(
        {0, std::numeric_limits<double>::quiet_NaN(), baseline.loss, baseline.accuracy});

    EarlyStopper stopper(cfg.early_stop_patience);
    stopper.observe(baseline.loss);
    std::vector<double> best_params = session.model().params();
    report.best_epoch = 0;
    report.best_val_loss = baseline.loss;
    report.stop_reason = "max_epochs";

    const uint64_t steps_per_epoch =
        (train_store.size() + cfg.batch_size - 1) / static_cast<uint64_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double epoch_loss = 0;
        for (uint64_t s = 0; s < steps_per_epoch; ++s) epoch_loss += session.step();
        epoch_loss /= static_cast<double>(steps_per_epoch);

        if (epoch % cfg.validation_interval != 0 && epoch != cfg.max_epochs) {
            report.epochs.push_back(
                {epoch, epoch_loss, std::numeric_limits<double>::quiet_NaN(),
                 std::numeric_limits<double>::quiet_NaN()});
            continue;
        }

        const auto val = validate_model(session.model(), val_store, cfg.threads);
        report.epochs.push_back({epoch, epoch_loss, val.loss, val.accuracy});
        if (stopper.observe(val.loss)) {
            best_params = session.model().params();
            report.best_epoch = epoch;
            report.best_val_loss = val.loss;
        }
        if (stopper.should_stop()) {
            report.stop_reason = "early_stop";
            break;
        }
    }

    report.total_steps = session.step_count();
    Model best(arch);
    best.params() = std::move(best_params);
    return {std::move(best), std::move(report)};
}

}  // namespace cacs
