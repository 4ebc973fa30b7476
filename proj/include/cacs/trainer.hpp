#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cacs/cnn.hpp"
#include "cacs/patches.hpp"

namespace cacs {

struct TrainConfig {
    int batch_size = 64;
    double learning_rate = 0.001;
    int max_epochs = 1200;
    int early_stop_patience = 20;  // non-improving validations tolerated
    int validation_interval = 1;   // epochs between validations
    uint64_t rng_seed = 0;
    double aortic_negative_fraction = 0.5;  // share of negatives centered on aortic lesions
    double dropout_rate = 0.5;
    int threads = 1;

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::string& path);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;  // NaN for the epoch-0 validation baseline
    double val_loss = 0;
    double val_acc = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;  // entry 0 is the pre-training baseline
    int best_epoch = 0;
    double best_val_loss = 0;
    std::string stop_reason;  // "early_stop" or "max_epochs"
    uint64_t total_steps = 0;
};

void save_train_report_json(const TrainReport& report, const std::string& path);
void save_train_report_csv(const TrainReport& report, const std::string& path);

/// Balanced batch: half coronary positives; of the negative half,
/// round(aortic_negative_fraction * batch_size/2) aortic-centered, the rest
/// other-negative. Sampling is uniform with replacement within each stratum.
/// A stratum that the composition requires but that holds no records raises
/// stratum_empty_error naming it.
std::vector<size_t> sample_balanced_batch(const PatchStore& store, const TrainConfig& cfg,
                                          Rng& rng);

/// Tracks the best validation loss; stopping triggers once the count of
/// consecutive non-improving validations exceeds the patience (patience 0
/// stops at the first non-improvement).
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Returns true when `loss` strictly improves on the best seen.
    bool observe(double loss) {
        if (loss < best_) {
            best_ = loss;
            non_improving_ = 0;
            return true;
        }
        ++non_improving_;
        return false;
    }
    bool should_stop() const { return non_improving_ > patience_; }
    double best() const { return best_; }

private:
    int patience_;
    double best_ = 1e300;
    int non_improving_ = 0;
};

struct ValidationResult {
    double loss = 0;
    double accuracy = 0;  // pixel accuracy at the 0.5 decision threshold
};

ValidationResult validate_model(const Model& model, const PatchStore& store, int threads = 1);

/// Step-level training driver. Every source of randomness at step t is
/// derived from (rng_seed, t) alone, so a session restored from a checkpoint
/// continues bit-identically.
class TrainSession {
public:
    TrainSession(const PatchStore& train_store, TrainConfig cfg,
                 const ArchSpec& arch = ArchSpec::standard());
    TrainSession(const PatchStore& train_store, TrainConfig cfg, Model model,
                 OptimizerState optimizer, uint64_t step);

    /// One balanced-batch gradient step; returns the batch loss.
    double step();

    const Model& model() const { return model_; }
    Model& model() { return model_; }
    const OptimizerState& optimizer() const { return optimizer_; }
    const TrainConfig& config() const { return cfg_; }
    uint64_t step_count() const { return step_; }

private:
    const PatchStore& store_;
    TrainConfig cfg_;
    Model model_;
    OptimizerState optimizer_;
    uint64_t step_ = 0;
    std::vector<double> grads_;
    std::vector<std::vector<double>> value_buf_;
    std::vector<std::vector<double>> mask_buf_;
};

struct TrainCheckpoint {
    Model model;
    OptimizerState optimizer;
    TrainConfig config;
    uint64_t step = 0;
};

void checkpoint_save(const std::string& path, const Model& model, const OptimizerState& optimizer,
                     const TrainConfig& cfg, uint64_t step);
TrainCheckpoint checkpoint_load(const std::string& path);

/// Full training loop: balanced-batch epochs with per-epoch validation,
/// best-model tracking, and patience-based early stopping. The returned
/// model is the best-validation-loss snapshot (the pre-training model counts
/// as the epoch-0 observation).
std::pair<Model, TrainReport> train(const PatchStore& train_store, const PatchStore& val_store,
                                    const TrainConfig& cfg,
                                    const ArchSpec& arch = ArchSpec::standard());

}  // namespace cacs
