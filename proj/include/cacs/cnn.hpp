#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cacs/rng.hpp"

namespace cacs {

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

struct ConvSpec {
    int kernels = 16;
    bool pool_after = false;  // 2x2 max-pool follows this conv
    bool operator==(const ConvSpec&) const = default;
};

/// Network shape: a stack of valid-mode 3x3 convolutions (ReLU after each,
/// optional 2x2 max-pool), one fully connected ReLU layer, and a two-way
/// softmax head.
struct ArchSpec {
    int input_size = 51;  // square single-channel input
    std::vector<ConvSpec> convs;
    int dense_units = 64;

    bool operator==(const ArchSpec&) const = default;

    /// Seven conv layers, 16 kernels each except 32 in the last, pooling
    /// after the first two. Maps 51x51 down to a 32x1x1 feature map.
    static ArchSpec standard();

    /// Small conv-pool-conv-dense-softmax net on 11x11 inputs, used by the
    /// finite-difference gradient harness.
    static ArchSpec shrunken();
};

/// Spatial side lengths through the conv stack, starting at the input:
/// one entry after every conv and every pool.
std::vector<int> spatial_trace(const ArchSpec& arch);

size_t param_count(const ArchSpec& arch);

/// Precomputed layout: per-layer shapes and offsets into the flat parameter
/// vector. Parameter order: per conv layer weights [K][C][3][3] then biases
/// [K]; dense weights [units][flatten] then biases; head weights [2][units]
/// then biases.
struct ConvPlan {
    int in_c = 0, out_c = 0;
    int in_hw = 0;       // spatial side entering the conv
    int out_hw = 0;      // after the conv (in_hw - 2)
    bool pool_after = false;
    int pooled_hw = 0;   // after the optional pool (out_hw / 2)
    size_t w_off = 0, b_off = 0;
};

struct NetPlan {
    std::vector<ConvPlan> convs;
    int flatten = 0;       // channels * hw^2 entering the dense layer
    int final_channels = 0;
    int final_hw = 0;
    int dense_units = 0;
    size_t dense_w_off = 0, dense_b_off = 0;
    size_t head_w_off = 0, head_b_off = 0;
    size_t total_params = 0;
};

NetPlan make_plan(const ArchSpec& arch);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class Model {
public:
    Model() = default;
    explicit Model(ArchSpec arch);  // all parameters zero

    const ArchSpec& arch() const { return arch_; }
    const NetPlan& plan() const { return plan_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    size_t param_count() const { return params_.size(); }

private:
    ArchSpec arch_;
    NetPlan plan_;
    std::vector<double> params_;
};

/// Uniform He initialization: weights drawn from +-sqrt(6/fan_in) where
/// fan_in is C*3*3 for convs and the input width for dense/head; biases
/// zero. Deterministic given the seed.
Model he_init(const ArchSpec& arch, uint64_t seed);

// ---------------------------------------------------------------------------
// Tensor ops (the CNN building blocks, exposed for direct testing)
// ---------------------------------------------------------------------------

struct Tensor {
    int channels = 1, height = 1, width = 1;
    std::vector<double> values;  // [c][h][w] row-major

    static Tensor zeros(int c, int h, int w) {
        Tensor t;
        t.channels = c;
        t.height = h;
        t.width = w;
        t.values.assign(static_cast<size_t>(c) * h * w, 0.0);
        return t;
    }
    double& at(int c, int i, int j) {
        return values[(static_cast<size_t>(c) * height + i) * width + j];
    }
    double at(int c, int i, int j) const {
        return values[(static_cast<size_t>(c) * height + i) * width + j];
    }
    size_t count() const { return values.size(); }
};

struct ConvKernels {
    int out_c = 0, in_c = 0;
    std::vector<double> weights;  // [K][C][3][3]
    std::vector<double> biases;   // [K]
};

/// Valid-mode 3x3 cross-correlation:
/// out[k,i,j] = bias[k] + sum_{c,u,v} in[c,i+u,j+v] * w[k,c,u,v].
Tensor conv2d_valid(const Tensor& input, const ConvKernels& kernels);

/// Non-overlapping 2x2 max pooling, stride 2, trailing odd row/column
/// dropped. Argmax indices (into the input tensor) are recorded for the
/// backward pass; within-window ties go to the first element in row-major
/// window order.
struct PoolResult {
    Tensor output;
    std::vector<int32_t> argmax;  // one input index per output element
};
PoolResult maxpool2x2(const Tensor& input);

Tensor relu(const Tensor& input);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Per-call scratch for one forward/backward pass; reusable across calls,
/// one instance per thread.
struct Workspace {
    std::vector<double> input;
    std::vector<std::vector<double>> conv_act;  // post-ReLU, pre-pool per conv layer
    std::vector<std::vector<double>> pooled;    // post-pool (empty when no pool)
    std::vector<std::vector<int32_t>> argmax;
    std::vector<double> dense_pre;   // pre-ReLU dense outputs
    std::vector<double> dense_act;   // post-ReLU
    std::vector<double> dense_dropped;
    std::array<double, 2> logits{};
    std::array<double, 2> probs{};
    // backward scratch
    std::vector<std::vector<double>> d_act;  // gradient wrt pre-pool conv output
    std::vector<std::vector<double>> d_out;  // gradient wrt stage output (post-pool)
    std::vector<double> d_flat;
    std::vector<double> d_dense;

    void prepare(const NetPlan& plan);
};

/// Inference probability that the patch is a coronary calcification.
/// Dropout is never applied here. Throws numeric_error on non-finite
/// activations.
double forward(const Model& model, std::span<const double> patch);
double forward(const Model& model, std::span<const double> patch, Workspace& ws);

/// Both softmax outputs {p(non-CAC), p(CAC)}.
std::array<double, 2> forward_probs(const Model& model, std::span<const double> patch,
                                    Workspace& ws);

struct BatchSample {
    const double* values = nullptr;        // input_size^2 entries
    int label = 0;                         // 1 = CAC, 0 = non-CAC
    const double* dropout_mask = nullptr;  // dense_units entries, or null
};

/// Mean cross-entropy over the batch plus parameter gradients via
/// backpropagation. Per-sample gradients are computed independently (fanned
/// out over `threads`) and reduced in sample order, so the result does not
/// depend on the thread count.
double loss_and_backward(const Model& model, std::span<const BatchSample> batch,
                         std::vector<double>& grads, int threads = 1);

/// Mean cross-entropy without gradients (dropout masks still honored when
/// present on the samples).
double loss_only(const Model& model, std::span<const BatchSample> batch, int threads = 1);

/// Inverted dropout on a dense activation vector: units are zeroed with
/// probability `rate`, survivors scaled by 1/(1-rate). Inference applies
/// neither. Returns (masked activations, mask).
std::pair<std::vector<double>, std::vector<double>> dropout_apply(std::span<const double> acts,
                                                                  double rate, Rng& rng);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adagrad: per-parameter accumulated squared gradients.
struct OptimizerState {
    double learning_rate = 0.001;
    double epsilon = 1e-8;
    std::vector<double> accum;

    OptimizerState() = default;
    explicit OptimizerState(size_t n, double lr = 0.001)
        : learning_rate(lr), accum(n, 0.0) {}
};

/// acc += g^2; theta -= lr * g / (sqrt(acc) + eps), elementwise.
void adagrad_step(Model& model, std::span<const double> grads, OptimizerState& state);

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct CheckSample {
    std::vector<double> values;
    int label = 0;
};

/// Central finite differences against a supplied gradient vector; returns
/// max over parameters of |a - n| / max(|a|, |n|, 1e-8).
double max_rel_error_vs_fd(Model& model, std::span<const CheckSample> batch,
                           std::span<const double> analytic, double h);

/// Runs the analytic backward pass and compares it against central finite
/// differences. Dropout disabled, 64-bit throughout.
double gradient_check(Model& model, std::span<const CheckSample> batch, double h = 1e-5);

// ---------------------------------------------------------------------------
// Model file (magic "CACNN\x01", JSON descriptor line, float64 LE parameters
// in documented layer order, optionally followed by Adagrad accumulators)
// ---------------------------------------------------------------------------

struct ModelFile {
    Model model;
    std::optional<OptimizerState> optimizer;
    uint64_t seed = 0;
    uint64_t step = 0;
    std::string trainer_json;  // opaque trainer section ("" if absent)
};

void save_model_file(const std::string& path, const Model& model, const OptimizerState* optimizer,
                     uint64_t seed, uint64_t step, const std::string& trainer_json = "");
ModelFile load_model_file(const std::string& path);

}  // namespace cacs
