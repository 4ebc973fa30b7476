#include "cacs/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cacs/errors.hpp"
#include "cacs/parallel.hpp"

namespace cacs {

namespace {

constexpr char kModelMagic[6] = {'C', 'A', 'C', 'N', 'N', '\x01'};

// --- raw kernels -----------------------------------------------------------

/// out[k,i,j] = b[k] + sum_{c,u,v} in[c,i+u,j+v] * w[k,c,u,v]; kernel taps
/// unrolled, contiguous inner loop over j.
void conv3x3_forward(const double* in, int in_c, int in_hw, const double* w, const double* b,
                     double* out, int out_c) {
    const int out_hw = in_hw - 2;
    const size_t out_plane = static_cast<size_t>(out_hw) * out_hw;
    const size_t in_plane = static_cast<size_t>(in_hw) * in_hw;
    for (int k = 0; k < out_c; ++k) {
        double* ok = out + k * out_plane;
        std::fill(ok, ok + out_plane, b[k]);
        for (int c = 0; c < in_c; ++c) {
            const double* ic = in + c * in_plane;
            const double* wk = w + (static_cast<size_t>(k) * in_c + c) * 9;
            const double w00 = wk[0], w01 = wk[1], w02 = wk[2];
            const double w10 = wk[3], w11 = wk[4], w12 = wk[5];
            const double w20 = wk[6], w21 = wk[7], w22 = wk[8];
            for (int i = 0; i < out_hw; ++i) {
                const double* r0 = ic + static_cast<size_t>(i) * in_hw;
                const double* r1 = r0 + in_hw;
                const double* r2 = r1 + in_hw;
                double* orow = ok + static_cast<size_t>(i) * out_hw;
                for (int j = 0; j < out_hw; ++j) {
                    orow[j] += w00 * r0[j] + w01 * r0[j + 1] + w02 * r0[j + 2] +
                               w10 * r1[j] + w11 * r1[j + 1] + w12 * r1[j + 2] +
                               w20 * r2[j] + w21 * r2[j + 1] + w22 * r2[j + 2];
                }
            }
        }
    }
}

/// d_in[c,i+u,j+v] += d_out[k,i,j] * w[k,c,u,v]
void conv3x3_backward_input(const double* d_out, int out_c, int out_hw, const double* w,
                            double* d_in, int in_c) {
    const int in_hw = out_hw + 2;
    const size_t out_plane = static_cast<size_t>(out_hw) * out_hw;
    const size_t in_plane = static_cast<size_t>(in_hw) * in_hw;
    std::fill(d_in, d_in + static_cast<size_t>(in_c) * in_plane, 0.0);
    for (int k = 0; k < out_c; ++k) {
        const double* dk = d_out + k * out_plane;
        for (int c = 0; c < in_c; ++c) {
            double* dc = d_in + c * in_plane;
            const double* wk = w + (static_cast<size_t>(k) * in_c + c) * 9;
            const double w00 = wk[0], w01 = wk[1], w02 = wk[2];
            const double w10 = wk[3], w11 = wk[4], w12 = wk[5];
            const double w20 = wk[6], w21 = wk[7], w22 = wk[8];
            for (int i = 0; i < out_hw; ++i) {
                const double* drow = dk + static_cast<size_t>(i) * out_hw;
                double* g0 = dc + static_cast<size_t>(i) * in_hw;
                double* g1 = g0 + in_hw;
                double* g2 = g1 + in_hw;
                for (int j = 0; j < out_hw; ++j) {
                    const double d = drow[j];
                    g0[j] += w00 * d;
                    g0[j + 1] += w01 * d;
                    g0[j + 2] += w02 * d;
                    g1[j] += w10 * d;
                    g1[j + 1] += w11 * d;
                    g1[j + 2] += w12 * d;
                    g2[j] += w20 * d;
                    g2[j + 1] += w21 * d;
                    g2[j + 2] += w22 * d;
                }
            }
        }
    }
}

/// dW[k,c,u,v] += sum_{i,j} d_out[k,i,j] * in[c,i+u,j+v];
/// db[k] += sum_{i,j} d_out[k,i,j]
void conv3x3_backward_params(const double* d_out, int out_c, int out_hw, const double* in,
                             int in_c, double* d_w, double* d_b) {
    const int in_hw = out_hw + 2;
    const size_t out_plane = static_cast<size_t>(out_hw) * out_hw;
    const size_t in_plane = static_cast<size_t>(in_hw) * in_hw;
    for (int k = 0; k < out_c; ++k) {
        const double* dk = d_out + k * out_plane;
        double bsum = 0;
        for (size_t t = 0; t < out_plane; ++t) bsum += dk[t];
        d_b[k] += bsum;
        for (int c = 0; c < in_c; ++c) {
            const double* ic = in + c * in_plane;
            double s00 = 0, s01 = 0, s02 = 0, s10 = 0, s11 = 0, s12 = 0, s20 = 0, s21 = 0,
                   s22 = 0;
            for (int i = 0; i < out_hw; ++i) {
                const double* drow = dk + static_cast<size_t>(i) * out_hw;
                const double* r0 = ic + static_cast<size_t>(i) * in_hw;
                const double* r1 = r0 + in_hw;
                const double* r2 = r1 + in_hw;
                for (int j = 0; j < out_hw; ++j) {
                    const double d = drow[j];
                    s00 += d * r0[j];
                    s01 += d * r0[j + 1];
                    s02 += d * r0[j + 2];
                    s10 += d * r1[j];
                    s11 += d * r1[j + 1];
                    s12 += d * r1[j + 2];
                    s20 += d * r2[j];
                    s21 += d * r2[j + 1];
                    s22 += d * r2[j + 2];
                }
            }
            double* wk = d_w + (static_cast<size_t>(k) * in_c + c) * 9;
            wk[0] += s00;
            wk[1] += s01;
            wk[2] += s02;
            wk[3] += s10;
            wk[4] += s11;
            wk[5] += s12;
            wk[6] += s20;
            wk[7] += s21;
            wk[8] += s22;
        }
    }
}

/// Stride-2 2x2 max with argmax capture; window scanned in row-major order,
/// strictly-greater comparison keeps ties on the first element.
void maxpool2x2_raw(const double* in, int channels, int in_hw, double* out, int32_t* argmax) {
    const int out_hw = in_hw / 2;
    const size_t in_plane = static_cast<size_t>(in_hw) * in_hw;
    const size_t out_plane = static_cast<size_t>(out_hw) * out_hw;
    for (int c = 0; c < channels; ++c) {
        double* oc = out + c * out_plane;
        int32_t* ac = argmax + c * out_plane;
        for (int i = 0; i < out_hw; ++i) {
            for (int j = 0; j < out_hw; ++j) {
                const size_t base = c * in_plane + static_cast<size_t>(2 * i) * in_hw + 2 * j;
                const size_t idx[4] = {base, base + 1, base + in_hw, base + in_hw + 1};
                size_t best = idx[0];
                double best_v = in[best];
                for (int t = 1; t < 4; ++t) {
                    if (in[idx[t]] > best_v) {
                        best = idx[t];
                        best_v = in[idx[t]];
                    }
                }
                oc[static_cast<size_t>(i) * out_hw + j] = best_v;
                ac[static_cast<size_t>(i) * out_hw + j] = static_cast<int32_t>(best);
            }
        }
    }
}

void relu_inplace(double* v, size_t n) {
    for (size_t i = 0; i < n; ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
}

void dense_forward(const double* w, const double* b, const double* in, int in_n, double* out,
                   int out_n) {
    for (int o = 0; o < out_n; ++o) {
        const double* row = w + static_cast<size_t>(o) * in_n;
        double acc = b[o];
        for (int i = 0; i < in_n; ++i) acc += row[i] * in[i];
        out[o] = acc;
    }
}

std::array<double, 2> softmax2(const std::array<double, 2>& logits) {
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    const double s = e0 + e1;
    return {e0 / s, e1 / s};
}

}  // namespace

// --- architecture ----------------------------------------------------------

ArchSpec ArchSpec::standard() {
    ArchSpec a;
    a.input_size = 51;
    a.convs = {{16, true}, {16, true}, {16, false}, {16, false},
               {16, false}, {16, false}, {32, false}};
    a.dense_units = 64;
    return a;
}

ArchSpec ArchSpec::shrunken() {
    ArchSpec a;
    a.input_size = 11;
    a.convs = {{4, true}, {4, false}};
    a.dense_units = 8;
    return a;
}

std::vector<int> spatial_trace(const ArchSpec& arch) {
    std::vector<int> trace{arch.input_size};
    int hw = arch.input_size;
    for (const auto& c : arch.convs) {
        hw -= 2;
        trace.push_back(hw);
        if (c.pool_after) {
            hw /= 2;
            trace.push_back(hw);
        }
    }
    return trace;
}

NetPlan make_plan(const ArchSpec& arch) {
    if (arch.input_size < 1) throw std::invalid_argument("ArchSpec: input_size must be >= 1");
    if (arch.dense_units < 1) throw std::invalid_argument("ArchSpec: dense_units must be >= 1");
    NetPlan plan;
    int hw = arch.input_size;
    int channels = 1;
    size_t off = 0;
    for (const auto& spec : arch.convs) {
        if (hw < 3)
            throw std::invalid_argument("ArchSpec: conv input smaller than 3x3 kernel");
        if (spec.kernels < 1) throw std::invalid_argument("ArchSpec: kernels must be >= 1");
        ConvPlan cp;
        cp.in_c = channels;
        cp.out_c = spec.kernels;
        cp.in_hw = hw;
        cp.out_hw = hw - 2;
        cp.pool_after = spec.pool_after;
        cp.w_off = off;
        off += static_cast<size_t>(cp.out_c) * cp.in_c * 9;
        cp.b_off = off;
        off += static_cast<size_t>(cp.out_c);
        hw = cp.out_hw;
        if (spec.pool_after) {
            if (hw < 2) throw std::invalid_argument("ArchSpec: pool input smaller than 2x2");
            hw /= 2;
        }
        cp.pooled_hw = hw;
        channels = cp.out_c;
        plan.convs.push_back(cp);
    }
    plan.final_channels = channels;
    plan.final_hw = hw;
    plan.flatten = channels * hw * hw;
    plan.dense_units = arch.dense_units;
    plan.dense_w_off = off;
    off += static_cast<size_t>(arch.dense_units) * plan.flatten;
    plan.dense_b_off = off;
    off += static_cast<size_t>(arch.dense_units);
    plan.head_w_off = off;
    off += 2 * static_cast<size_t>(arch.dense_units);
    plan.head_b_off = off;
    off += 2;
    plan.total_params = off;
    return plan;
}

size_t param_count(const ArchSpec& arch) { return make_plan(arch).total_params; }

Model::Model(ArchSpec arch)
    : arch_(std::move(arch)), plan_(make_plan(arch_)), params_(plan_.total_params, 0.0) {}

Model he_init(const ArchSpec& arch, uint64_t seed) {
    Model model(arch);
    Rng rng(seed);
    auto& p = model.params();
    const NetPlan& plan = model.plan();
    for (const auto& conv : plan.convs) {
        const double bound = std::sqrt(6.0 / (static_cast<double>(conv.in_c) * 9.0));
        const size_t n = static_cast<size_t>(conv.out_c) * conv.in_c * 9;
        for (size_t i = 0; i < n; ++i) p[conv.w_off + i] = bound * (2.0 * rng.uniform() - 1.0);
    }
    {
        const double bound = std::sqrt(6.0 / static_cast<double>(plan.flatten));
        const size_t n = static_cast<size_t>(plan.dense_units) * plan.flatten;
        for (size_t i = 0; i < n; ++i) p[plan.dense_w_off + i] = bound * (2.0 * rng.uniform() - 1.0);
    }
    {
        const double bound = std::sqrt(6.0 / static_cast<double>(plan.dense_units));
        const size_t n = 2 * static_cast<size_t>(plan.dense_units);
        for (size_t i = 0; i < n; ++i) p[plan.head_w_off + i] = bound * (2.0 * rng.uniform() - 1.0);
    }
    return model;
}

// --- tensor wrappers --------------------------------------------------------

Tensor conv2d_valid(const Tensor& input, const ConvKernels& kernels) {
    if (input.height < 3 || input.width < 3)
        throw dim_mismatch_error("conv2d_valid: input smaller than kernel");
    if (input.height != input.width)
        throw dim_mismatch_error("conv2d_valid: input must be square");
    if (kernels.in_c != input.channels)
        throw dim_mismatch_error("conv2d_valid: channel mismatch");
    if (kernels.weights.size() != static_cast<size_t>(kernels.out_c) * kernels.in_c * 9 ||
        kernels.biases.size() != static_cast<size_t>(kernels.out_c))
        throw dim_mismatch_error("conv2d_valid: kernel buffer sizes are wrong");
    Tensor out = Tensor::zeros(kernels.out_c, input.height - 2, input.width - 2);
    conv3x3_forward(input.values.data(), input.channels, input.height, kernels.weights.data(),
                    kernels.biases.data(), out.values.data(), kernels.out_c);
    return out;
}

PoolResult maxpool2x2(const Tensor& input) {
    if (input.height < 2 || input.width < 2)
        throw dim_mismatch_error("maxpool2x2: input smaller than window");
    if (input.height != input.width)
        throw dim_mismatch_error("maxpool2x2: input must be square");
    PoolResult res;
    res.output = Tensor::zeros(input.channels, input.height / 2, input.width / 2);
    res.argmax.resize(res.output.count());
    maxpool2x2_raw(input.values.data(), input.channels, input.height, res.output.values.data(),
                   res.argmax.data());
    return res;
}

Tensor relu(const Tensor& input) {
    Tensor out = input;
    relu_inplace(out.values.data(), out.values.size());
    return out;
}

// --- forward / backward -----------------------------------------------------

void Workspace::prepare(const NetPlan& plan) {
    const size_t stages = plan.convs.size();
    conv_act.resize(stages);
    pooled.resize(stages);
    argmax.resize(stages);
    d_act.resize(stages);
    d_out.resize(stages);
    for (size_t s = 0; s < stages; ++s) {
        const ConvPlan& cp = plan.convs[s];
        conv_act[s].resize(static_cast<size_t>(cp.out_c) * cp.out_hw * cp.out_hw);
        d_act[s].resize(conv_act[s].size());
        d_out[s].resize(static_cast<size_t>(cp.out_c) * cp.pooled_hw * cp.pooled_hw);
        if (cp.pool_after) {
            pooled[s].resize(static_cast<size_t>(cp.out_c) * cp.pooled_hw * cp.pooled_hw);
            argmax[s].resize(pooled[s].size());
        } else {
            pooled[s].clear();
            argmax[s].clear();
        }
    }
    input.resize(static_cast<size_t>(plan.convs.empty()
                                         ? plan.flatten
                                         : plan.convs[0].in_hw * plan.convs[0].in_hw));
    dense_pre.resize(plan.dense_units);
    dense_act.resize(plan.dense_units);
    dense_dropped.resize(plan.dense_units);
    d_flat.resize(plan.flatten);
    d_dense.resize(plan.dense_units);
}

namespace {

/// Forward pass caching every intermediate needed by backward. dropout_mask
/// may be null (inference).
void forward_cached(const Model& model, std::span<const double> patch, Workspace& ws,
                    const double* dropout_mask) {
    const NetPlan& plan = model.plan();
    const auto& p = model.params();
    const size_t expected = plan.convs.empty()
                                ? static_cast<size_t>(plan.flatten)
                                : static_cast<size_t>(plan.convs[0].in_hw) * plan.convs[0].in_hw;
    if (patch.size() != expected)
        throw dim_mismatch_error("forward: input size does not match architecture");

    std::copy(patch.begin(), patch.end(), ws.input.begin());
    const double* cur = ws.input.data();
    for (size_t s = 0; s < plan.convs.size(); ++s) {
        const ConvPlan& cp = plan.convs[s];
        conv3x3_forward(cur, cp.in_c, cp.in_hw, p.data() + cp.w_off, p.data() + cp.b_off,
                        ws.conv_act[s].data(), cp.out_c);
        relu_inplace(ws.conv_act[s].data(), ws.conv_act[s].size());
        if (cp.pool_after) {
            maxpool2x2_raw(ws.conv_act[s].data(), cp.out_c, cp.out_hw, ws.pooled[s].data(),
                           ws.argmax[s].data());
            cur = ws.pooled[s].data();
        } else {
            cur = ws.conv_act[s].data();
        }
    }
    // `cur` is now the flattened feature map of plan.flatten entries; for the
    // standard architecture this is the 32x1x1 pre-dense feature map.
    dense_forward(p.data() + plan.dense_w_off, p.data() + plan.dense_b_off, cur, plan.flatten,
                  ws.dense_pre.data(), plan.dense_units);
    for (int u = 0; u < plan.dense_units; ++u)
        ws.dense_act[u] = ws.dense_pre[u] > 0.0 ? ws.dense_pre[u] : 0.0;
    if (dropout_mask) {
        for (int u = 0; u < plan.dense_units; ++u)
            ws.dense_dropped[u] = ws.dense_act[u] * dropout_mask[u];
    } else {
        ws.dense_dropped = ws.dense_act;
    }
    dense_forward(p.data() + plan.head_w_off, p.data() + plan.head_b_off,
                  ws.dense_dropped.data(), plan.dense_units, ws.logits.data(), 2);
    if (!std::isfinite(ws.logits[0]) || !std::isfinite(ws.logits[1]))
        throw numeric_error("forward: non-finite activation");
    ws.probs = softmax2(ws.logits);
}

const double* stage_input(const Model& model, const Workspace& ws, size_t stage) {
    if (stage == 0) return ws.input.data();
    const ConvPlan& prev = model.plan().convs[stage - 1];
    return prev.pool_after ? ws.pooled[stage - 1].data() : ws.conv_act[stage - 1].data();
}

/// Backpropagation for one sample; adds this sample's gradient into `grads`
/// (scaled by `scale`).
void backward_sample(const Model& model, Workspace& ws, int label, const double* dropout_mask,
                     double scale, double* grads) {
    const NetPlan& plan = model.plan();
    const auto& p = model.params();

    std::array<double, 2> d_logits = ws.probs;
    d_logits[label == 1 ? 1 : 0] -= 1.0;
    d_logits[0] *= scale;
    d_logits[1] *= scale;

    // head
    for (int o = 0; o < 2; ++o) {
        double* gw = grads + plan.head_w_off + static_cast<size_t>(o) * plan.dense_units;
        for (int u = 0; u < plan.dense_units; ++u) gw[u] += d_logits[o] * ws.dense_dropped[u];
        grads[plan.head_b_off + o] += d_logits[o];
    }
    for (int u = 0; u < plan.dense_units; ++u) {
        const double* w0 = p.data() + plan.head_w_off;
        double d = w0[u] * d_logits[0] + w0[plan.dense_units + u] * d_logits[1];
        if (dropout_mask) d *= dropout_mask[u];
        ws.d_dense[u] = ws.dense_act[u] > 0.0 ? d : 0.0;
    }

    // dense
    const double* flat = plan.convs.empty() ? ws.input.data()
                                            : stage_input(model, ws, plan.convs.size());
    for (int u = 0; u < plan.dense_units; ++u) {
        const double du = ws.d_dense[u];
        if (du != 0.0) {
            double* gw = grads + plan.dense_w_off + static_cast<size_t>(u) * plan.flatten;
            for (int f = 0; f < plan.flatten; ++f) gw[f] += du * flat[f];
        }
        grads[plan.dense_b_off + u] += du;
    }
    for (int f = 0; f < plan.flatten; ++f) {
        double acc = 0;
        for (int u = 0; u < plan.dense_units; ++u)
            acc += p[plan.dense_w_off + static_cast<size_t>(u) * plan.flatten + f] * ws.d_dense[u];
        ws.d_flat[f] = acc;
    }

    if (plan.convs.empty()) return;

    // conv stack, last to first; ws.d_out[s] holds the gradient with respect
    // to the stage-s output (post-pool when the stage pools)
    for (size_t s = plan.convs.size(); s-- > 0;) {
        const ConvPlan& cp = plan.convs[s];
        const double* down =
            (s + 1 == plan.convs.size()) ? ws.d_flat.data() : ws.d_out[s].data();
        auto& d_act = ws.d_act[s];
        if (cp.pool_after) {
            std::fill(d_act.begin(), d_act.end(), 0.0);
            const auto& amax = ws.argmax[s];
            for (size_t t = 0; t < amax.size(); ++t) d_act[amax[t]] += down[t];
        } else {
            std::copy(down, down + d_act.size(), d_act.begin());
        }
        const auto& act = ws.conv_act[s];
        for (size_t t = 0; t < d_act.size(); ++t)
            if (act[t] <= 0.0) d_act[t] = 0.0;

        conv3x3_backward_params(d_act.data(), cp.out_c, cp.out_hw, stage_input(model, ws, s),
                                cp.in_c, grads + cp.w_off, grads + cp.b_off);
        if (s > 0)
            conv3x3_backward_input(d_act.data(), cp.out_c, cp.out_hw, p.data() + cp.w_off,
                                   ws.d_out[s - 1].data(), cp.in_c);
    }
}

}  // namespace

double forward(const Model& model, std::span<const double> patch, Workspace& ws) {
    ws.prepare(model.plan());
    forward_cached(model, patch, ws, nullptr);
    return ws.probs[1];
}

double forward(const Model& model, std::span<const double> patch) {
    Workspace ws;
    return forward(model, patch, ws);
}

std::array<double, 2> forward_probs(const Model& model, std::span<const double> patch,
                                    Workspace& ws) {
    ws.prepare(model.plan());
    forward_cached(model, patch, ws, nullptr);
    return ws.probs;
}

double loss_and_backward(const Model& model, std::span<const BatchSample> batch,
                         std::vector<double>& grads, int threads) {
    if (batch.empty()) throw std::invalid_argument("loss_and_backward: empty batch");
    const size_t n = batch.size();
    const size_t np = model.param_count();
    const double scale = 1.0 / static_cast<double>(n);

    std::vector<std::vector<double>> sample_grads(n);
    std::vector<double> sample_loss(n, 0.0);

    parallel_for(n, threads, [&](size_t i) {
        thread_local Workspace ws;
        ws.prepare(model.plan());
        const BatchSample& s = batch[i];
        const size_t in_n = ws.input.size();
        forward_cached(model, std::span<const double>(s.values, in_n), ws, s.dropout_mask);
        const double pt = ws.probs[s.label == 1 ? 1 : 0];
        sample_loss[i] = -std::log(pt);
        sample_grads[i].assign(np, 0.0);
        backward_sample(model, ws, s.label, s.dropout_mask, scale, sample_grads[i].data());
    });

    grads.assign(np, 0.0);
    double loss = 0;
    for (size_t i = 0; i < n; ++i) {
        loss += sample_loss[i];
        const auto& g = sample_grads[i];
        for (size_t j = 0; j < np; ++j) grads[j] += g[j];
    }
    loss *= scale;
    if (!std::isfinite(loss)) throw numeric_error("loss_and_backward: non-finite loss");
    return loss;
}

double loss_only(const Model& model, std::span<const BatchSample> batch, int threads) {
    if (batch.empty()) throw std::invalid_argument("loss_only: empty batch");
    const size_t n = batch.size();
    std::vector<double> sample_loss(n, 0.0);
    parallel_for(n, threads, [&](size_t i) {
        thread_local Workspace ws;
        ws.prepare(model.plan());
        const BatchSample& s = batch[i];
        forward_cached(model, std::span<const double>(s.values, ws.input.size()), ws,
                       s.dropout_mask);
        sample_loss[i] = -std::log(ws.probs[s.label == 1 ? 1 : 0]);
    });
    double loss = 0;
    for (size_t i = 0; i < n; ++i) loss += sample_loss[i];
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw numeric_error("loss_only: non-finite loss");
    return loss;
}

std::pair<std::vector<double>, std::vector<double>> dropout_apply(std::span<const double> acts,
                                                                  double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw std::invalid_argument("dropout_apply: rate must be in [0, 1)");
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> masked(acts.size()), mask(acts.size());
    for (size_t i = 0; i < acts.size(); ++i) {
        mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
        masked[i] = acts[i] * mask[i];
    }
    return {std::move(masked), std::move(mask)};
}

void adagrad_step(Model& model, std::span<const double> grads, OptimizerState& state) {
    auto& p = model.params();
    if (grads.size() != p.size() || state.accum.size() != p.size())
        throw dim_mismatch_error("adagrad_step: gradient/state size mismatch");
    for (size_t i = 0; i < p.size(); ++i) {
        const double g = grads[i];
        state.accum[i] += g * g;
        p[i] -= state.learning_rate * g / (std::sqrt(state.accum[i]) + state.epsilon);
    }
}

// --- gradient verification ---------------------------------------------------

namespace {

double eval_loss(const Model& model, std::span<const CheckSample> batch, Workspace& ws) {
    double loss = 0;
    for (const auto& s : batch) {
        ws.prepare(model.plan());
        forward_cached(model, s.values, ws, nullptr);
        loss += -std::log(ws.probs[s.label == 1 ? 1 : 0]);
    }
    return loss / static_cast<double>(batch.size());
}

}  // namespace

double max_rel_error_vs_fd(Model& model, std::span<const CheckSample> batch,
                           std::span<const double> analytic, double h) {
    if (analytic.size() != model.param_count())
        throw dim_mismatch_error("max_rel_error_vs_fd: gradient size mismatch");
    Workspace ws;
    auto& p = model.params();
    double worst = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + h;
        const double lp = eval_loss(model, batch, ws);
        p[i] = orig - h;
        const double lm = eval_loss(model, batch, ws);
        p[i] = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

double gradient_check(Model& model, std::span<const CheckSample> batch, double h) {
    std::vector<BatchSample> samples;
    samples.reserve(batch.size());
    for (const auto& s : batch) samples.push_back({s.values.data(), s.label, nullptr});
    std::vector<double> grads;
    loss_and_backward(model, samples, grads, 1);
    return max_rel_error_vs_fd(model, batch, grads, h);
}

// --- model file ---------------------------------------------------------------

namespace {

nlohmann::json arch_to_json(const ArchSpec& arch) {
    nlohmann::json convs = nlohmann::json::array();
    for (const auto& c : arch.convs)
        convs.push_back({{"kernels", c.kernels}, {"pool", c.pool_after}});
    return {{"input", arch.input_size}, {"convs", std::move(convs)},
            {"dense_units", arch.dense_units}};
}

ArchSpec arch_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.contains("input") || !j.contains("convs") || !j.contains("dense_units"))
        throw bad_header_error(path + ": incomplete architecture descriptor");
    ArchSpec arch;
    arch.input_size = j["input"].get<int>();
    arch.dense_units = j["dense_units"].get<int>();
    for (const auto& c : j["convs"])
        arch.convs.push_back({c["kernels"].get<int>(), c["pool"].get<bool>()});
    return arch;
}

}  // namespace

void save_model_file(const std::string& path, const Model& model, const OptimizerState* optimizer,
                     uint64_t seed, uint64_t step, const std::string& trainer_json) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f.write(kModelMagic, sizeof(kModelMagic));
    nlohmann::json j;
    j["arch"] = arch_to_json(model.arch());
    j["seed"] = seed;
    j["step"] = step;
    j["has_optimizer"] = optimizer != nullptr;
    if (optimizer) {
        j["learning_rate"] = optimizer->learning_rate;
        j["epsilon"] = optimizer->epsilon;
    }
    if (!trainer_json.empty()) j["trainer"] = nlohmann::json::parse(trainer_json);
    f << j.dump() << '\n';
    f.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(model.params().size() * sizeof(double)));
    if (optimizer) {
        if (optimizer->accum.size() != model.param_count())
            throw dim_mismatch_error("save_model_file: optimizer state size mismatch");
        f.write(reinterpret_cast<const char*>(optimizer->accum.data()),
                static_cast<std::streamsize>(optimizer->accum.size() * sizeof(double)));
    }
    if (!f) throw io_error("write failed: " + path);
}

ModelFile load_model_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    char magic[sizeof(kModelMagic)] = {};
    f.read(magic, sizeof(magic));
    if (f.gcount() != sizeof(magic) || std::memcmp(magic, kModelMagic, 5) != 0)
        throw bad_magic_error(path + ": not a CACNN model file");
    if (magic[5] != kModelMagic[5])
        throw bad_version_error(path + ": unsupported model format version");
    std::string line;
    if (!std::getline(f, line)) throw bad_header_error(path + ": missing descriptor line");
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("arch"))
        throw bad_header_error(path + ": malformed descriptor");

    ModelFile out;
    out.model = Model(arch_from_json(j["arch"], path));
    out.seed = j.value("seed", uint64_t{0});
    out.step = j.value("step", uint64_t{0});
    if (j.contains("trainer")) out.trainer_json = j["trainer"].dump();

    const size_t np = out.model.param_count();
    f.read(reinterpret_cast<char*>(out.model.params().data()),
           static_cast<std::streamsize>(np * sizeof(double)));
    if (static_cast<size_t>(f.gcount()) != np * sizeof(double))
        throw payload_size_error(path + ": truncated parameter payload");
    if (j.value("has_optimizer", false)) {
        OptimizerState opt(np, j.value("learning_rate", 0.001));
        opt.epsilon = j.value("epsilon", 1e-8);
        f.read(reinterpret_cast<char*>(opt.accum.data()),
               static_cast<std::streamsize>(np * sizeof(double)));
        if (static_cast<size_t>(f.gcount()) != np * sizeof(double))
            throw payload_size_error(path + ": truncated optimizer payload");
        out.optimizer = std::move(opt);
    }
    if (f.peek() != std::ifstream::traits_type::eof())
        throw payload_size_error(path + ": trailing bytes after payload");
    return out;
}

}  // namespace cacs
