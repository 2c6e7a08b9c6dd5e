#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "afb/error.hpp"
#include "afb/matrix.hpp"
#include "afb/rng.hpp"
#include "afb/tape.hpp"

namespace afb {

/// Training mode uses batch statistics in batch-norm layers; eval mode uses
/// the stored running statistics and is a fixed map.
enum class Mode { train, eval };

struct LinearParams {
    Matrix w;  ///< (out x in)
    Matrix b;  ///< (1 x out)
};

struct BatchNormParams {
    Matrix gamma;  ///< (1 x C), trainable
    Matrix beta;   ///< (1 x C), trainable
    std::vector<double> running_mean;  ///< state, not trainable
    std::vector<double> running_var;
};

/// Plain MLP: affine -> (batch norm if configured) -> ReLU per hidden layer,
/// final layer affine only.
struct MlpParams {
    std::vector<LinearParams> layers;
    std::vector<BatchNormParams> bns;  ///< empty, or one per hidden layer
};

/// GraphSAGE-style layer: h_i W_self^T + mean_j(h_j) W_neigh^T + b.
struct SageParams {
    Matrix w_self;   ///< (out x in)
    Matrix w_neigh;  ///< (out x in)
    Matrix b;        ///< (1 x out)
};

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) for weights and biases.
inline LinearParams make_linear(int in, int out, Rng& rng) {
    const double bound = std::sqrt(1.0 / in);
    return {Matrix::uniform(out, in, -bound, bound, rng),
            Matrix::uniform(1, out, -bound, bound, rng)};
}

inline BatchNormParams make_batchnorm(int c) {
    BatchNormParams bn;
    bn.gamma = Matrix::filled(1, c, 1.0);
    bn.beta = Matrix::zeros(1, c);
    bn.running_mean.assign(c, 0.0);
    bn.running_var.assign(c, 1.0);
    return bn;
}

inline MlpParams make_mlp(const std::vector<int>& widths, bool with_bn, Rng& rng) {
    if (widths.size() < 2)
        throw ArgumentError("make_mlp: need at least input and output widths");
    MlpParams p;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
        p.layers.push_back(make_linear(widths[l], widths[l + 1], rng));
    if (with_bn)
        for (std::size_t l = 0; l + 2 < widths.size(); ++l)
            p.bns.push_back(make_batchnorm(widths[l + 1]));
    return p;
}

inline SageParams make_sage(int in, int out, Rng& rng) {
    const double bound = std::sqrt(1.0 / in);
    return {Matrix::uniform(out, in, -bound, bound, rng),
            Matrix::uniform(out, in, -bound, bound, rng),
            Matrix::uniform(1, out, -bound, bound, rng)};
}

/// Batch stats recorded during a training-mode forward, in application order,
/// each tagged with the index of the batch-norm parameter block it came from.
struct BnUpdate {
    int bn_index;
    BnBatch stats;
};
using BnUpdates = std::vector<BnUpdate>;

namespace detail {

inline int apply_bn(Tape& tape, int x, BatchNormParams& bn, Mode mode, double eps,
                    int bn_index, BnUpdates* updates) {
    const int gamma = tape.param(bn.gamma);
    const int beta = tape.param(bn.beta);
    if (mode == Mode::train) {
        std::vector<BnBatch> batch;
        const int y = tape.batchnorm_train(x, gamma, beta, eps, &batch);
        if (updates)
            updates->push_back({bn_index, std::move(batch.front())});
        return y;
    }
    return tape.batchnorm_eval(x, gamma, beta, bn.running_mean, bn.running_var, eps);
}

} // namespace detail

/// Run an MLP on tape node `x`. `bn_base` offsets the indices recorded in
/// `updates` so several parameter blocks can share one update list.
inline int mlp_apply(Tape& tape, MlpParams& p, int x, Mode mode = Mode::eval,
                     double bn_eps = 1e-5, BnUpdates* updates = nullptr,
                     int bn_base = 0) {
    if (!p.bns.empty() && p.bns.size() != p.layers.size() - 1)
        throw ConfigError("mlp_apply: batch-norm blocks must cover each hidden layer");
    int h = x;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        h = tape.affine(h, tape.param(p.layers[l].w), tape.param(p.layers[l].b));
        if (l + 1 < p.layers.size()) {
            if (!p.bns.empty())
                h = detail::apply_bn(tape, h, p.bns[l], mode, bn_eps,
                                     bn_base + static_cast<int>(l), updates);
            h = tape.relu(h);
        }
    }
    return h;
}

/// One SAGE layer (no activation; callers add norm/ReLU as their trunk demands).
inline int sage_apply(Tape& tape, SageParams& p, int h, const RadiusGraph& g) {
    const int self_term = tape.affine(h, tape.param(p.w_self), tape.param(p.b));
    const int agg = tape.mean_aggregate(h, g);
    const int neigh_term = tape.linear_nobias(agg, tape.param(p.w_neigh));
    return tape.add(self_term, neigh_term);
}

/// Fold recorded batch statistics into running statistics:
///   running <- (1 - momentum) * running + momentum * batch.
inline void commit_bn_updates(std::vector<BatchNormParams*> bns, const BnUpdates& updates,
                              double momentum) {
    for (const BnUpdate& u : updates) {
        if (u.bn_index < 0 || u.bn_index >= static_cast<int>(bns.size()))
            throw ArgumentError("commit_bn_updates: batch-norm index out of range");
        BatchNormParams& bn = *bns[u.bn_index];
        for (std::size_t j = 0; j < bn.running_mean.size(); ++j) {
            bn.running_mean[j] =
                (1.0 - momentum) * bn.running_mean[j] + momentum * u.stats.mean[j];
            bn.running_var[j] =
                (1.0 - momentum) * bn.running_var[j] + momentum * u.stats.var[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// First/second moment buffers for one parameter tensor.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update, in place. `step_t` counts from 1.
inline void adam_step(Matrix& value, const Matrix& grad, AdamState& state,
                      long long step_t, double lr, const AdamConfig& cfg = {}) {
    if (!value.same_shape(grad))
        throw ShapeError("adam_step: value/grad shape mismatch");
    if (step_t < 1)
        throw ArgumentError("adam_step: step counter starts at 1");
    if (state.m.empty()) {
        state.m.assign(value.size(), 0.0);
        state.v.assign(value.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_t));
    for (std::size_t i = 0; i < value.a.size(); ++i) {
        const double g = grad.a[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        value.a[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

/// One-cycle schedule: cosine warmup from max_lr/25 to max_lr over the first
/// 30% of steps, then cosine annealing down to max_lr/1e4 over the rest.
inline double one_cycle_lr(double step, double total_steps, double max_lr) {
    if (!(total_steps > 0.0))
        throw ArgumentError("one_cycle_lr: total_steps must be positive");
    if (step < 0.0 || step > total_steps)
        throw ArgumentError("one_cycle_lr: step outside [0, total_steps]");
    const double warm = 0.3 * total_steps;
    const auto cosine = [](double from, double to, double p) {
        return from + (to - from) * 0.5 * (1.0 - std::cos(std::numbers::pi * p));
    };
    if (step <= warm)
        return cosine(max_lr / 25.0, max_lr, warm > 0.0 ? step / warm : 1.0);
    return cosine(max_lr, max_lr / 1e4, (step - warm) / (total_steps - warm));
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

/// Named handle on one trainable tensor of a model.
struct ParamRef {
    std::string name;
    Matrix* tensor;
};

struct FdReport {
    /// Max relative error over entries with |analytic| >= rel_floor. Central
    /// differences carry roundoff noise of order eps * |loss| / step, so
    /// entries below the floor cannot be checked relatively in principle;
    /// they are held to an absolute bound instead.
    double max_rel_err = 0.0;
    /// Max |analytic - numeric| over entries with |analytic| < rel_floor.
    double max_small_abs_err = 0.0;
    double rel_floor = 1e-6;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;

    bool passes(double rel_tol = 1e-4, double abs_tol = 1e-8) const {
        return max_rel_err < rel_tol && max_small_abs_err < abs_tol;
    }
};

/// Compare analytic gradients against central finite differences.
///
/// `loss` must re-evaluate the objective at the current parameter values with
/// no side effects. `analytic` runs one forward/backward and returns the
/// gradient for each ParamRef tensor, aligned with `params`. Relative error is
/// |analytic - numeric| / (|analytic| + 1e-12), maximized over checked entries.
///
/// max_checks = 0 sweeps every entry. Otherwise a seeded, per-tensor
/// proportional subset is checked (at least one entry per tensor), which keeps
/// large models inside a sane runtime while still covering every tensor.
///
/// fallback_steps handles piecewise-smooth objectives (ReLU): when an entry's
/// error at `step` is at or above accept_rel, it is retried at each fallback
/// step and the smallest error wins. A step interval straddling a kink makes
/// the central difference itself wrong; shrinking the step moves the interval
/// off the kink, while a genuinely wrong analytic gradient keeps failing at
/// every step. Leave fallback_steps empty for strict single-step checking.
inline FdReport finite_diff_check(const std::vector<ParamRef>& params,
                                  const std::function<double()>& loss,
                                  const std::function<std::vector<Matrix>()>& analytic,
                                  double step = 1e-5, std::size_t max_checks = 0,
                                  std::uint64_t seed = 0,
                                  const std::vector<double>& fallback_steps = {},
                                  double accept_rel = 1e-4) {
    const std::vector<Matrix> grads = analytic();
    if (grads.size() != params.size())
        throw ShapeError("finite_diff_check: analytic() must align with params");

    std::size_t total = 0;
    for (const ParamRef& p : params)
        total += p.tensor->size();

    FdReport report;
    Rng rng(mix_seed(seed, seed_tag::param_init, 0xfd));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Matrix& tensor = *params[pi].tensor;
        if (!tensor.same_shape(grads[pi]))
            throw ShapeError("finite_diff_check: gradient shape mismatch for " +
                             params[pi].name);
        std::vector<std::uint32_t> indices;
        if (max_checks == 0 || total <= max_checks) {
            indices.resize(tensor.size());
            for (std::size_t i = 0; i < indices.size(); ++i)
                indices[i] = static_cast<std::uint32_t>(i);
        } else {
            const auto want = std::max<std::uint64_t>(
                1, static_cast<std::uint64_t>(max_checks) * tensor.size() / total);
            indices = sample_without_replacement(
                tensor.size(), std::min<std::uint64_t>(want, tensor.size()), rng);
        }
        for (std::uint32_t idx : indices) {
            const double exact = grads[pi].a[idx];
            const auto try_step = [&](double h) {
                const double saved = tensor.a[idx];
                tensor.a[idx] = saved + h;
                const double f_plus = loss();
                tensor.a[idx] = saved - h;
                const double f_minus = loss();
                tensor.a[idx] = saved;
                return (f_plus - f_minus) / (2.0 * h);
            };
            double numeric = try_step(step);
            double rel = std::abs(exact - numeric) / (std::abs(exact) + 1e-12);
            for (double h : fallback_steps) {
                if (rel < accept_rel)
                    break;
                const double n2 = try_step(h);
                const double r2 = std::abs(exact - n2) / (std::abs(exact) + 1e-12);
                if (r2 < rel) {
                    rel = r2;
                    numeric = n2;
                }
            }
            ++report.checked;
            if (std::abs(exact) < report.rel_floor) {
                report.max_small_abs_err =
                    std::max(report.max_small_abs_err, std::abs(exact - numeric));
            } else if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = params[pi].name;
                report.worst_index = idx;
                report.worst_analytic = exact;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace afb
