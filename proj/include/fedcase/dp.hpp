#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fedcase/errors.hpp"
#include "fedcase/model.hpp"
#include "fedcase/rng.hpp"

namespace fedcase {

enum class OptimizerKind { sgd, adam };

struct DpConfig {
    bool enabled = true;
    double clip_norm = 1.0;        // C
    double noise_multiplier = 0.8; // sigma
    double learning_rate = 0.05;   // eta (0.001 is the usual Adam choice)
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double delta = 1e-5;
    OptimizerKind optimizer = OptimizerKind::sgd;

    void validate() const {
        if (!(clip_norm > 0.0)) throw ConfigError("dp.clip_norm: must be > 0");
        if (!(noise_multiplier >= 0.0) || !std::isfinite(noise_multiplier))
            throw ConfigError("dp.noise_multiplier: must be finite and >= 0");
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("dp.learning_rate: must be finite and >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("dp.adam_beta1: must be in [0,1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("dp.adam_beta2: must be in [0,1)");
        if (!(adam_eps > 0.0)) throw ConfigError("dp.adam_eps: must be > 0");
        if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("dp.delta: must be in (0,1)");
    }
};

// Gaussian-mechanism Renyi accounting with naive composition, converted via
//   eps = min over integer alpha in [2,64] of
//         steps * alpha / (2 sigma^2) + log(1/delta) / (alpha - 1).
// Subsampling amplification is deliberately ignored, so this is a
// conservative upper bound.
struct PrivacyLedger {
    std::uint64_t steps_taken = 0;
    double sampling_rate = 1.0; // q, recorded but unused by the bound
    double sigma = 0.8;
    double delta = 1e-5;
    double epsilon_estimate = 0.0;

    void record_steps(std::uint64_t n);
};

inline double account_epsilon(const PrivacyLedger& ledger) {
    if (ledger.sigma == 0.0) return std::numeric_limits<double>::infinity();
    if (!(ledger.delta > 0.0 && ledger.delta < 1.0))
        throw StateError("account_epsilon: delta must be in (0,1)");
    const double log_inv_delta = std::log(1.0 / ledger.delta);
    const double per_step = 1.0 / (2.0 * ledger.sigma * ledger.sigma);
    double best = std::numeric_limits<double>::infinity();
    for (int alpha = 2; alpha <= 64; ++alpha) {
        const double eps = static_cast<double>(ledger.steps_taken) * alpha * per_step +
                           log_inv_delta / (alpha - 1.0);
        best = std::min(best, eps);
    }
    return best;
}

inline void PrivacyLedger::record_steps(std::uint64_t n) {
    steps_taken += n;
    epsilon_estimate = account_epsilon(*this);
}

inline double grad_norm(const GradSet& g) {
    double sq = 0.0;
    for_each_block(g, [&](const std::vector<double>& blk) {
        for (double v : blk) sq += v * v;
    });
    return std::sqrt(sq);
}

// grad * min(1, C / ||grad||_2) over the full flattened gradient. Gradients
// already within the bound pass through bit-identical.
inline GradSet clip_gradient(const GradSet& grad, double clip_norm) {
    if (!(clip_norm > 0.0)) throw StateError("clip_gradient: C must be > 0");
    const double norm = grad_norm(grad);
    if (!std::isfinite(norm)) throw NumericError("clip_gradient: non-finite gradient");
    GradSet out = grad;
    if (norm > clip_norm) {
        const double factor = clip_norm / norm;
        for_each_block(out, [&](std::vector<double>& blk) {
            for (auto& v : blk) v *= factor;
        });
    }
    return out;
}

// Which layers receive updates (and noise). Head trainability is explicit so
// the mask fully describes the freeze schedule.
struct LayerMask {
    std::vector<std::uint8_t> backbone_trainable;
    bool head_trainable = true;

    static LayerMask all(const GlobalModel& m) {
        LayerMask mask;
        mask.backbone_trainable.assign(m.backbone.size(), 1);
        return mask;
    }

    static LayerMask head_plus_last(const GlobalModel& m, std::size_t unfrozen_backbone) {
        LayerMask mask;
        mask.backbone_trainable.assign(m.backbone.size(), 0);
        const std::size_t n = std::min(unfrozen_backbone, m.backbone.size());
        for (std::size_t i = 0; i < n; ++i)
            mask.backbone_trainable[m.backbone.size() - 1 - i] = 1;
        return mask;
    }
};

struct AdamState {
    GradSet m;
    GradSet v;
    std::uint64_t t = 0;
    bool initialized = false;
};

struct OptimizerState {
    AdamState adam;
};

namespace detail {

template <typename Fn>
void for_each_masked_block(GradSet& g, const LayerMask& mask, Fn&& fn) {
    for (std::size_t li = 0; li < g.backbone.size(); ++li) {
        const bool on = mask.backbone_trainable.empty() ? true
                                                        : mask.backbone_trainable[li] != 0;
        fn(g.backbone[li].w, on);
        fn(g.backbone[li].b, on);
    }
    fn(g.head.w, mask.head_trainable);
    fn(g.head.b, mask.head_trainable);
}

inline void apply_update(GlobalModel& model, const GradSet& step_grad, const DpConfig& cfg,
                         OptimizerState& state, const LayerMask& mask) {
    auto zip_layers = [&](auto&& fn) {
        for (std::size_t li = 0; li < model.backbone.size(); ++li) {
            const bool on = mask.backbone_trainable.empty() ? true
                                                            : mask.backbone_trainable[li] != 0;
            if (!on) continue;
            fn(model.backbone[li].w, step_grad.backbone[li].w, li, /*bias=*/false);
            fn(model.backbone[li].b, step_grad.backbone[li].b, li, /*bias=*/false);
        }
        if (mask.head_trainable) {
            fn(model.head.w, step_grad.head.w, model.backbone.size(), false);
            fn(model.head.b, step_grad.head.b, model.backbone.size(), false);
        }
    };

    if (cfg.optimizer == OptimizerKind::sgd) {
        zip_layers([&](std::vector<double>& p, const std::vector<double>& g, std::size_t, bool) {
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.learning_rate * g[i];
        });
        return;
    }

    // Adam
    if (!state.adam.initialized) {
        state.adam.m = GradSet::zeros_like(model);
        state.adam.v = GradSet::zeros_like(model);
        state.adam.initialized = true;
    }
    state.adam.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.adam.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.adam.t));

    auto adam_block = [&](std::vector<double>& p, const std::vector<double>& g,
                          std::vector<double>& m, std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            p[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
        }
    };
    for (std::size_t li = 0; li < model.backbone.size(); ++li) {
        const bool on = mask.backbone_trainable.empty() ? true : mask.backbone_trainable[li] != 0;
        if (!on) continue;
        adam_block(model.backbone[li].w, step_grad.backbone[li].w, state.adam.m.backbone[li].w,
                   state.adam.v.backbone[li].w);
        adam_block(model.backbone[li].b, step_grad.backbone[li].b, state.adam.m.backbone[li].b,
                   state.adam.v.backbone[li].b);
    }
    if (mask.head_trainable) {
        adam_block(model.head.w, step_grad.head.w, state.adam.m.head.w, state.adam.v.head.w);
        adam_block(model.head.b, step_grad.head.b, state.adam.m.head.b, state.adam.v.head.b);
    }
}

} // namespace detail

// One DP optimizer step: per-example clip, sum in example order, one Gaussian
// noise draw per trainable coordinate (skipped entirely when sigma == 0 so
// the non-private path stays bit-identical), scale by 1/B, then SGD or Adam.
inline void dp_step(GlobalModel& model, const std::vector<GradSet>& per_example_grads,
                    const DpConfig& cfg, OptimizerState& state, RngStream& rng,
                    const LayerMask& mask) {
    if (per_example_grads.empty()) throw StateError("dp_step: empty gradient list");
    const double inv_b = 1.0 / static_cast<double>(per_example_grads.size());

    GradSet noisy_mean = GradSet::zeros_like(model);
    for (const auto& g : per_example_grads) {
        const GradSet clipped = clip_gradient(g, cfg.clip_norm);
        auto add = [](std::vector<double>& dst, const std::vector<double>& src) {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        };
        for (std::size_t li = 0; li < noisy_mean.backbone.size(); ++li) {
            add(noisy_mean.backbone[li].w, clipped.backbone[li].w);
            add(noisy_mean.backbone[li].b, clipped.backbone[li].b);
        }
        add(noisy_mean.head.w, clipped.head.w);
        add(noisy_mean.head.b, clipped.head.b);
    }
    if (cfg.noise_multiplier > 0.0) {
        const double noise_scale = cfg.noise_multiplier * cfg.clip_norm;
        detail::for_each_masked_block(noisy_mean, mask, [&](std::vector<double>& blk, bool on) {
            if (!on) return;
            for (auto& v : blk) v += noise_scale * rng.gaussian();
        });
    }
    detail::for_each_masked_block(noisy_mean, mask, [&](std::vector<double>& blk, bool on) {
        if (!on) return;
        for (auto& v : blk) v *= inv_b;
    });
    detail::apply_update(model, noisy_mean, cfg, state, mask);
}

inline void dp_step(GlobalModel& model, const std::vector<GradSet>& per_example_grads,
                    const DpConfig& cfg, OptimizerState& state, RngStream& rng) {
    dp_step(model, per_example_grads, cfg, state, rng, LayerMask::all(model));
}

// Non-private step on a precomputed batch-mean gradient.
inline void plain_step(GlobalModel& model, const GradSet& batch_mean_grad, const DpConfig& cfg,
                       OptimizerState& state, const LayerMask& mask) {
    detail::apply_update(model, batch_mean_grad, cfg, state, mask);
}

} // namespace fedcase
