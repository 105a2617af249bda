#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fedcase/dp.hpp"
#include "fedcase/errors.hpp"
#include "fedcase/image.hpp"
#include "fedcase/metrics.hpp"
#include "fedcase/model.hpp"
#include "fedcase/rng.hpp"

namespace fedcase {

struct FedConfig {
    std::size_t clients = 3;         // K
    std::size_t rounds = 10;         // T
    std::size_t local_epochs = 3;    // E
    std::size_t batch_size = 16;     // B
    std::size_t finetune_after = 5;  // t_ft: rounds 1..t_ft train the head only
    std::size_t unfreeze_layers = 2; // f backbone layers unfrozen after t_ft
    double validation_fraction = 0.2;
    DpConfig dp;
    std::uint64_t seed = 7;

    void validate() const {
        if (clients < 1) throw ConfigError("fed.clients: must be >= 1");
        if (rounds < 1) throw ConfigError("fed.rounds: must be >= 1");
        if (local_epochs < 1) throw ConfigError("fed.local_epochs: must be >= 1");
        if (batch_size < 1) throw ConfigError("fed.batch_size: must be >= 1");
        if (finetune_after > rounds)
            throw ConfigError("fed.finetune_after: must be in [0, fed.rounds]");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
            throw ConfigError("fed.validation_fraction: must be in (0,1)");
        dp.validate();
    }
};

// One site's data plus its aggregation weight within the federation.
struct ClientDataset {
    int client_id = 0;
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> validation;
    double scaling = 0.0; // z_k = n_k / sum_j n_j, set when the federation is assembled

    std::size_t n() const { return train.size(); }
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<double> client_f1;
    double weighted_f1 = 0.0;
    bool is_best = false;
    std::string checkpoint_path;
    double epsilon = 0.0;
};

struct FedRunResult {
    GlobalModel best_model;
    GlobalModel final_model;
    std::vector<RoundRecord> records;
    double best_f1 = -1.0;
    std::size_t best_round = 0;
};

// z_k = n_k / sum n
inline std::vector<double> scaling_factors(const std::vector<std::size_t>& sizes) {
    if (sizes.empty()) throw StateError("scaling_factors: empty federation");
    std::size_t total = 0;
    for (std::size_t n : sizes) {
        if (n == 0) throw StateError("scaling_factors: invalid dataset with zero examples");
        total += n;
    }
    std::vector<double> z(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i)
        z[i] = static_cast<double>(sizes[i]) / static_cast<double>(total);
    return z;
}

// Coordinate-wise z-weighted average of shape-identical models. The exact
// mean lies in the clients' per-coordinate hull; the clamp repairs the few
// ulps of rounding drift, which also makes consensus aggregation (and the
// K = 1 case) bit-exact.
inline GlobalModel aggregate(const std::vector<GlobalModel>& models, const std::vector<double>& z) {
    if (models.empty()) throw StateError("aggregate: no models");
    if (models.size() != z.size()) throw ShapeError("aggregate: models/weights length mismatch");
    double zsum = 0.0;
    for (double v : z) zsum += v;
    if (std::abs(zsum - 1.0) > 1e-9)
        throw StateError("aggregate: scaling factors must sum to 1, got " + std::to_string(zsum));
    for (const auto& m : models)
        if (!m.same_shape(models.front())) throw ShapeError("aggregate: model shape mismatch");

    // gather parallel block lists, one entry per parameter block per model
    std::vector<std::vector<const std::vector<double>*>> blocks(models.size());
    for (std::size_t k = 0; k < models.size(); ++k)
        for_each_block(models[k],
                       [&](const std::vector<double>& blk) { blocks[k].push_back(&blk); });

    GlobalModel out = models.front();
    std::size_t bi = 0;
    for_each_block(out, [&](std::vector<double>& dst) {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            double acc = 0.0;
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < models.size(); ++k) {
                const double v = (*blocks[k][bi])[i];
                acc += z[k] * v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            dst[i] = std::clamp(acc, lo, hi);
        }
        ++bi;
    });
    return out;
}

namespace detail {

[[noreturn]] inline void annotate_rethrow(const Error& e, const std::string& context) {
    const std::string msg = context + ": " + e.what();
    switch (e.category()) {
        case ErrorCategory::config: throw ConfigError(msg);
        case ErrorCategory::io: throw IoError(msg);
        default: throw StateError(msg);
    }
}

// E epochs of seeded shuffled minibatches over data.train. Returns the number
// of optimizer steps taken. The same routine backs both the private client
// path and the centralized baseline.
inline std::uint64_t train_local(GlobalModel& model, const ClientDataset& data,
                                 const FedConfig& cfg, const LayerMask& mask, RngStream& rng) {
    const ClassWeights cw = class_weights(data.train);
    std::uint64_t steps = 0;
    OptimizerState state;
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        // Fisher-Yates with the caller's stream
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.uniform_below(i));
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            std::vector<LabeledImage> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(data.train[order[i]]);

            if (cfg.dp.enabled) {
                LossGrads lg = loss_and_grads(model, batch, cw, GradMode::per_example);
                // zero frozen layers so the clip norm covers exactly the
                // gradient that will be released
                for (auto& g : lg.per_example)
                    for (std::size_t li = 0; li < g.backbone.size(); ++li)
                        if (!mask.backbone_trainable[li]) {
                            std::fill(g.backbone[li].w.begin(), g.backbone[li].w.end(), 0.0);
                            std::fill(g.backbone[li].b.begin(), g.backbone[li].b.end(), 0.0);
                        }
                dp_step(model, lg.per_example, cfg.dp, state, rng, mask);
            } else {
                LossGrads lg = loss_and_grads(model, batch, cw, GradMode::batch_mean);
                plain_step(model, lg.batch_mean, cfg.dp, state, mask);
            }
            ++steps;
        }
    }
    return steps;
}

inline LayerMask schedule_mask(const GlobalModel& model, const FedConfig& cfg, std::size_t round) {
    if (round <= cfg.finetune_after) return LayerMask::head_plus_last(model, 0);
    return LayerMask::head_plus_last(model, cfg.unfreeze_layers);
}

inline double validation_f1(const GlobalModel& model, const std::vector<LabeledImage>& images) {
    std::vector<int> preds, truths;
    preds.reserve(images.size());
    truths.reserve(images.size());
    for (const auto& img : images) {
        preds.push_back(predict(model, img).label);
        truths.push_back(img.label);
    }
    return f1_score(preds, truths);
}

inline void require_both_classes(const std::vector<LabeledImage>& images, const std::string& what) {
    bool has0 = false, has1 = false;
    for (const auto& img : images) (img.label == 0 ? has0 : has1) = true;
    if (!has0 || !has1) throw StateError(what + ": degenerate dataset, both classes required");
}

} // namespace detail

// ClientUpdate: copy the broadcast model, train E local epochs of size-B
// minibatches with the round's layer mask, return the local model. Frozen
// backbone parameters come back bitwise unchanged.
inline GlobalModel client_update(int client_id, const GlobalModel& global_model,
                                 const ClientDataset& data, const FedConfig& cfg,
                                 std::size_t round, RngStream& rng,
                                 std::uint64_t* steps_out = nullptr) {
    if (round < 1 || round > cfg.rounds)
        throw StateError("client_update: round " + std::to_string(round) + " outside [1, T]");
    GlobalModel local = global_model;
    const LayerMask mask = detail::schedule_mask(local, cfg, round);
    try {
        const std::uint64_t steps = detail::train_local(local, data, cfg, mask, rng);
        if (steps_out) *steps_out = steps;
    } catch (const Error& e) {
        detail::annotate_rethrow(e, "client " + std::to_string(client_id) + " round " +
                                        std::to_string(round));
    }
    return local;
}

// Writes one CSV row per (round, client): round, client_id, f1_client,
// f1_weighted, epsilon, is_best.
inline std::string round_log_csv(const std::vector<RoundRecord>& records,
                                 const std::vector<int>& client_ids) {
    std::ostringstream out;
    out.precision(17);
    out << "round,client_id,f1_client,f1_weighted,epsilon,is_best\n";
    for (const auto& rec : records) {
        for (std::size_t k = 0; k < rec.client_f1.size(); ++k) {
            out << rec.round << ',' << client_ids[k] << ',' << rec.client_f1[k] << ','
                << rec.weighted_f1 << ',';
            if (std::isinf(rec.epsilon)) out << "inf";
            else out << rec.epsilon;
            out << ',' << (rec.is_best ? 1 : 0) << '\n';
        }
    }
    return out.str();
}

// Algorithm core: T rounds of broadcast -> local training -> z-weighted
// aggregation -> weighted-F1 evaluation, keeping the strictly-best round's
// model. Deterministic given cfg.seed: client k's stream in round t derives
// from (seed, t, client_id), so execution order cannot change results.
inline FedRunResult run_federated(std::vector<ClientDataset> clients, const FedConfig& cfg,
                                  const GlobalModel& initial_model,
                                  const std::filesystem::path& out_dir = {}) {
    cfg.validate();
    if (clients.empty()) throw StateError("run_federated: no clients");
    if (clients.size() != cfg.clients)
        throw ConfigError("fed.clients: config says " + std::to_string(cfg.clients) +
                          " but " + std::to_string(clients.size()) + " datasets were provided");
    for (const auto& c : clients) {
        detail::require_both_classes(c.train, "client " + std::to_string(c.client_id) + " train");
        detail::require_both_classes(c.validation,
                                     "client " + std::to_string(c.client_id) + " validation");
    }

    std::vector<std::size_t> sizes;
    for (const auto& c : clients) sizes.push_back(c.n());
    const std::vector<double> z = scaling_factors(sizes);
    for (std::size_t k = 0; k < clients.size(); ++k) clients[k].scaling = z[k];

    std::vector<PrivacyLedger> ledgers(clients.size());
    for (std::size_t k = 0; k < clients.size(); ++k) {
        ledgers[k].sigma = cfg.dp.noise_multiplier;
        ledgers[k].delta = cfg.dp.delta;
        ledgers[k].sampling_rate =
            std::min(1.0, static_cast<double>(cfg.batch_size) / static_cast<double>(clients[k].n()));
    }

    FedRunResult result;
    GlobalModel global = initial_model;
    global.validate();
    const bool persist = !out_dir.empty();
    if (persist) std::filesystem::create_directories(out_dir);

    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        std::vector<GlobalModel> locals;
        locals.reserve(clients.size());
        for (std::size_t k = 0; k < clients.size(); ++k) {
            RngStream rng(derive_seed(cfg.seed, t, static_cast<std::uint64_t>(clients[k].client_id)));
            std::uint64_t steps = 0;
            locals.push_back(
                client_update(clients[k].client_id, global, clients[k], cfg, t, rng, &steps));
            if (cfg.dp.enabled) ledgers[k].record_steps(steps);
        }
        global = aggregate(locals, z);

        RoundRecord rec;
        rec.round = t;
        double weighted = 0.0;
        for (std::size_t k = 0; k < clients.size(); ++k) {
            const double f1 = detail::validation_f1(global, clients[k].validation);
            rec.client_f1.push_back(f1);
            weighted += z[k] * f1;
        }
        rec.weighted_f1 = weighted;
        rec.epsilon = std::numeric_limits<double>::infinity();
        if (cfg.dp.enabled && cfg.dp.noise_multiplier > 0.0) {
            double worst = 0.0;
            for (const auto& led : ledgers) worst = std::max(worst, led.epsilon_estimate);
            rec.epsilon = worst;
        }
        if (weighted > result.best_f1) {
            rec.is_best = true;
            result.best_f1 = weighted;
            result.best_round = t;
            result.best_model = global;
            if (persist) save_checkpoint(out_dir / "best.fckp", global);
        }
        if (persist) {
            const auto path = out_dir / ("round_" + std::to_string(t) + ".fckp");
            save_checkpoint(path, global);
            rec.checkpoint_path = path.string();
        }
        result.records.push_back(std::move(rec));
    }
    result.final_model = global;

    if (persist) {
        std::vector<int> ids;
        for (const auto& c : clients) ids.push_back(c.client_id);
        write_text_file(out_dir / "rounds.csv", round_log_csv(result.records, ids));
    }
    return result;
}

// Centralized baseline: the same freeze-then-finetune schedule on one pooled
// dataset, never private. With one client and DP off, run_federated reduces
// to this bit for bit.
inline FedRunResult run_centralized(const ClientDataset& pooled, const FedConfig& cfg,
                                    const GlobalModel& initial_model,
                                    const std::filesystem::path& out_dir = {}) {
    cfg.validate();
    detail::require_both_classes(pooled.train, "pooled train");
    detail::require_both_classes(pooled.validation, "pooled validation");

    FedConfig local_cfg = cfg;
    local_cfg.dp.enabled = false;

    FedRunResult result;
    GlobalModel model = initial_model;
    model.validate();
    const bool persist = !out_dir.empty();
    if (persist) std::filesystem::create_directories(out_dir);

    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        RngStream rng(derive_seed(cfg.seed, t, static_cast<std::uint64_t>(pooled.client_id)));
        const LayerMask mask = detail::schedule_mask(model, local_cfg, t);
        try {
            detail::train_local(model, pooled, local_cfg, mask, rng);
        } catch (const Error& e) {
            detail::annotate_rethrow(e, "centralized round " + std::to_string(t));
        }

        RoundRecord rec;
        rec.round = t;
        const double f1 = detail::validation_f1(model, pooled.validation);
        rec.client_f1.push_back(f1);
        rec.weighted_f1 = 1.0 * f1;
        rec.epsilon = std::numeric_limits<double>::infinity();
        if (f1 > result.best_f1) {
            rec.is_best = true;
            result.best_f1 = f1;
            result.best_round = t;
            result.best_model = model;
            if (persist) save_checkpoint(out_dir / "best.fckp", model);
        }
        if (persist) {
            const auto path = out_dir / ("round_" + std::to_string(t) + ".fckp");
            save_checkpoint(path, model);
            rec.checkpoint_path = path.string();
        }
        result.records.push_back(std::move(rec));
    }
    result.final_model = model;

    if (persist)
        write_text_file(out_dir / "rounds.csv",
                        round_log_csv(result.records, {pooled.client_id}));
    return result;
}

} // namespace fedcase
