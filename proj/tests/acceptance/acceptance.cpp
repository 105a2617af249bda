// Acceptance suite: prints one [PASS]/[FAIL] line per criterion and exits
// nonzero if any criterion fails. Criteria 8-10 drive the real CLI binary
// (path = argv[1]) through the full pipeline.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "fedcase/config.hpp"
#include "fedcase/dp.hpp"
#include "fedcase/federated.hpp"
#include "fedcase/generator.hpp"
#include "fedcase/metrics.hpp"
#include "fedcase/model.hpp"
#include "fedcase/pipeline.hpp"
#include "fedcase/retrieval.hpp"
#include "fedcase/rng.hpp"
#include "fedcase/synth.hpp"

using namespace fedcase;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string g_cli_path;
fs::path g_work;

bool run_cli(const std::string& args) {
    const std::string log = (g_work / "cli.log").string();
    const std::string cmd = "\"" + g_cli_path + "\" " + args + " >> \"" + log + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return status != -1 && WIFEXITED(status) && WEXITSTATUS(status) == 0;
}

std::vector<LabeledImage> site_images(int id, std::size_t n, double rate, std::uint64_t seed) {
    SiteSpec spec;
    spec.site_id = id;
    spec.base_intensity = 100.0;
    spec.noise_std = 5.0;
    spec.positive_rate = rate;
    spec.n_images = n;
    spec.seed = seed;
    return generate_site(spec);
}

ClientDataset split_client(int id, std::vector<LabeledImage> images, std::size_t n_val) {
    ClientDataset c;
    c.client_id = id;
    // deterministic tail-as-validation split; generation already shuffles labels
    c.validation.assign(images.end() - static_cast<long>(n_val), images.end());
    c.train.assign(images.begin(), images.end() - static_cast<long>(n_val));
    return c;
}

std::vector<double> flatten_model(const GlobalModel& m) {
    std::vector<double> out;
    for_each_block(m, [&](const std::vector<double>& blk) {
        out.insert(out.end(), blk.begin(), blk.end());
    });
    return out;
}

std::vector<double> flatten_grads(const GradSet& g) {
    std::vector<double> out;
    for_each_block(g, [&](const std::vector<double>& blk) {
        out.insert(out.end(), blk.begin(), blk.end());
    });
    return out;
}

LabeledImage random_column_image(std::size_t dim, std::uint64_t id, std::uint8_t label,
                                 RngStream& rng) {
    LabeledImage img;
    img.id = id;
    img.label = label;
    img.severity = label == 1 ? 0.5 : 0.0;
    img.width = static_cast<std::uint16_t>(dim);
    img.height = 1;
    img.pixels.resize(dim);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(30 + rng.uniform_below(200));
    return img;
}

// --------------------------------------------------------------------------
// 1. Gradient correctness: finite differences on >= 100 random cases
// --------------------------------------------------------------------------
Criterion criterion1() {
    Criterion c;
    const auto start = std::chrono::steady_clock::now();
    RngStream meta(10101);
    int cases = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t in = 3 + meta.uniform_below(14); // <= 16
        std::vector<std::size_t> hidden = {2 + meta.uniform_below(7)};
        if (meta.uniform() < 0.5) hidden.push_back(2 + meta.uniform_below(5));
        GlobalModel m = make_model(in, hidden, meta.next_u64());

        RngStream rng(meta.next_u64());
        std::vector<LabeledImage> batch;
        const std::size_t bsz = 1 + meta.uniform_below(4);
        for (std::size_t i = 0; i < bsz; ++i)
            batch.push_back(random_column_image(in, i, i % 2 == 0 ? 0 : 1, rng));
        const ClassWeights cw{0.5 + meta.uniform(), 0.5 + meta.uniform()};

        const auto analytic = flatten_grads(
            loss_and_grads(m, batch, cw, GradMode::batch_mean).batch_mean);

        // rectifier gate pattern across the batch; finite differences are only
        // valid where the perturbation does not cross an activation kink
        auto gates = [&]() {
            std::vector<char> pattern;
            for (const auto& img : batch) {
                const auto trace = forward_trace(m, scale_pixels(img));
                for (std::size_t li = 1; li < trace.activations.size(); ++li)
                    for (double v : trace.activations[li]) pattern.push_back(v > 0.0 ? 1 : 0);
            }
            return pattern;
        };

        const double h = 1e-5;
        std::size_t idx = 0;
        for_each_block(m, [&](std::vector<double>& blk) {
            for (auto& value : blk) {
                const double orig = value;
                value = orig + h;
                const double up = loss_and_grads(m, batch, cw, GradMode::batch_mean).loss;
                const auto gates_up = gates();
                value = orig - h;
                const double down = loss_and_grads(m, batch, cw, GradMode::batch_mean).loss;
                const auto gates_down = gates();
                value = orig;
                if (gates_up != gates_down) {
                    ++idx; // kink crossed: the difference quotient is meaningless here
                    continue;
                }
                const double fd = (up - down) / (2.0 * h);
                const double denom = std::max({std::abs(fd), std::abs(analytic[idx]), 1e-8});
                c.require(std::abs(fd - analytic[idx]) / denom < 1e-4,
                          "finite-difference mismatch in case " + std::to_string(rep));
                ++idx;
            }
        });
        ++cases;
    }
    const double elapsed = seconds_since(start);
    c.require(cases >= 100, "fewer than 100 cases");
    c.require(elapsed < 10.0, "took " + std::to_string(elapsed) + " s (limit 10)");
    std::ostringstream d;
    d << cases << " cases, " << elapsed << " s";
    if (c.ok) c.detail = d.str();
    return c;
}

// --------------------------------------------------------------------------
// 2. FedAvg degeneracy: K=1, DP off -> bitwise equal to centralized
// --------------------------------------------------------------------------
Criterion criterion2() {
    Criterion c;
    const auto start = std::chrono::steady_clock::now();

    const auto images = site_images(0, 120, 0.4, 555);
    const ClientDataset client = split_client(0, images, 30);

    FedConfig cfg;
    cfg.clients = 1;
    cfg.rounds = 6;
    cfg.local_epochs = 2;
    cfg.batch_size = 8;
    cfg.finetune_after = 3;
    cfg.unfreeze_layers = 2;
    cfg.seed = 7;
    cfg.dp.enabled = false;

    const GlobalModel w0 = make_model(1024, {128, 64}, cfg.seed);
    const auto fed = run_federated({client}, cfg, w0);
    const auto cent = run_centralized(client, cfg, w0);

    c.require(serialize_checkpoint(fed.final_model) == serialize_checkpoint(cent.final_model),
              "final models differ");
    c.require(serialize_checkpoint(fed.best_model) == serialize_checkpoint(cent.best_model),
              "best models differ");
    for (std::size_t t = 0; t < cfg.rounds; ++t)
        c.require(fed.records[t].weighted_f1 == cent.records[t].weighted_f1,
                  "F1 trajectory differs at round " + std::to_string(t + 1));

    const double elapsed = seconds_since(start);
    c.require(elapsed < 30.0, "took " + std::to_string(elapsed) + " s (limit 30)");
    if (c.ok) c.detail = "bitwise equal, " + std::to_string(elapsed) + " s";
    return c;
}

// --------------------------------------------------------------------------
// 3. Aggregation suite on random <= 5-client cases
// --------------------------------------------------------------------------
Criterion criterion3() {
    Criterion c;
    const auto start = std::chrono::steady_clock::now();
    RngStream rng(30303);
    for (std::size_t k = 1; k <= 5; ++k) {
        for (int rep = 0; rep < 40; ++rep) {
            std::vector<std::size_t> sizes;
            for (std::size_t i = 0; i < k; ++i) sizes.push_back(1 + rng.uniform_below(500));
            const auto z = scaling_factors(sizes);
            double sum = 0.0;
            for (double v : z) sum += v;
            c.require(std::abs(sum - 1.0) <= 1e-12, "z does not sum to 1");

            std::vector<GlobalModel> models;
            for (std::size_t i = 0; i < k; ++i) models.push_back(make_model(5, {3}, rng.next_u64()));
            const auto agg = aggregate(models, z);

            const auto fa = flatten_model(agg);
            std::vector<std::vector<double>> fm;
            for (const auto& m : models) fm.push_back(flatten_model(m));
            for (std::size_t i = 0; i < fa.size(); ++i) {
                double lo = fm[0][i], hi = fm[0][i];
                for (const auto& f : fm) {
                    lo = std::min(lo, f[i]);
                    hi = std::max(hi, f[i]);
                }
                c.require(fa[i] >= lo && fa[i] <= hi, "coordinate left the convex hull");
            }

            const auto consensus = aggregate(std::vector<GlobalModel>(k, models[0]), z);
            c.require(serialize_checkpoint(consensus) == serialize_checkpoint(models[0]),
                      "consensus aggregation not idempotent");
        }
    }
    const double elapsed = seconds_since(start);
    c.require(elapsed < 5.0, "took " + std::to_string(elapsed) + " s (limit 5)");
    if (c.ok) c.detail = "200 cases, " + std::to_string(elapsed) + " s";
    return c;
}

// --------------------------------------------------------------------------
// 4. DP contracts: clip bound, bitwise non-private reduction, epsilon grid
// --------------------------------------------------------------------------
Criterion criterion4() {
    Criterion c;
    const auto start = std::chrono::steady_clock::now();

    // clip bound on 1000 random gradients
    RngStream rng(40404);
    GlobalModel proto = make_model(8, {5}, 1);
    for (int rep = 0; rep < 1000; ++rep) {
        GradSet g = GradSet::zeros_like(proto);
        for_each_block(g, [&](std::vector<double>& blk) {
            for (auto& v : blk) v = 8.0 * (rng.uniform() - 0.5);
        });
        const double clip = 0.05 + 2.0 * rng.uniform();
        const double norm = grad_norm(clip_gradient(g, clip));
        c.require(norm <= clip * (1.0 + 1e-12), "clipped norm exceeds C");
    }

    // sigma=0, C=inf: dp_step bitwise equals the plain optimizer step
    for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
        GlobalModel m1 = make_model(9, {6, 4}, 77);
        GlobalModel m2 = m1;
        RngStream data_rng(5);
        std::vector<LabeledImage> batch;
        for (int i = 0; i < 4; ++i)
            batch.push_back(random_column_image(9, i, i % 2 == 0 ? 0 : 1, data_rng));
        const ClassWeights cw = class_weights(batch);

        DpConfig dp;
        dp.optimizer = kind;
        dp.noise_multiplier = 0.0;
        dp.clip_norm = std::numeric_limits<double>::infinity();
        dp.learning_rate = kind == OptimizerKind::sgd ? 0.05 : 0.001;

        OptimizerState s1, s2;
        RngStream noise(1);
        const auto per = loss_and_grads(m1, batch, cw, GradMode::per_example);
        dp_step(m1, per.per_example, dp, s1, noise);
        const auto mean = loss_and_grads(m2, batch, cw, GradMode::batch_mean);
        plain_step(m2, mean.batch_mean, dp, s2, LayerMask::all(m2));
        c.require(serialize_checkpoint(m1) == serialize_checkpoint(m2),
                  std::string("non-private reduction not bitwise for ") +
                      (kind == OptimizerKind::sgd ? "sgd" : "adam"));
    }

    // epsilon: 10x10 grid vs an independently coded grid-search oracle
    const double log_inv_delta = std::log(1.0 / 1e-5);
    for (int si = 1; si <= 10; ++si) {
        const double sigma = 0.4 * si;
        double prev_steps_eps = -1.0;
        for (int ti = 0; ti < 10; ++ti) {
            const std::uint64_t steps = static_cast<std::uint64_t>(ti) * 37;
            PrivacyLedger led;
            led.sigma = sigma;
            led.delta = 1e-5;
            led.steps_taken = steps;
            const double eps = account_epsilon(led);

            double oracle = std::numeric_limits<double>::infinity();
            for (int alpha = 2; alpha <= 64; ++alpha)
                oracle = std::min(oracle, static_cast<double>(steps) * alpha /
                                              (2.0 * sigma * sigma) +
                                              log_inv_delta / (alpha - 1.0));
            c.require(std::abs(eps - oracle) <= 1e-12 * std::max(1.0, oracle),
                      "epsilon does not match the grid-search oracle");
            c.require(eps >= prev_steps_eps, "epsilon not monotone in steps");
            prev_steps_eps = eps;
        }
    }
    for (int ti = 1; ti < 10; ++ti) {
        const std::uint64_t steps = static_cast<std::uint64_t>(ti) * 37;
        double prev = std::numeric_limits<double>::infinity();
        for (int si = 1; si <= 10; ++si) {
            PrivacyLedger led;
            led.sigma = 0.4 * si;
            led.delta = 1e-5;
            led.steps_taken = steps;
            const double eps = account_epsilon(led);
            c.require(eps <= prev, "epsilon not anti-monotone in sigma");
            prev = eps;
        }
    }

    const double elapsed = seconds_since(start);
    c.require(elapsed < 10.0, "took " + std::to_string(elapsed) + " s (limit 10)");
    if (c.ok) c.detail = "clip/reduction/epsilon all hold, " + std::to_string(elapsed) + " s";
    return c;
}

// --------------------------------------------------------------------------
// 5. Freeze schedule on a non-degenerate run
// --------------------------------------------------------------------------
Criterion criterion5() {
    Criterion c;
    const auto start = std::chrono::steady_clock::now();

    std::vector<ClientDataset> clients;
    clients.push_back(split_client(0, site_images(0, 80, 0.4, 11), 20));
    clients.push_back(split_client(1, site_images(1, 60, 0.3, 22), 16));

    FedConfig cfg;
    cfg.clients = 2;
    cfg.rounds = 6;
    cfg.local_epochs = 1;
    cfg.batch_size = 8;
    cfg.finetune_after = 3;
    cfg.unfreeze_layers = 2;
    cfg.seed = 13;
    cfg.dp.noise_multiplier = 0.8;

    const GlobalModel w0 = make_model(1024, {128, 64}, 13);
    const fs::path dir = g_work / "freeze";
    fs::remove_all(dir);
    const auto result = run_federated(clients, cfg, w0, dir);

    auto backbone_bytes = [](const GlobalModel& m) {
        ByteWriter w;
        for (const auto& l : m.backbone) {
            for (double v : l.w) w.put_f64(v);
            for (double v : l.b) w.put_f64(v);
        }
        return w.bytes();
    };
    const auto base = backbone_bytes(w0);
    for (std::size_t t = 1; t <= cfg.finetune_after; ++t) {
        const auto m = load_checkpoint(dir / ("round_" + std::to_string(t) + ".fckp"));
        c.require(backbone_bytes(m) == base,
                  "backbone changed during frozen round " + std::to_string(t));
    }
    bool changed = false;
    for (std::size_t t = cfg.finetune_after + 1; t <= cfg.rounds; ++t) {
        const auto m = load_checkpoint(dir / ("round_" + std::to_string(t) + ".fckp"));
        if (backbone_bytes(m) != base) changed = true;
    }
    c.require(changed, "backbone never changed after the unfreeze round");

    const double elapsed = seconds_since(start);
    c.require(elapsed < 30.0, "took " + std::to_string(elapsed) + " s (limit 30)");
    if (c.ok) c.detail = "frozen bitwise, finetune moves, " + std::to_string(elapsed) + " s";
    return c;
}

// --------------------------------------------------------------------------
// 6. nDCG against a direct-formula oracle
// --------------------------------------------------------------------------
Criterion criterion6() {
    Criterion c;
    const auto start = std::chrono::steady_clock::now();

    // independent route: direct evaluation of the relevance map and DCG sums
    auto oracle_ndcg = [](const std::vector<std::uint64_t>& method,
                          const std::vector<std::uint64_t>& truth) {
        const std::size_t p = truth.size();
        auto rel_of_rank = [p](std::size_t rank1) {
            return 1.0 + std::floor(4.0 * static_cast<double>(p - rank1) /
                                        static_cast<double>(p - 1) +
                                    0.5);
        };
        double dcg_v = 0.0, idcg_v = 0.0;
        for (std::size_t pos = 0; pos < p; ++pos) {
            std::size_t rank = 0;
            for (std::size_t j = 0; j < p; ++j)
                if (truth[j] == method[pos]) rank = j + 1;
            dcg_v += (std::pow(2.0, rel_of_rank(rank)) - 1.0) /
                     (std::log(static_cast<double>(pos) + 2.0) / std::log(2.0));
            idcg_v += (std::pow(2.0, rel_of_rank(pos + 1)) - 1.0) /
                      (std::log(static_cast<double>(pos) + 2.0) / std::log(2.0));
        }
        return dcg_v / idcg_v;
    };

    std::vector<std::uint64_t> gt3 = {10, 20, 30};
    std::vector<std::uint64_t> perm = gt3;
    std::sort(perm.begin(), perm.end());
    int checked = 0;
    do {
        const double got = ndcg(perm, gt3);
        const double want = oracle_ndcg(perm, gt3);
        c.require(std::abs(got - want) <= 1e-12, "p=3 permutation mismatch");
        ++checked;
    } while (std::next_permutation(perm.begin(), perm.end()));
    c.require(checked == 6, "expected all 3! permutations");

    RngStream rng(60606);
    std::vector<std::uint64_t> gt9(9);
    for (std::size_t i = 0; i < 9; ++i) gt9[i] = 100 + i;
    for (int rep = 0; rep < 1000; ++rep) {
        auto method = gt9;
        for (std::size_t i = 9; i > 1; --i)
            std::swap(method[i - 1], method[rng.uniform_below(i)]);
        const double got = ndcg(method, gt9);
        c.require(std::abs(got - oracle_ndcg(method, gt9)) <= 1e-12,
                  "p=9 random permutation mismatch");
    }
    c.require(ndcg(gt9, gt9) == 1.0, "ideal order must give exactly 1.0");

    const double elapsed = seconds_since(start);
    c.require(elapsed < 5.0, "took " + std::to_string(elapsed) + " s (limit 5)");
    if (c.ok) c.detail = "6 + 1000 permutations, " + std::to_string(elapsed) + " s";
    return c;
}

// --------------------------------------------------------------------------
// 7. Retrieval selection vs brute force; SSIM self-similarity
// --------------------------------------------------------------------------
Criterion criterion7() {
    Criterion c;
    const auto start = std::chrono::steady_clock::now();

    // identity feature map (feature = scaled pixels): informative distances
    // for every image, so the test exercises pure selection logic
    GlobalModel model;
    model.input_dim = 16;
    model.hidden_dims = {16};
    model.feature_dim = 16;
    model.backbone = {Affine::zeros(16, 16)};
    for (std::size_t i = 0; i < 16; ++i) model.backbone[0].w[i * 16 + i] = 1.0;
    model.head = Affine::zeros(16, 2);
    RngStream rng(70708);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<SyntheticCase> pool;
        const std::size_t n = 12 + rng.uniform_below(12);
        for (std::size_t i = 0; i < n; ++i) {
            SyntheticCase sc;
            sc.source_client_id = static_cast<int>(i % 3);
            sc.image = random_column_image(16, kSyntheticIdBase + i,
                                           static_cast<std::uint8_t>(i % 2), rng);
            sc.image.width = 4;
            sc.image.height = 4;
            pool.push_back(std::move(sc));
        }
        LabeledImage query = random_column_image(16, 9999, 1, rng);
        query.width = 4;
        query.height = 4;

        const auto res = retrieve(model, query, pool, 3);

        struct Entry {
            std::uint64_t id;
            int client;
            double d;
        };
        std::vector<Entry> all;
        for (const auto& sc : pool)
            all.push_back(
                {sc.image.id, sc.source_client_id, feature_distance(model, query, sc.image)});
        auto better = [](const Entry& a, const Entry& b) {
            return a.d != b.d ? a.d < b.d : a.id < b.id;
        };
        std::vector<Entry> kept;
        for (int cl = 0; cl < 3; ++cl) {
            std::vector<Entry> mine;
            for (const auto& e : all)
                if (e.client == cl) mine.push_back(e);
            std::sort(mine.begin(), mine.end(), better);
            for (std::size_t i = 0; i < 3 && i < mine.size(); ++i) kept.push_back(mine[i]);
        }
        std::sort(kept.begin(), kept.end(), better);
        c.require(res.items.size() == kept.size(), "selection size differs from brute force");
        for (std::size_t i = 0; i < kept.size() && i < res.items.size(); ++i)
            c.require(res.items[i].case_id == kept[i].id, "selection differs from brute force");
    }

    // query-in-pool and exact SSIM self-similarity
    {
        std::vector<SyntheticCase> pool;
        for (std::size_t i = 0; i < 9; ++i) {
            SyntheticCase sc;
            sc.source_client_id = static_cast<int>(i % 3);
            sc.image = random_column_image(16, kSyntheticIdBase + 100 + i,
                                           static_cast<std::uint8_t>(i % 2), rng);
            sc.image.width = 4;
            sc.image.height = 4;
            pool.push_back(std::move(sc));
        }
        LabeledImage query = pool[4].image;
        query.id = 1;
        SyntheticCase self;
        self.source_client_id = 2;
        self.image = query;
        self.image.id = kSyntheticIdBase + 999;
        pool.push_back(self);
        const auto res = retrieve(model, query, pool, 3);
        c.require(!res.items.empty() && res.items[0].case_id == self.image.id &&
                      res.items[0].score == 0.0,
                  "query copy must rank first at distance zero");
    }
    for (int rep = 0; rep < 5; ++rep) {
        SiteSpec spec;
        spec.site_id = rep;
        spec.positive_rate = 0.5;
        spec.n_images = 1;
        spec.seed = 900 + rep;
        const auto imgs = generate_site(spec);
        c.require(ssim(imgs[0], imgs[0]) == 1.0, "SSIM(x,x) must be exactly 1");
    }

    const double elapsed = seconds_since(start);
    c.require(elapsed < 10.0, "took " + std::to_string(elapsed) + " s (limit 10)");
    if (c.ok) c.detail = "200 pools match brute force, " + std::to_string(elapsed) + " s";
    return c;
}

// --------------------------------------------------------------------------
// 8-10: full pipeline through the CLI
// --------------------------------------------------------------------------
struct PipelineArtifacts {
    fs::path config_file;
    fs::path out1;
    fs::path out2;
    double train_seconds = 0.0;
    double pipeline_seconds = 0.0;
    bool ran = false;
};

PipelineArtifacts g_pipeline;

bool run_pipeline_into(const fs::path& out, double* train_seconds, double* pipeline_seconds) {
    const std::string base =
        "--config \"" + g_pipeline.config_file.string() + "\" --out \"" + out.string() + "\"";
    const auto t0 = std::chrono::steady_clock::now();
    if (!run_cli("gen-data " + base)) return false;
    const auto t1 = std::chrono::steady_clock::now();
    if (!run_cli("train --mode federated " + base)) return false;
    const auto t2 = std::chrono::steady_clock::now();
    if (!run_cli("train --mode centralized " + base)) return false;
    const auto t3 = std::chrono::steady_clock::now();
    if (!run_cli("fit-generators " + base)) return false;
    if (!run_cli("sample-pool " + base)) return false;
    if (!run_cli("explain " + base)) return false;
    if (!run_cli("report " + base)) return false;
    const auto t4 = std::chrono::steady_clock::now();
    if (train_seconds)
        *train_seconds = std::chrono::duration<double>(t3 - t1).count();
    if (pipeline_seconds) // gen-data + federated training + explanation stages
        *pipeline_seconds = std::chrono::duration<double>(t1 - t0).count() +
                            std::chrono::duration<double>(t2 - t1).count() +
                            std::chrono::duration<double>(t4 - t3).count();
    return true;
}

bool ensure_pipeline() {
    if (g_pipeline.ran) return true;
    g_pipeline.config_file = g_work / "acceptance.cfg";
    g_pipeline.out1 = g_work / "run1";
    g_pipeline.out2 = g_work / "run2";
    fs::remove_all(g_pipeline.out1);
    fs::remove_all(g_pipeline.out2);

    // default corpus at seed 7; >= 20 OOD queries for the retrieval analog
    write_text_file(g_pipeline.config_file,
                    "seed = 7\n"
                    "eval.num_queries = 25\n"
                    "eval.num_negative = 5\n");

    if (!run_pipeline_into(g_pipeline.out1, &g_pipeline.train_seconds,
                           &g_pipeline.pipeline_seconds))
        return false;
    g_pipeline.ran = true;
    return true;
}

Criterion criterion8() {
    Criterion c;
    if (!ensure_pipeline()) {
        c.require(false, "pipeline run failed (see cli.log)");
        return c;
    }
    const auto report =
        nlohmann::json::parse(read_text_file(g_pipeline.out1 / "report.json"));
    const double cent = report.at("classification").at("centralized").at("f1_in_distribution");
    const double fed = report.at("classification").at("federated").at("f1_in_distribution");
    const double base =
        report.at("classification").at("always_positive_baseline").at("f1_in_distribution");

    c.require(cent >= fed, "centralized F1 below federated F1");
    c.require(fed >= base + 0.1, "federated F1 does not beat the always-positive baseline by 0.1");
    c.require(cent >= base + 0.1,
              "centralized F1 does not beat the always-positive baseline by 0.1");
    c.require(g_pipeline.train_seconds < 180.0,
              "training took " + std::to_string(g_pipeline.train_seconds) + " s (limit 180)");
    std::ostringstream d;
    d << "centralized " << cent << " >= federated " << fed << " >= baseline+0.1 (" << base
      << " + 0.1), train " << g_pipeline.train_seconds << " s";
    if (c.ok) c.detail = d.str();
    return c;
}

Criterion criterion9() {
    Criterion c;
    if (!ensure_pipeline()) {
        c.require(false, "pipeline run failed (see cli.log)");
        return c;
    }
    const auto eval =
        nlohmann::json::parse(read_text_file(g_pipeline.out1 / "explain" / "evaluation.json"));
    const auto queries = eval.at("per_query").size();
    const double mean_f = eval.at("aggregate").at("mean_ndcg_feature");
    const double mean_s = eval.at("aggregate").at("mean_ndcg_ssim");

    c.require(queries >= 20, "need >= 20 OOD queries, got " + std::to_string(queries));
    c.require(mean_f > mean_s, "feature retrieval does not beat SSIM on mean nDCG@9");
    c.require(g_pipeline.pipeline_seconds < 300.0,
              "pipeline took " + std::to_string(g_pipeline.pipeline_seconds) + " s (limit 300)");
    std::ostringstream d;
    d << queries << " queries, mean nDCG@9 feature " << mean_f << " > ssim " << mean_s
      << ", pipeline " << g_pipeline.pipeline_seconds << " s";
    if (c.ok) c.detail = d.str();
    return c;
}

Criterion criterion10() {
    Criterion c;
    if (!ensure_pipeline()) {
        c.require(false, "pipeline run failed (see cli.log)");
        return c;
    }
    if (!run_pipeline_into(g_pipeline.out2, nullptr, nullptr)) {
        c.require(false, "second pipeline run failed (see cli.log)");
        return c;
    }
    const std::vector<std::string> files = {
        "data/site_0.fcds",        "data/site_1.fcds",
        "data/site_2.fcds",        "data/site_3.fcds",
        "data/manifest.txt",       "federated/best.fckp",
        "federated/rounds.csv",    "centralized/best.fckp",
        "centralized/rounds.csv",  "generators/gen_0.fgen",
        "pool/pool.fcds",          "pool/pool_meta.json",
        "explain/retrieval.json",  "explain/evaluation.json",
        "report.json",
    };
    for (const auto& rel : files) {
        const auto a = read_file(g_pipeline.out1 / rel);
        const auto b = read_file(g_pipeline.out2 / rel);
        c.require(a == b, rel + " differs between identical runs");
    }
    if (c.ok) c.detail = std::to_string(files.size()) + " artifacts byte-identical";
    return c;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: fedcase_acceptance <path-to-fedcase-cli>\n");
        return 2;
    }
    g_cli_path = argv[1];
    g_work = fs::temp_directory_path() / "fedcase_acceptance";
    fs::create_directories(g_work);
    fs::remove(g_work / "cli.log");

    const std::vector<std::pair<std::string, std::function<Criterion()>>> criteria = {
        {"gradient correctness vs finite differences", criterion1},
        {"FedAvg degeneracy (K=1, DP off) is bitwise centralized", criterion2},
        {"aggregation: z sums, hull containment, consensus idempotence", criterion3},
        {"DP contracts: clip bound, non-private reduction, epsilon grid", criterion4},
        {"freeze schedule: frozen bitwise, finetune moves", criterion5},
        {"nDCG matches the direct-formula oracle", criterion6},
        {"retrieval matches brute force; SSIM(x,x)=1", criterion7},
        {"directional classification analog (centralized >= federated >= baseline+0.1)",
         criterion8},
        {"directional retrieval analog (feature nDCG > SSIM nDCG on >= 20 queries)", criterion9},
        {"end-to-end determinism: byte-identical artifacts", criterion10},
    };

    bool all_ok = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Criterion result;
        try {
            result = criteria[i].second();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail = std::string("unexpected exception: ") + e.what();
        }
        std::printf("[%s] criterion %zu: %s%s%s\n", result.ok ? "PASS" : "FAIL", i + 1,
                    criteria[i].first.c_str(), result.detail.empty() ? "" : " — ",
                    result.detail.c_str());
        std::fflush(stdout);
        all_ok = all_ok && result.ok;
    }
    return all_ok ? 0 : 1;
}
