#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedcase/config.hpp"
#include "fedcase/federated.hpp"
#include "fedcase/generator.hpp"
#include "fedcase/image.hpp"
#include "fedcase/metrics.hpp"
#include "fedcase/model.hpp"
#include "fedcase/pgm.hpp"
#include "fedcase/retrieval.hpp"
#include "fedcase/synth.hpp"
#include "fedcase/version.hpp"

namespace fedcase {

namespace fs = std::filesystem;

inline fs::path data_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "data"; }
inline fs::path train_dir(const RunConfig& cfg, const std::string& mode) {
    return fs::path(cfg.out_dir) / mode;
}
inline fs::path generators_dir(const RunConfig& cfg) {
    return fs::path(cfg.out_dir) / "generators";
}
inline fs::path pool_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "pool"; }
inline fs::path explain_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "explain"; }

inline nlohmann::json report_header(const RunConfig& cfg) {
    return {{"schema_version", kReportSchemaVersion},
            {"tool_version", kToolVersion},
            {"config_hash", config_hash(cfg)}};
}

// gen-data: one FCDS file per site plus the manifest sidecar.
inline void stage_gen_data(const RunConfig& cfg) {
    cfg.validate();
    const fs::path dir = data_dir(cfg);
    fs::create_directories(dir);
    for (const auto& spec : cfg.sites) {
        const auto images = generate_site(spec);
        save_dataset(dir / ("site_" + std::to_string(spec.site_id) + ".fcds"), images);
    }
    write_text_file(dir / "manifest.txt", manifest_text(cfg.sites, cfg.test_fraction));
}

inline std::vector<std::vector<LabeledImage>> load_site_images(const RunConfig& cfg) {
    std::vector<std::vector<LabeledImage>> site_images;
    for (const auto& spec : cfg.sites) {
        const fs::path path = data_dir(cfg) / ("site_" + std::to_string(spec.site_id) + ".fcds");
        if (!fs::exists(path))
            throw IoError("missing dataset file " + path.string() + " (run gen-data first)");
        site_images.push_back(load_dataset(path));
    }
    return site_images;
}

inline Corpus corpus_from_files(const RunConfig& cfg) {
    return assemble_corpus(cfg.sites, load_site_images(cfg), cfg.test_fraction,
                           cfg.fed.validation_fraction);
}

inline ClientDataset pool_clients(const Corpus& corpus) {
    ClientDataset pooled;
    pooled.client_id = 0;
    for (const auto& c : corpus.clients) {
        pooled.train.insert(pooled.train.end(), c.train.begin(), c.train.end());
        pooled.validation.insert(pooled.validation.end(), c.validation.begin(),
                                 c.validation.end());
    }
    return pooled;
}

// train: federated (Algorithm-style loop, DP per config) or centralized
// (pooled, never private). Writes round checkpoints, best.fckp and rounds.csv.
inline FedRunResult stage_train(const RunConfig& cfg, const std::string& mode) {
    cfg.validate();
    if (mode != "federated" && mode != "centralized")
        throw ConfigError("train mode must be 'federated' or 'centralized', got \"" + mode + "\"");
    const Corpus corpus = corpus_from_files(cfg);
    const GlobalModel w0 = make_model(
        static_cast<std::size_t>(kImageSize) * kImageSize, {128, 64}, cfg.seed);
    if (mode == "federated")
        return run_federated(corpus.clients, cfg.fed, w0, train_dir(cfg, mode));
    return run_centralized(pool_clients(corpus), cfg.fed, w0, train_dir(cfg, mode));
}

// fit-generators: one FGEN file per client, fitted on that client's train set.
inline void stage_fit_generators(const RunConfig& cfg) {
    cfg.validate();
    const Corpus corpus = corpus_from_files(cfg);
    fs::create_directories(generators_dir(cfg));
    for (const auto& client : corpus.clients) {
        const GeneratorModel gen = fit_generator(client, cfg.gen.latent_dim,
                                                 derive_seed(cfg.seed, 0x67656eull,
                                                             static_cast<std::uint64_t>(
                                                                 client.client_id)));
        save_generator(generators_dir(cfg) /
                           ("gen_" + std::to_string(client.client_id) + ".fgen"),
                       gen);
    }
}

// sample-pool: balanced per-client pools merged into pool.fcds plus a JSON
// sidecar mapping id -> (source client, steps, pool index).
inline std::vector<SyntheticCase> stage_sample_pool(const RunConfig& cfg) {
    cfg.validate();
    std::vector<SyntheticCase> pool;
    for (const auto& spec : cfg.sites) {
        if (&spec == &cfg.sites.back()) break; // OOD site has no generator
        const fs::path path =
            generators_dir(cfg) / ("gen_" + std::to_string(spec.site_id) + ".fgen");
        if (!fs::exists(path))
            throw IoError("missing generator file " + path.string() + " (run fit-generators)");
        const GeneratorModel gen = load_generator(path);
        auto cases = sample_pool(gen, cfg.gen.per_label, cfg.gen.steps, cfg.seed);
        pool.insert(pool.end(), cases.begin(), cases.end());
    }

    fs::create_directories(pool_dir(cfg));
    std::vector<LabeledImage> images;
    images.reserve(pool.size());
    for (const auto& sc : pool) images.push_back(sc.image);
    save_dataset(pool_dir(cfg) / "pool.fcds", images);

    nlohmann::json meta = report_header(cfg);
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& sc : pool)
        entries.push_back({{"id", sc.image.id},
                           {"source_client_id", sc.source_client_id},
                           {"sampling_steps", sc.sampling_steps},
                           {"pool_index", sc.pool_index}});
    meta["entries"] = entries;
    write_text_file(pool_dir(cfg) / "pool_meta.json", meta.dump(2) + "\n");
    return pool;
}

inline std::vector<SyntheticCase> load_pool(const RunConfig& cfg) {
    const fs::path img_path = pool_dir(cfg) / "pool.fcds";
    const fs::path meta_path = pool_dir(cfg) / "pool_meta.json";
    if (!fs::exists(img_path) || !fs::exists(meta_path))
        throw IoError("missing pool files under " + pool_dir(cfg).string() +
                      " (run sample-pool first)");
    const auto images = load_dataset(img_path);
    std::map<std::uint64_t, const LabeledImage*> by_id;
    for (const auto& img : images) by_id[img.id] = &img;

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(meta_path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(meta_path.string() + ": invalid JSON: " + e.what());
    }
    std::vector<SyntheticCase> pool;
    for (const auto& entry : meta.at("entries")) {
        SyntheticCase sc;
        const auto id = entry.at("id").get<std::uint64_t>();
        const auto it = by_id.find(id);
        if (it == by_id.end())
            throw IoError(meta_path.string() + ": entry id " + std::to_string(id) +
                          " not present in pool.fcds");
        sc.image = *it->second;
        sc.source_client_id = entry.at("source_client_id").get<int>();
        sc.sampling_steps = entry.at("sampling_steps").get<std::size_t>();
        sc.pool_index = entry.at("pool_index").get<std::size_t>();
        pool.push_back(std::move(sc));
    }
    return pool;
}

// Oracle ranking of retrieved items for one query: ascending severity
// distance, ties by ascending case id.
inline std::vector<std::uint64_t> oracle_order(const LabeledImage& query,
                                               const std::vector<RankedItem>& items,
                                               const std::vector<SyntheticCase>& pool) {
    std::map<std::uint64_t, double> severity;
    for (const auto& sc : pool) severity[sc.image.id] = sc.image.severity;
    std::vector<std::uint64_t> order;
    order.reserve(items.size());
    for (const auto& it : items) order.push_back(it.case_id);
    std::sort(order.begin(), order.end(), [&](std::uint64_t x, std::uint64_t y) {
        const double dx = std::abs(severity.at(x) - query.severity);
        const double dy = std::abs(severity.at(y) - query.severity);
        if (dx != dy) return dx < dy;
        return x < y;
    });
    return order;
}

struct QueryEvaluation {
    std::uint64_t query_id = 0;
    double ndcg_feature = 0.0;
    double ndcg_ssim = 0.0;
};

struct ExplainOutput {
    std::vector<RetrievalResult> feature_results;
    std::vector<RetrievalResult> ssim_results;
    std::vector<QueryEvaluation> evaluations;
    double mean_ndcg_feature = 0.0;
    double mean_ndcg_ssim = 0.0;
};

// Deterministic query pick from the OOD site: num_negative negatives plus
// positives up to num_queries, seeded shuffle, output sorted by id.
inline std::vector<LabeledImage> select_queries(const std::vector<LabeledImage>& ood,
                                                const EvalSettings& eval, std::uint64_t seed) {
    std::vector<std::size_t> neg, pos;
    for (std::size_t i = 0; i < ood.size(); ++i) (ood[i].label == 0 ? neg : pos).push_back(i);
    const std::size_t want_neg = eval.num_negative;
    const std::size_t want_pos = eval.num_queries - eval.num_negative;
    if (neg.size() < want_neg || pos.size() < want_pos)
        throw StateError("explain: OOD test set cannot supply " + std::to_string(want_neg) +
                         " negative + " + std::to_string(want_pos) + " positive queries");
    RngStream rng(derive_seed(seed, 0x717565727965ull));
    auto shuffle = [&rng](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_below(i))]);
    };
    shuffle(neg);
    shuffle(pos);
    std::vector<LabeledImage> queries;
    for (std::size_t i = 0; i < want_neg; ++i) queries.push_back(ood[neg[i]]);
    for (std::size_t i = 0; i < want_pos; ++i) queries.push_back(ood[pos[i]]);
    std::sort(queries.begin(), queries.end(),
              [](const LabeledImage& a, const LabeledImage& b) { return a.id < b.id; });
    return queries;
}

inline nlohmann::json items_json(const std::vector<RankedItem>& items) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& it : items)
        arr.push_back({{"case_id", it.case_id},
                       {"source_client_id", it.source_client_id},
                       {"score", it.score},
                       {"rank", it.rank}});
    return arr;
}

// explain: retrieval + nDCG-vs-oracle for seeded OOD queries, persisted as
// retrieval.json, evaluation.json and one PGM contact sheet per (query,
// method).
inline ExplainOutput stage_explain(const RunConfig& cfg) {
    cfg.validate();
    const fs::path model_path = train_dir(cfg, "federated") / "best.fckp";
    if (!fs::exists(model_path))
        throw IoError("missing model checkpoint " + model_path.string() +
                      " (run train --mode federated first)");
    const GlobalModel model = load_checkpoint(model_path);
    const std::vector<SyntheticCase> pool = load_pool(cfg);
    const Corpus corpus = corpus_from_files(cfg);
    if (corpus.test_ood.empty()) throw StateError("explain: OOD test set is empty");

    std::map<int, std::size_t> per_source;
    for (const auto& sc : pool) per_source[sc.source_client_id]++;
    if (per_source.size() < corpus.clients.size())
        std::fprintf(stderr,
                     "warning: pool covers %zu of %zu clients; results will be partial\n",
                     per_source.size(), corpus.clients.size());

    std::map<std::uint64_t, const LabeledImage*> pool_images;
    for (const auto& sc : pool) pool_images[sc.image.id] = &sc.image;

    const auto queries = select_queries(corpus.test_ood, cfg.eval, cfg.seed);

    ExplainOutput out;
    const fs::path dir = explain_dir(cfg);
    fs::create_directories(dir);
    nlohmann::json queries_json = nlohmann::json::array();
    for (const auto& query : queries) {
        RetrievalResult rf = retrieve(model, query, pool, cfg.retrieval.per_client);
        RetrievalResult rs = retrieve_ssim(model, query, pool, cfg.retrieval.per_client);

        QueryEvaluation qe;
        qe.query_id = query.id;
        qe.ndcg_feature =
            evaluate_ranking(query.id, [&] {
                std::vector<std::uint64_t> ids;
                for (const auto& it : rf.items) ids.push_back(it.case_id);
                return ids;
            }(), oracle_order(query, rf.items, pool)).ndcg_p;
        qe.ndcg_ssim =
            evaluate_ranking(query.id, [&] {
                std::vector<std::uint64_t> ids;
                for (const auto& it : rs.items) ids.push_back(it.case_id);
                return ids;
            }(), oracle_order(query, rs.items, pool)).ndcg_p;

        nlohmann::json qj = {{"query_id", query.id},
                             {"true_label", query.label},
                             {"true_severity", query.severity},
                             {"prediction",
                              {{"label", rf.predicted_label}, {"p_positive", rf.p_positive}}},
                             {"methods",
                              {{"feature_distance", {{"items", items_json(rf.items)}}},
                               {"ssim", {{"items", items_json(rs.items)}}}}}};
        queries_json.push_back(qj);

        for (const auto* res : {&rf, &rs}) {
            std::vector<LabeledImage> tiles;
            for (const auto& it : res->items) tiles.push_back(*pool_images.at(it.case_id));
            save_contact_sheet(dir / ("sheet_q" + std::to_string(query.id) + "_" +
                                      method_name(res->method) + ".pgm"),
                               query, tiles);
        }

        out.feature_results.push_back(std::move(rf));
        out.ssim_results.push_back(std::move(rs));
        out.evaluations.push_back(qe);
    }

    double sum_f = 0.0, sum_s = 0.0;
    for (const auto& qe : out.evaluations) {
        sum_f += qe.ndcg_feature;
        sum_s += qe.ndcg_ssim;
    }
    out.mean_ndcg_feature = sum_f / static_cast<double>(out.evaluations.size());
    out.mean_ndcg_ssim = sum_s / static_cast<double>(out.evaluations.size());

    nlohmann::json retrieval_json = report_header(cfg);
    retrieval_json["queries"] = queries_json;
    write_text_file(dir / "retrieval.json", retrieval_json.dump(2) + "\n");

    nlohmann::json eval_json = report_header(cfg);
    nlohmann::json per_query = nlohmann::json::array();
    for (const auto& qe : out.evaluations)
        per_query.push_back({{"query_id", qe.query_id},
                             {"ndcg_feature", qe.ndcg_feature},
                             {"ndcg_ssim", qe.ndcg_ssim}});
    eval_json["per_query"] = per_query;
    eval_json["aggregate"] = {{"mean_ndcg_feature", out.mean_ndcg_feature},
                              {"mean_ndcg_ssim", out.mean_ndcg_ssim},
                              {"queries", out.evaluations.size()}};
    write_text_file(dir / "evaluation.json", eval_json.dump(2) + "\n");
    return out;
}

inline double test_f1(const GlobalModel& model, const std::vector<LabeledImage>& images) {
    return detail::validation_f1(model, images);
}

inline double always_positive_f1(const std::vector<LabeledImage>& images) {
    std::vector<int> preds(images.size(), 1), truths;
    truths.reserve(images.size());
    for (const auto& img : images) truths.push_back(img.label);
    return f1_score(preds, truths);
}

// report: Table-1-style classification summary (plus the retrieval aggregate
// when explain has run) as report.json.
inline nlohmann::json stage_report(const RunConfig& cfg) {
    cfg.validate();
    const Corpus corpus = corpus_from_files(cfg);

    nlohmann::json report = report_header(cfg);
    nlohmann::json classification;
    for (const std::string mode : {"centralized", "federated"}) {
        const fs::path path = train_dir(cfg, mode) / "best.fckp";
        if (!fs::exists(path))
            throw IoError("missing checkpoint " + path.string() + " (run train --mode " + mode +
                          ")");
        const GlobalModel model = load_checkpoint(path);
        classification[mode] = {{"f1_in_distribution", test_f1(model, corpus.test_in)},
                                {"f1_ood", test_f1(model, corpus.test_ood)}};
    }
    classification["always_positive_baseline"] = {
        {"f1_in_distribution", always_positive_f1(corpus.test_in)},
        {"f1_ood", always_positive_f1(corpus.test_ood)}};
    report["classification"] = classification;

    const fs::path eval_path = explain_dir(cfg) / "evaluation.json";
    if (fs::exists(eval_path)) {
        const auto eval_json = nlohmann::json::parse(read_text_file(eval_path));
        report["retrieval"] = eval_json.at("aggregate");
    }
    write_text_file(fs::path(cfg.out_dir) / "report.json", report.dump(2) + "\n");
    return report;
}

} // namespace fedcase
