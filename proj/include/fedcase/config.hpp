#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedcase/binio.hpp"
#include "fedcase/errors.hpp"
#include "fedcase/federated.hpp"
#include "fedcase/synth.hpp"

namespace fedcase {

struct GeneratorSettings {
    std::size_t latent_dim = 16; // r
    std::size_t per_label = 200;
    std::size_t steps = 150;

    void validate() const {
        if (latent_dim < 1) throw ConfigError("gen.latent_dim: must be >= 1");
        if (per_label < 1) throw ConfigError("gen.per_label: must be >= 1");
        if (steps < 1) throw ConfigError("gen.steps: must be >= 1");
    }
};

struct RetrievalSettings {
    std::size_t per_client = 3;

    void validate() const {
        if (per_client < 1) throw ConfigError("retrieval.per_client: must be >= 1");
    }
};

struct EvalSettings {
    std::size_t p = 9;           // ranking depth for nDCG
    std::size_t num_queries = 5; // from the OOD test set
    std::size_t num_negative = 1;

    void validate() const {
        if (p < 2) throw ConfigError("eval.p: must be >= 2");
        if (num_queries < 1) throw ConfigError("eval.num_queries: must be >= 1");
        if (num_negative >= num_queries)
            throw ConfigError("eval.num_negative: must be < eval.num_queries");
    }
};

// The whole experiment in one value; a flat dotted-key file overrides the
// defaults below.
struct RunConfig {
    std::uint64_t seed = 7;
    std::string out_dir = "out";
    std::vector<SiteSpec> sites; // last entry is the OOD site
    double test_fraction = 0.2;
    FedConfig fed;
    GeneratorSettings gen;
    RetrievalSettings retrieval;
    EvalSettings eval;

    void validate() const {
        if (sites.size() < 2) throw ConfigError("corpus.sites: need >= 2 (clients + OOD)");
        for (const auto& s : sites) s.validate();
        if (!(test_fraction > 0.0 && test_fraction < 1.0))
            throw ConfigError("corpus.test_fraction: must be in (0,1)");
        fed.validate();
        gen.validate();
        retrieval.validate();
        eval.validate();
        if (fed.clients != sites.size() - 1)
            throw ConfigError("fed.clients: must equal corpus.sites - 1 (the OOD site never trains)");
    }
};

// Three unequal client sites plus a shifted OOD site; sizes and positive
// rates deliberately differ so scaling factors and class weights matter.
inline RunConfig default_config() {
    RunConfig cfg;
    cfg.seed = 7;
    auto site = [&cfg](int id, std::size_t n, double base, double noise, double rate, int dx,
                       int dy, double crop) {
        SiteSpec s;
        s.site_id = id;
        s.n_images = n;
        s.base_intensity = base;
        s.noise_std = noise;
        s.positive_rate = rate;
        s.blob_dx = dx;
        s.blob_dy = dy;
        s.crop_probability = crop;
        s.seed = derive_seed(cfg.seed, 0x63727073ull, static_cast<std::uint64_t>(id));
        return s;
    };
    cfg.sites = {
        site(0, 600, 90.0, 4.0, 0.40, -3, 0, 0.10),
        site(1, 400, 105.0, 6.0, 0.25, 2, 1, 0.15),
        site(2, 200, 120.0, 8.0, 0.15, 0, 2, 0.20),
        site(3, 200, 50.0, 12.0, 0.30, 3, -1, 0.25), // OOD
    };
    cfg.fed.clients = 3;
    return cfg;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

class KeyValueFile {
public:
    static KeyValueFile parse(const std::string& text, const std::string& origin) {
        KeyValueFile kv;
        kv.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got \"" + line + "\"");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            if (kv.values_.count(key))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key \"" +
                                  key + "\"");
            kv.values_[key] = value;
        }
        return kv;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    double get_double(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        mark(key);
        const std::string& v = values_.at(key);
        try {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key \"" + key + "\": not a number: \"" + v + "\"");
        }
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) return fallback;
        mark(key);
        const std::string& v = values_.at(key);
        std::uint64_t x = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc() || ptr != v.data() + v.size())
            throw ConfigError(origin_ + ": key \"" + key + "\": not a non-negative integer: \"" +
                              v + "\"");
        return x;
    }

    long get_int(const std::string& key, long fallback) {
        if (!has(key)) return fallback;
        mark(key);
        const std::string& v = values_.at(key);
        long x = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc() || ptr != v.data() + v.size())
            throw ConfigError(origin_ + ": key \"" + key + "\": not an integer: \"" + v + "\"");
        return x;
    }

    bool get_bool(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        mark(key);
        const std::string& v = values_.at(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError(origin_ + ": key \"" + key + "\": expected true/false, got \"" + v +
                          "\"");
    }

    std::string get_string(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        mark(key);
        return values_.at(key);
    }

    void check_all_consumed() const {
        for (const auto& [key, value] : values_)
            if (!consumed_.count(key))
                throw ConfigError(origin_ + ": unknown key \"" + key + "\"");
    }

private:
    void mark(const std::string& key) { consumed_.insert(key); }
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
    std::string origin_;
};

} // namespace detail

inline RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    auto kv = detail::KeyValueFile::parse(text, origin);
    RunConfig cfg = default_config();

    cfg.seed = kv.get_u64("seed", cfg.seed);
    cfg.out_dir = kv.get_string("out", cfg.out_dir);
    cfg.test_fraction = kv.get_double("corpus.test_fraction", cfg.test_fraction);

    const auto n_sites = static_cast<std::size_t>(kv.get_u64("corpus.sites", cfg.sites.size()));
    if (n_sites < 2) throw ConfigError(origin + ": corpus.sites: need >= 2");
    // default site table only covers the stock layout; extra sites start from
    // a neutral template
    while (cfg.sites.size() < n_sites) {
        SiteSpec s;
        s.site_id = static_cast<int>(cfg.sites.size());
        cfg.sites.push_back(s);
    }
    cfg.sites.resize(n_sites);
    for (std::size_t i = 0; i < cfg.sites.size(); ++i) {
        auto& s = cfg.sites[i];
        const std::string p = "corpus.site" + std::to_string(i) + ".";
        s.site_id = static_cast<int>(kv.get_int(p + "site_id", s.site_id));
        s.n_images = static_cast<std::size_t>(kv.get_u64(p + "n_images", s.n_images));
        s.base_intensity = kv.get_double(p + "base_intensity", s.base_intensity);
        s.noise_std = kv.get_double(p + "noise_std", s.noise_std);
        s.positive_rate = kv.get_double(p + "positive_rate", s.positive_rate);
        s.blob_dx = static_cast<int>(kv.get_int(p + "blob_dx", s.blob_dx));
        s.blob_dy = static_cast<int>(kv.get_int(p + "blob_dy", s.blob_dy));
        s.crop_probability = kv.get_double(p + "crop_probability", s.crop_probability);
        s.seed = kv.get_u64(p + "seed", derive_seed(cfg.seed, 0x63727073ull,
                                                    static_cast<std::uint64_t>(s.site_id)));
    }

    cfg.fed.clients = static_cast<std::size_t>(kv.get_u64("fed.clients", n_sites - 1));
    cfg.fed.rounds = static_cast<std::size_t>(kv.get_u64("fed.rounds", cfg.fed.rounds));
    cfg.fed.local_epochs =
        static_cast<std::size_t>(kv.get_u64("fed.local_epochs", cfg.fed.local_epochs));
    cfg.fed.batch_size = static_cast<std::size_t>(kv.get_u64("fed.batch_size", cfg.fed.batch_size));
    cfg.fed.finetune_after =
        static_cast<std::size_t>(kv.get_u64("fed.finetune_after", cfg.fed.finetune_after));
    cfg.fed.unfreeze_layers =
        static_cast<std::size_t>(kv.get_u64("fed.unfreeze_layers", cfg.fed.unfreeze_layers));
    cfg.fed.validation_fraction =
        kv.get_double("fed.validation_fraction", cfg.fed.validation_fraction);
    cfg.fed.seed = cfg.seed;

    cfg.fed.dp.enabled = kv.get_bool("dp.enabled", cfg.fed.dp.enabled);
    cfg.fed.dp.clip_norm = kv.get_double("dp.clip_norm", cfg.fed.dp.clip_norm);
    cfg.fed.dp.noise_multiplier = kv.get_double("dp.sigma", cfg.fed.dp.noise_multiplier);
    cfg.fed.dp.delta = kv.get_double("dp.delta", cfg.fed.dp.delta);
    const std::string opt = kv.get_string("dp.optimizer", "sgd");
    if (opt == "sgd") cfg.fed.dp.optimizer = OptimizerKind::sgd;
    else if (opt == "adam") cfg.fed.dp.optimizer = OptimizerKind::adam;
    else throw ConfigError(origin + ": dp.optimizer: expected sgd or adam, got \"" + opt + "\"");
    const double default_lr = cfg.fed.dp.optimizer == OptimizerKind::sgd ? 0.05 : 0.001;
    cfg.fed.dp.learning_rate = kv.get_double("dp.learning_rate", default_lr);
    cfg.fed.dp.beta1 = kv.get_double("dp.adam_beta1", cfg.fed.dp.beta1);
    cfg.fed.dp.beta2 = kv.get_double("dp.adam_beta2", cfg.fed.dp.beta2);
    cfg.fed.dp.adam_eps = kv.get_double("dp.adam_eps", cfg.fed.dp.adam_eps);

    cfg.gen.latent_dim = static_cast<std::size_t>(kv.get_u64("gen.latent_dim", cfg.gen.latent_dim));
    cfg.gen.per_label = static_cast<std::size_t>(kv.get_u64("gen.per_label", cfg.gen.per_label));
    cfg.gen.steps = static_cast<std::size_t>(kv.get_u64("gen.steps", cfg.gen.steps));

    cfg.retrieval.per_client =
        static_cast<std::size_t>(kv.get_u64("retrieval.per_client", cfg.retrieval.per_client));

    cfg.eval.p = static_cast<std::size_t>(kv.get_u64("eval.p", cfg.eval.p));
    cfg.eval.num_queries =
        static_cast<std::size_t>(kv.get_u64("eval.num_queries", cfg.eval.num_queries));
    cfg.eval.num_negative =
        static_cast<std::size_t>(kv.get_u64("eval.num_negative", cfg.eval.num_negative));

    kv.check_all_consumed();
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    return parse_config_text(read_text_file(path), path.string());
}

// Canonical serialization; reports embed the FNV-1a hash of this text so a
// result file pins the exact configuration that produced it.
inline std::string canonical_config_text(const RunConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "corpus.sites = " << cfg.sites.size() << "\n";
    out << "corpus.test_fraction = " << cfg.test_fraction << "\n";
    for (std::size_t i = 0; i < cfg.sites.size(); ++i) {
        const auto& s = cfg.sites[i];
        const std::string p = "corpus.site" + std::to_string(i) + ".";
        out << p << "base_intensity = " << s.base_intensity << "\n";
        out << p << "blob_dx = " << s.blob_dx << "\n";
        out << p << "blob_dy = " << s.blob_dy << "\n";
        out << p << "crop_probability = " << s.crop_probability << "\n";
        out << p << "n_images = " << s.n_images << "\n";
        out << p << "noise_std = " << s.noise_std << "\n";
        out << p << "positive_rate = " << s.positive_rate << "\n";
        out << p << "seed = " << s.seed << "\n";
        out << p << "site_id = " << s.site_id << "\n";
    }
    out << "dp.adam_beta1 = " << cfg.fed.dp.beta1 << "\n";
    out << "dp.adam_beta2 = " << cfg.fed.dp.beta2 << "\n";
    out << "dp.adam_eps = " << cfg.fed.dp.adam_eps << "\n";
    out << "dp.clip_norm = " << cfg.fed.dp.clip_norm << "\n";
    out << "dp.delta = " << cfg.fed.dp.delta << "\n";
    out << "dp.enabled = " << (cfg.fed.dp.enabled ? "true" : "false") << "\n";
    out << "dp.learning_rate = " << cfg.fed.dp.learning_rate << "\n";
    out << "dp.optimizer = " << (cfg.fed.dp.optimizer == OptimizerKind::sgd ? "sgd" : "adam")
        << "\n";
    out << "dp.sigma = " << cfg.fed.dp.noise_multiplier << "\n";
    out << "eval.num_negative = " << cfg.eval.num_negative << "\n";
    out << "eval.num_queries = " << cfg.eval.num_queries << "\n";
    out << "eval.p = " << cfg.eval.p << "\n";
    out << "fed.batch_size = " << cfg.fed.batch_size << "\n";
    out << "fed.clients = " << cfg.fed.clients << "\n";
    out << "fed.finetune_after = " << cfg.fed.finetune_after << "\n";
    out << "fed.local_epochs = " << cfg.fed.local_epochs << "\n";
    out << "fed.rounds = " << cfg.fed.rounds << "\n";
    out << "fed.unfreeze_layers = " << cfg.fed.unfreeze_layers << "\n";
    out << "fed.validation_fraction = " << cfg.fed.validation_fraction << "\n";
    out << "gen.latent_dim = " << cfg.gen.latent_dim << "\n";
    out << "gen.per_label = " << cfg.gen.per_label << "\n";
    out << "gen.steps = " << cfg.gen.steps << "\n";
    out << "retrieval.per_client = " << cfg.retrieval.per_client << "\n";
    out << "seed = " << cfg.seed << "\n";
    return out.str();
}

inline std::string config_hash(const RunConfig& cfg) {
    const std::string text = canonical_config_text(cfg);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << h;
    return out.str();
}

} // namespace fedcase
