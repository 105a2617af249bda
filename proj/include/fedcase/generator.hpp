#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedcase/binio.hpp"
#include "fedcase/errors.hpp"
#include "fedcase/federated.hpp"
#include "fedcase/image.hpp"
#include "fedcase/rng.hpp"
#include "fedcase/synth.hpp"

namespace fedcase {

constexpr std::uint64_t kSyntheticIdBase = 1ull << 62;
constexpr std::uint32_t kGeneratorFormatVersion = 1;

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major,
// destroyed). Eigenpairs come back sorted by descending eigenvalue;
// eigenvectors are the columns of `vecs`. Deterministic: fixed sweep order,
// no pivot search.
inline void jacobi_eigen_symmetric(std::vector<double>& a, std::size_t n,
                                   std::vector<double>& values, std::vector<double>& vecs) {
    vecs.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;

    double fro = 0.0;
    for (double v : a) fro += v * v;
    const double off_tol = 1e-30 * std::max(fro, 1e-300);

    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a[p * n + q] * a[p * n + q];
        if (off <= off_tol) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (i == p || i == q) continue;
                    const double aip = a[i * n + p];
                    const double aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[p * n + i] = a[i * n + p];
                    a[i * n + q] = s * aip + c * aiq;
                    a[q * n + i] = a[i * n + q];
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = vecs[i * n + p];
                    const double viq = vecs[i * n + q];
                    vecs[i * n + p] = c * vip - s * viq;
                    vecs[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    values.resize(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a[i * n + i];

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return values[x] > values[y]; });
    std::vector<double> sorted_vals(n);
    std::vector<double> sorted_vecs(n * n);
    for (std::size_t j = 0; j < n; ++j) {
        sorted_vals[j] = values[order[j]];
        for (std::size_t i = 0; i < n; ++i) sorted_vecs[i * n + j] = vecs[i * n + order[j]];
    }
    values = std::move(sorted_vals);
    vecs = std::move(sorted_vecs);
}

// Diagonal Gaussian over the latent coordinates of one class.
struct ClassStats {
    std::vector<double> mean;
    std::vector<double> variance;
};

// Two-stage per-client generator: a linear latent basis over the client's
// images (the representation stage) and a class-conditional Gaussian in that
// latent space (the sampler stage). Dimensions with negligible spectrum mass
// are dropped, so r_effective <= r_requested.
struct GeneratorModel {
    int client_id = 0;
    std::size_t r_requested = 0;
    std::size_t r_effective = 0;
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    std::vector<double> mean_image;          // d, in [0,1] scale
    std::vector<double> basis;               // r_effective x d, rows orthonormal
    std::array<ClassStats, 2> class_stats;
    std::uint64_t seed = 0;
    bool fitted = false;

    std::size_t dim() const { return static_cast<std::size_t>(width) * height; }
};

// The pool unit: one generated image plus its provenance.
struct SyntheticCase {
    LabeledImage image;
    int source_client_id = 0;
    std::size_t sampling_steps = 0;
    std::size_t pool_index = 0;
};

// PCA via the Gram matrix (n x n, cheaper than d x d for desk-scale sites):
// eigenvectors v of (Xc Xc^T)/n map to input-space directions Xc^T v, which
// are then re-orthonormalized and sign-fixed for determinism.
inline GeneratorModel fit_generator(const ClientDataset& data, std::size_t r, std::uint64_t seed) {
    const auto& imgs = data.train;
    if (imgs.empty()) throw StateError("fit_generator: empty client dataset");
    detail::require_both_classes(imgs, "fit_generator client " + std::to_string(data.client_id));
    const std::size_t n = imgs.size();
    if (n < r)
        throw StateError("fit_generator: client " + std::to_string(data.client_id) + " has " +
                         std::to_string(n) + " images, need >= r = " + std::to_string(r));
    if (r == 0) throw StateError("fit_generator: latent dimension must be >= 1");

    const std::size_t d = imgs.front().pixel_count();
    GeneratorModel gen;
    gen.client_id = data.client_id;
    gen.r_requested = r;
    gen.width = imgs.front().width;
    gen.height = imgs.front().height;
    gen.seed = seed;

    std::vector<double> x(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        if (imgs[i].pixel_count() != d) throw ShapeError("fit_generator: image size mismatch");
        for (std::size_t j = 0; j < d; ++j) x[i * d + j] = imgs[i].pixels[j] / 255.0;
    }
    gen.mean_image.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gen.mean_image[j] += x[i * d + j];
    for (auto& v : gen.mean_image) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) x[i * d + j] -= gen.mean_image[j];

    std::vector<double> gram(n * n);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b < n; ++b) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += x[a * d + j] * x[b * d + j];
            acc /= static_cast<double>(n);
            gram[a * n + b] = acc;
            gram[b * n + a] = acc;
        }

    std::vector<double> eigvals, eigvecs;
    jacobi_eigen_symmetric(gram, n, eigvals, eigvecs);

    const double lambda_floor = std::max(1e-12 * std::max(eigvals.front(), 0.0), 1e-15);
    std::size_t r_eff = 0;
    while (r_eff < r && r_eff < n && eigvals[r_eff] > lambda_floor) ++r_eff;
    if (r_eff == 0) throw StateError("fit_generator: degenerate data, no spectral mass");
    gen.r_effective = r_eff;

    gen.basis.assign(r_eff * d, 0.0);
    for (std::size_t k = 0; k < r_eff; ++k) {
        double* u = gen.basis.data() + k * d;
        for (std::size_t i = 0; i < n; ++i) {
            const double vi = eigvecs[i * n + k];
            if (vi == 0.0) continue;
            const double* xi = x.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) u[j] += vi * xi[j];
        }
        // modified Gram-Schmidt against earlier directions
        for (std::size_t prev = 0; prev < k; ++prev) {
            const double* up = gen.basis.data() + prev * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += u[j] * up[j];
            for (std::size_t j = 0; j < d; ++j) u[j] -= dot * up[j];
        }
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) norm += u[j] * u[j];
        norm = std::sqrt(norm);
        if (!(norm > 0.0)) throw NumericError("fit_generator: rank collapse during basis build");
        for (std::size_t j = 0; j < d; ++j) u[j] /= norm;
        // deterministic sign: largest-magnitude coordinate positive
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::abs(u[j]) > std::abs(u[arg])) arg = j;
        if (u[arg] < 0.0)
            for (std::size_t j = 0; j < d; ++j) u[j] = -u[j];
    }

    // class-conditional latent statistics (population variance)
    std::array<std::vector<std::vector<double>>, 2> latents;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> y(r_eff, 0.0);
        const double* xi = x.data() + i * d;
        for (std::size_t k = 0; k < r_eff; ++k) {
            const double* u = gen.basis.data() + k * d;
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += u[j] * xi[j];
            y[k] = acc;
        }
        latents[imgs[i].label].push_back(std::move(y));
    }
    for (int c = 0; c < 2; ++c) {
        const auto& ys = latents[c];
        ClassStats st;
        st.mean.assign(r_eff, 0.0);
        st.variance.assign(r_eff, 0.0);
        for (const auto& y : ys)
            for (std::size_t k = 0; k < r_eff; ++k) st.mean[k] += y[k];
        for (auto& v : st.mean) v /= static_cast<double>(ys.size());
        for (const auto& y : ys)
            for (std::size_t k = 0; k < r_eff; ++k) {
                const double dlt = y[k] - st.mean[k];
                st.variance[k] += dlt * dlt;
            }
        for (auto& v : st.variance) v /= static_cast<double>(ys.size());
        gen.class_stats[c] = std::move(st);
    }
    gen.fitted = true;
    return gen;
}

inline std::vector<std::uint8_t> decode_latent(const GeneratorModel& gen,
                                               const std::vector<double>& latent) {
    const std::size_t d = gen.dim();
    std::vector<double> img = gen.mean_image;
    for (std::size_t k = 0; k < gen.r_effective; ++k) {
        const double* u = gen.basis.data() + k * d;
        const double yk = latent[k];
        if (yk == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) img[j] += yk * u[j];
    }
    std::vector<std::uint8_t> pixels(d);
    for (std::size_t j = 0; j < d; ++j) {
        const long q = std::lround(img[j] * 255.0);
        pixels[j] = static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
    }
    return pixels;
}

// Draws a balanced pool: per_label cases of each class. Each sample walks
// from the class mean to (mean + sigma*eps) in `steps` equal fractional
// updates; the step count mirrors diffusion-style sampling interfaces and is
// recorded per case. Severity of positives is estimated with the blob
// oracle, negatives carry severity 0.
inline std::vector<SyntheticCase> sample_pool(const GeneratorModel& gen, std::size_t per_label,
                                              std::size_t steps, std::uint64_t seed,
                                              const BlobCalibration& calib = {}) {
    if (!gen.fitted) throw StateError("sample_pool: generator not fitted");
    if (per_label < 1) throw StateError("sample_pool: per_label must be >= 1");
    if (steps < 1) throw StateError("sample_pool: steps must be >= 1");

    RngStream rng(derive_seed(seed, 0x706f6f6cull, static_cast<std::uint64_t>(gen.client_id)));
    std::vector<SyntheticCase> pool;
    pool.reserve(2 * per_label);
    std::size_t pool_index = 0;
    for (int label = 0; label <= 1; ++label) {
        const ClassStats& st = gen.class_stats[label];
        for (std::size_t s = 0; s < per_label; ++s) {
            std::vector<double> target(gen.r_effective);
            for (std::size_t k = 0; k < gen.r_effective; ++k)
                target[k] = std::sqrt(st.variance[k]) * rng.gaussian();
            std::vector<double> latent = st.mean;
            for (std::size_t step = 0; step < steps; ++step)
                for (std::size_t k = 0; k < gen.r_effective; ++k)
                    latent[k] += target[k] / static_cast<double>(steps);

            SyntheticCase sc;
            sc.source_client_id = gen.client_id;
            sc.sampling_steps = steps;
            sc.pool_index = pool_index;
            sc.image.id = kSyntheticIdBase +
                          (static_cast<std::uint64_t>(gen.client_id) << 20) + pool_index;
            sc.image.label = static_cast<std::uint8_t>(label);
            sc.image.width = gen.width;
            sc.image.height = gen.height;
            sc.image.pixels = decode_latent(gen, latent);
            sc.image.severity = label == 1 ? estimate_severity(sc.image, calib) : 0.0;
            pool.push_back(std::move(sc));
            ++pool_index;
        }
    }
    return pool;
}

// ---------------------------------------------------------------------------
// Generator file ("FGEN"): magic | version u32 | client_id u32 | width u16 |
// height u16 | r_requested u32 | r_effective u32 | seed u64 | mean f64[d] |
// basis f64[r_eff*d] | per class (mean f64[r_eff], variance f64[r_eff]) |
// crc32 over everything after the magic.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> serialize_generator(const GeneratorModel& gen) {
    if (!gen.fitted) throw StateError("serialize_generator: generator not fitted");
    ByteWriter w;
    w.put_magic("FGEN");
    w.put_u32(kGeneratorFormatVersion);
    w.put_u32(static_cast<std::uint32_t>(gen.client_id));
    w.put_u16(gen.width);
    w.put_u16(gen.height);
    w.put_u32(static_cast<std::uint32_t>(gen.r_requested));
    w.put_u32(static_cast<std::uint32_t>(gen.r_effective));
    w.put_u64(gen.seed);
    for (double v : gen.mean_image) w.put_f64(v);
    for (double v : gen.basis) w.put_f64(v);
    for (const auto& st : gen.class_stats) {
        for (double v : st.mean) w.put_f64(v);
        for (double v : st.variance) w.put_f64(v);
    }
    const std::uint32_t crc = crc32(w.bytes(), 4);
    ByteWriter out;
    out.put_bytes(w.bytes().data(), w.size());
    out.put_u32(crc);
    return out.bytes();
}

inline GeneratorModel deserialize_generator(const std::vector<std::uint8_t>& bytes,
                                            const std::string& name = "<buffer>") {
    if (bytes.size() < 8) throw IoError(name + ": too short for a generator file");
    const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                 static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                                 static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                                 static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
    if (stored != crc32(bytes.data() + 4, bytes.size() - 8))
        throw IoError(name + ": CRC mismatch, generator file corrupted");
    ByteReader r(bytes.data(), bytes.size() - 4, name);
    r.expect_magic("FGEN");
    const std::uint32_t version = r.get_u32();
    if (version != kGeneratorFormatVersion)
        throw IoError(name + ": unsupported generator version " + std::to_string(version));
    GeneratorModel gen;
    gen.client_id = static_cast<int>(r.get_u32());
    gen.width = r.get_u16();
    gen.height = r.get_u16();
    gen.r_requested = r.get_u32();
    gen.r_effective = r.get_u32();
    gen.seed = r.get_u64();
    const std::size_t d = gen.dim();
    gen.mean_image.resize(d);
    for (auto& v : gen.mean_image) v = r.get_f64();
    gen.basis.resize(gen.r_effective * d);
    for (auto& v : gen.basis) v = r.get_f64();
    for (auto& st : gen.class_stats) {
        st.mean.resize(gen.r_effective);
        for (auto& v : st.mean) v = r.get_f64();
        st.variance.resize(gen.r_effective);
        for (auto& v : st.variance) v = r.get_f64();
    }
    if (r.remaining() != 0) throw IoError(name + ": trailing bytes");
    gen.fitted = true;
    return gen;
}

inline void save_generator(const std::filesystem::path& path, const GeneratorModel& gen) {
    write_file(path, serialize_generator(gen));
}

inline GeneratorModel load_generator(const std::filesystem::path& path) {
    return deserialize_generator(read_file(path), path.string());
}

} // namespace fedcase
