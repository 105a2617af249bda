#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "fedcase/errors.hpp"
#include "fedcase/federated.hpp"
#include "fedcase/image.hpp"
#include "fedcase/rng.hpp"

namespace fedcase {

constexpr std::uint16_t kImageSize = 32;

// Blob model shared by generation and severity calibration. A positive image
// carries one bright Gaussian blob in the lower third; amplitude and radius
// both grow with severity. Radius carries most of the severity coding (the
// lesion EXTENT grows), which keeps severity visible as a direction change in
// any reasonable embedding rather than a pure intensity scale.
constexpr double kBlobAmpBase = 60.0;
constexpr double kBlobAmpSlope = 40.0;
constexpr double kBlobRadiusMin = 1.2;
constexpr double kBlobRadiusMax = 4.6;
constexpr double kSeverityMin = 0.15; // generated severities lie in [min, max]
constexpr double kSeverityMax = 0.9;

inline double blob_radius(double severity) {
    return kBlobRadiusMin + (kBlobRadiusMax - kBlobRadiusMin) * severity;
}

inline double blob_amplitude(double severity) {
    return kBlobAmpBase + kBlobAmpSlope * severity;
}

// One synthetic hospital's acquisition profile.
struct SiteSpec {
    int site_id = 0;
    double base_intensity = 100.0;
    double noise_std = 5.0;
    double positive_rate = 0.3;
    int blob_dx = 0;
    int blob_dy = 0;
    double crop_probability = 0.0;
    std::size_t n_images = 100;
    std::uint64_t seed = 0;

    void validate() const {
        const std::string prefix = "site " + std::to_string(site_id) + ": ";
        if (!(base_intensity >= 0.0 && base_intensity <= 255.0))
            throw ConfigError(prefix + "base_intensity must be in [0,255]");
        if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
            throw ConfigError(prefix + "noise_std must be finite and >= 0");
        if (!(positive_rate >= 0.0 && positive_rate < 1.0))
            throw ConfigError(prefix + "positive_rate must be in [0,1)");
        if (!(crop_probability >= 0.0 && crop_probability <= 1.0))
            throw ConfigError(prefix + "crop_probability must be in [0,1]");
        if (n_images == 0) throw ConfigError(prefix + "n_images must be >= 1");
    }
};

// Renders one image: flat base + Gaussian pixel noise, an optional severity
// blob at integer center (cx, cy), and an optional bottom crop of black rows.
// Noise consumption is row-major and independent of label, so two renders
// from equal-seeded streams share the exact same background.
inline std::vector<std::uint8_t> render_image(double base_intensity, double noise_std,
                                              std::uint8_t label, double severity, int cx, int cy,
                                              RngStream& rng, int crop_rows = 0) {
    const int w = kImageSize, h = kImageSize;
    std::vector<double> canvas(static_cast<std::size_t>(w) * h, base_intensity);
    if (noise_std > 0.0)
        for (auto& v : canvas) v += noise_std * rng.gaussian();
    if (label == 1) {
        const double amp = blob_amplitude(severity);
        const double r = blob_radius(severity);
        const double inv = 1.0 / (2.0 * r * r);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double d2 = static_cast<double>((x - cx) * (x - cx) + (y - cy) * (y - cy));
                canvas[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-d2 * inv);
            }
    }
    std::vector<std::uint8_t> pixels(canvas.size());
    for (std::size_t i = 0; i < canvas.size(); ++i) {
        const long q = std::lround(canvas[i]);
        pixels[i] = static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
    }
    if (crop_rows > 0) {
        const int start = std::max(0, h - crop_rows);
        std::fill(pixels.begin() + static_cast<std::size_t>(start) * w, pixels.end(),
                  std::uint8_t{0});
    }
    return pixels;
}

// Per-image draw order: label, then (positives) severity and center jitter,
// then pixel noise, then the crop decision. Image ids are
// site_id * 1e6 + index, unique across sites with distinct ids.
inline std::vector<LabeledImage> generate_site(const SiteSpec& spec) {
    spec.validate();
    RngStream rng(derive_seed(spec.seed, 0x73697465ull, static_cast<std::uint64_t>(spec.site_id)));
    std::vector<LabeledImage> images;
    images.reserve(spec.n_images);
    for (std::size_t i = 0; i < spec.n_images; ++i) {
        LabeledImage img;
        img.id = static_cast<std::uint64_t>(spec.site_id) * 1000000ull + i;
        img.width = kImageSize;
        img.height = kImageSize;
        img.label = rng.uniform() < spec.positive_rate ? 1 : 0;
        int cx = 0, cy = 0;
        if (img.label == 1) {
            img.severity = kSeverityMin + (kSeverityMax - kSeverityMin) * rng.uniform();
            const int jx = static_cast<int>(rng.uniform_below(7)) - 3; // [-3, 3]
            const int jy = static_cast<int>(rng.uniform_below(5)) - 2; // [-2, 2]
            cx = std::clamp(kImageSize / 2 + spec.blob_dx + jx, 6, kImageSize - 7);
            // keep the blob clear of the background rows used for calibration
            cy = std::clamp(25 + spec.blob_dy + jy, 24, kImageSize - 5);
        }
        int crop_rows = 0;
        if (rng.uniform() < spec.crop_probability)
            crop_rows = 2 + static_cast<int>(rng.uniform_below(5)); // [2, 6]
        img.pixels = render_image(spec.base_intensity, spec.noise_std, img.label, img.severity,
                                  cx, cy, rng, crop_rows);
        images.push_back(std::move(img));
    }
    return images;
}

// Stratified holdout: round(fraction * total) images, with round(fraction *
// positives) positives, selected by seeded shuffle. Both halves come back
// sorted by id.
inline std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>>
stratified_split(const std::vector<LabeledImage>& images, double fraction, RngStream& rng) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("split fraction must be in (0,1), got " + std::to_string(fraction));
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < images.size(); ++i)
        (images[i].label == 1 ? pos : neg).push_back(i);

    const auto n_total = static_cast<std::size_t>(
        std::lround(fraction * static_cast<double>(images.size())));
    auto n_pos = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(pos.size())));
    n_pos = std::min(n_pos, pos.size());
    n_pos = std::min(n_pos, n_total);
    if (n_total - n_pos > neg.size()) n_pos = n_total - neg.size();
    const std::size_t n_neg = n_total - n_pos;

    auto shuffle = [&rng](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_below(i))]);
    };
    shuffle(pos);
    shuffle(neg);

    std::vector<char> held(images.size(), 0);
    for (std::size_t i = 0; i < n_pos; ++i) held[pos[i]] = 1;
    for (std::size_t i = 0; i < n_neg; ++i) held[neg[i]] = 1;

    std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> out;
    for (std::size_t i = 0; i < images.size(); ++i)
        (held[i] ? out.first : out.second).push_back(images[i]);
    auto by_id = [](const LabeledImage& a, const LabeledImage& b) { return a.id < b.id; };
    std::sort(out.first.begin(), out.first.end(), by_id);
    std::sort(out.second.begin(), out.second.end(), by_id);
    return out;
}

// The desk-scale analog of the multi-site layout: client sites with held-out
// in-distribution test slices, plus one site used purely as OOD test data.
struct Corpus {
    std::vector<ClientDataset> clients;
    std::vector<LabeledImage> test_in;
    std::vector<LabeledImage> test_ood;
    std::vector<SiteSpec> specs;
};

// Assembles the corpus from pre-generated site images (last site = OOD).
// Split streams derive from each spec's seed, so loading the same site files
// always reproduces the same corpus.
inline Corpus assemble_corpus(const std::vector<SiteSpec>& specs,
                              const std::vector<std::vector<LabeledImage>>& site_images,
                              double test_fraction, double validation_fraction = 0.2) {
    if (specs.size() < 2)
        throw ConfigError("corpus needs at least 2 sites (>=1 client + 1 OOD)");
    if (specs.size() != site_images.size())
        throw StateError("assemble_corpus: spec/image list size mismatch");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("corpus.test_fraction must be in (0,1)");

    Corpus corpus;
    corpus.specs = specs;
    for (std::size_t s = 0; s + 1 < specs.size(); ++s) {
        RngStream test_rng(derive_seed(specs[s].seed, 0x74657374ull, specs[s].site_id));
        auto [test_part, rest] = stratified_split(site_images[s], test_fraction, test_rng);
        corpus.test_in.insert(corpus.test_in.end(), test_part.begin(), test_part.end());

        RngStream val_rng(derive_seed(specs[s].seed, 0x76616cull, specs[s].site_id));
        auto [val_part, train_part] = stratified_split(rest, validation_fraction, val_rng);
        ClientDataset client;
        client.client_id = specs[s].site_id;
        client.train = std::move(train_part);
        client.validation = std::move(val_part);
        corpus.clients.push_back(std::move(client));
    }
    corpus.test_ood = site_images.back();

    // ids must be globally unique
    std::vector<std::uint64_t> ids;
    for (const auto& c : corpus.clients) {
        for (const auto& img : c.train) ids.push_back(img.id);
        for (const auto& img : c.validation) ids.push_back(img.id);
    }
    for (const auto& img : corpus.test_in) ids.push_back(img.id);
    for (const auto& img : corpus.test_ood) ids.push_back(img.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw StateError("corpus: duplicate image ids across sites");
    return corpus;
}

inline Corpus build_corpus(const std::vector<SiteSpec>& specs, double test_fraction,
                           double validation_fraction = 0.2) {
    std::vector<std::vector<LabeledImage>> site_images;
    site_images.reserve(specs.size());
    for (const auto& spec : specs) site_images.push_back(generate_site(spec));
    return assemble_corpus(specs, site_images, test_fraction, validation_fraction);
}

// Manifest sidecar in the flat dotted-key format.
inline std::string manifest_text(const std::vector<SiteSpec>& specs, double test_fraction) {
    std::ostringstream out;
    out.precision(17);
    out << "corpus.sites = " << specs.size() << "\n";
    out << "corpus.test_fraction = " << test_fraction << "\n";
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        const std::string p = "corpus.site" + std::to_string(i) + ".";
        out << p << "site_id = " << s.site_id << "\n";
        out << p << "n_images = " << s.n_images << "\n";
        out << p << "base_intensity = " << s.base_intensity << "\n";
        out << p << "noise_std = " << s.noise_std << "\n";
        out << p << "positive_rate = " << s.positive_rate << "\n";
        out << p << "blob_dx = " << s.blob_dx << "\n";
        out << p << "blob_dy = " << s.blob_dy << "\n";
        out << p << "crop_probability = " << s.crop_probability << "\n";
        out << p << "seed = " << s.seed << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Severity oracle: recovers the severity of a positive image by measuring
// blob amplitude and inverting the (amplitude x box-smoothing attenuation)
// curve the generator implies.
// ---------------------------------------------------------------------------

struct BlobCalibration {
    double amp_base = kBlobAmpBase;
    double amp_slope = kBlobAmpSlope;
    double radius_min = kBlobRadiusMin;
    double radius_max = kBlobRadiusMax;
    int background_rows = 10; // blob-free top rows used for the background level
    int search_row_start = 18;

    // Peak response of a 3x3 box filter centered on a unit-amplitude blob.
    double attenuation(double radius) const {
        const double inv = 1.0 / (2.0 * radius * radius);
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) acc += std::exp(-(dx * dx + dy * dy) * inv);
        return acc / 9.0;
    }

    double expected_peak(double severity) const {
        const double r = radius_min + (radius_max - radius_min) * severity;
        return (amp_base + amp_slope * severity) * attenuation(r);
    }
};

inline double estimate_severity(const LabeledImage& img, const BlobCalibration& calib = {}) {
    if (img.label == 0) return 0.0;
    const int w = img.width, h = img.height;

    // bottom rows that are entirely black are treated as cropped
    int crop_start = h;
    for (int y = h - 1; y >= 0; --y) {
        bool all_zero = true;
        for (int x = 0; x < w; ++x)
            if (img.pixels[static_cast<std::size_t>(y) * w + x] != 0) {
                all_zero = false;
                break;
            }
        if (!all_zero) break;
        crop_start = y;
    }

    double background = 0.0;
    const int bg_rows = std::min(calib.background_rows, h);
    for (int y = 0; y < bg_rows; ++y)
        for (int x = 0; x < w; ++x) background += img.pixels[static_cast<std::size_t>(y) * w + x];
    background /= static_cast<double>(bg_rows * w);

    // 3x3 box-smoothed peak over the lower search region, keeping the window
    // clear of cropped rows
    double peak = -1e300;
    const int y_lo = std::max(1, calib.search_row_start);
    const int y_hi = std::min(h - 2, crop_start - 2);
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = 1; x <= w - 2; ++x) {
            double acc = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    acc += img.pixels[static_cast<std::size_t>(y + dy) * w + (x + dx)];
            peak = std::max(peak, acc / 9.0);
        }
    const double amplitude = peak - background;
    if (!(amplitude > 0.0)) return 0.0;
    if (amplitude >= calib.expected_peak(1.0)) return 1.0;

    // expected_peak is strictly increasing in severity; invert by bisection
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (calib.expected_peak(mid) < amplitude) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace fedcase
