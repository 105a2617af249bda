#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedcase/errors.hpp"
#include "fedcase/generator.hpp"
#include "fedcase/image.hpp"
#include "fedcase/model.hpp"

namespace fedcase {

enum class RetrievalMethod { feature_distance, ssim };

inline const char* method_name(RetrievalMethod m) {
    return m == RetrievalMethod::feature_distance ? "feature_distance" : "ssim";
}

struct RankedItem {
    std::uint64_t case_id = 0;
    int source_client_id = 0;
    double score = 0.0; // distance (feature) or similarity (ssim)
    std::size_t rank = 0;
};

struct RetrievalResult {
    std::uint64_t query_id = 0;
    int predicted_label = 0;
    double p_positive = 0.0;
    RetrievalMethod method = RetrievalMethod::feature_distance;
    std::vector<RankedItem> items;
};

namespace detail {

inline std::vector<double> unit_feature(const GlobalModel& model, const LabeledImage& img) {
    std::vector<double> f = forward(model, img).feature;
    double sq = 0.0;
    for (double v : f) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0))
        throw NumericError("feature normalization failed: zero feature vector for image " +
                           std::to_string(img.id));
    for (auto& v : f) v /= norm;
    return f;
}

inline double unit_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sq += d * d;
    }
    return std::sqrt(sq);
}

// Top-k per source client by (score, id), then one merged list. `ascending`
// selects smaller-is-better (distances) vs larger-is-better (similarities).
inline std::vector<RankedItem> select_per_client(std::vector<RankedItem> scored,
                                                 std::size_t per_client, bool ascending) {
    auto better = [ascending](const RankedItem& a, const RankedItem& b) {
        if (a.score != b.score) return ascending ? a.score < b.score : a.score > b.score;
        return a.case_id < b.case_id;
    };
    std::map<int, std::vector<RankedItem>> by_client;
    for (auto& item : scored) by_client[item.source_client_id].push_back(item);

    std::vector<RankedItem> merged;
    for (auto& [client, items] : by_client) {
        std::sort(items.begin(), items.end(), better);
        const std::size_t take = std::min(per_client, items.size());
        merged.insert(merged.end(), items.begin(), items.begin() + take);
    }
    std::sort(merged.begin(), merged.end(), better);
    for (std::size_t i = 0; i < merged.size(); ++i) merged[i].rank = i + 1;
    return merged;
}

} // namespace detail

// Euclidean distance between unit-L2-normalized feature embeddings; range
// [0, 2], zero iff the normalized features coincide.
inline double feature_distance(const GlobalModel& model, const LabeledImage& a,
                               const LabeledImage& b) {
    return detail::unit_distance(detail::unit_feature(model, a), detail::unit_feature(model, b));
}

// Ranks the pool by feature distance to the query and keeps the per_client
// closest cases from each source client. Ties break by ascending case id.
inline RetrievalResult retrieve(const GlobalModel& model, const LabeledImage& query,
                                const std::vector<SyntheticCase>& pool,
                                std::size_t per_client = 3) {
    if (pool.empty()) throw StateError("retrieve: empty pool");
    if (per_client < 1) throw StateError("retrieve: per_client must be >= 1");

    RetrievalResult res;
    res.query_id = query.id;
    res.method = RetrievalMethod::feature_distance;
    const Prediction pred = predict(model, query);
    res.predicted_label = pred.label;
    res.p_positive = pred.p_positive;

    const std::vector<double> qf = detail::unit_feature(model, query);
    std::vector<RankedItem> scored;
    scored.reserve(pool.size());
    for (const auto& sc : pool) {
        RankedItem item;
        item.case_id = sc.image.id;
        item.source_client_id = sc.source_client_id;
        item.score = detail::unit_distance(qf, detail::unit_feature(model, sc.image));
        scored.push_back(item);
    }
    res.items = detail::select_per_client(std::move(scored), per_client, /*ascending=*/true);
    return res;
}

// Mean SSIM over all 7x7 uniform windows (stride 1, fully inside the image),
// computed on raw 8-bit intensities with the reference constants
// C1 = (0.01*255)^2, C2 = (0.03*255)^2 and sample (N-1) covariance
// normalization. Window sums come from summed-area tables; on integer-valued
// inputs those sums are exact, so the result matches a direct window loop.
inline double ssim(const LabeledImage& a, const LabeledImage& b) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("ssim: image dimensions differ");
    const int w = a.width, h = a.height;
    const int win = 7;
    if (w < win || h < win)
        throw StateError("ssim: image smaller than the 7x7 window");

    const int sw = w + 1;
    auto sat = [&](auto value) {
        std::vector<double> table(static_cast<std::size_t>(sw) * (h + 1), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                table[(y + 1) * sw + (x + 1)] = value(y, x) + table[y * sw + (x + 1)] +
                                                table[(y + 1) * sw + x] - table[y * sw + x];
        return table;
    };
    auto px = [&](const LabeledImage& img, int y, int x) {
        return static_cast<double>(img.pixels[static_cast<std::size_t>(y) * w + x]);
    };
    const auto sx = sat([&](int y, int x) { return px(a, y, x); });
    const auto sy = sat([&](int y, int x) { return px(b, y, x); });
    const auto sxx = sat([&](int y, int x) { return px(a, y, x) * px(a, y, x); });
    const auto syy = sat([&](int y, int x) { return px(b, y, x) * px(b, y, x); });
    const auto sxy = sat([&](int y, int x) { return px(a, y, x) * px(b, y, x); });
    auto window_sum = [&](const std::vector<double>& t, int y, int x) {
        return t[(y + win) * sw + (x + win)] - t[y * sw + (x + win)] - t[(y + win) * sw + x] +
               t[y * sw + x];
    };

    const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
    const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
    const double np = static_cast<double>(win * win);
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + win <= h; ++y)
        for (int x = 0; x + win <= w; ++x) {
            const double mx = window_sum(sx, y, x) / np;
            const double my = window_sum(sy, y, x) / np;
            // products rounded once and reused, so swapping the images gives
            // bit-identical results and ssim(x, x) is exactly 1
            const double mxx = mx * mx;
            const double myy = my * my;
            const double mxy = mx * my;
            const double vx = (window_sum(sxx, y, x) - np * mxx) / (np - 1.0);
            const double vy = (window_sum(syy, y, x) - np * myy) / (np - 1.0);
            const double cov = (window_sum(sxy, y, x) - np * mxy) / (np - 1.0);
            const double num = (2.0 * mxy + c1) * (2.0 * cov + c2);
            const double den = (mxx + myy + c1) * (vx + vy + c2);
            acc += num / den;
            ++count;
        }
    return acc / static_cast<double>(count);
}

// SSIM baseline ranking: higher similarity first, ties by ascending case id.
inline RetrievalResult retrieve_ssim(const GlobalModel& model, const LabeledImage& query,
                                     const std::vector<SyntheticCase>& pool,
                                     std::size_t per_client = 3) {
    if (pool.empty()) throw StateError("retrieve_ssim: empty pool");
    if (per_client < 1) throw StateError("retrieve_ssim: per_client must be >= 1");

    RetrievalResult res;
    res.query_id = query.id;
    res.method = RetrievalMethod::ssim;
    const Prediction pred = predict(model, query);
    res.predicted_label = pred.label;
    res.p_positive = pred.p_positive;

    std::vector<RankedItem> scored;
    scored.reserve(pool.size());
    for (const auto& sc : pool) {
        RankedItem item;
        item.case_id = sc.image.id;
        item.source_client_id = sc.source_client_id;
        item.score = ssim(query, sc.image);
        scored.push_back(item);
    }
    res.items = detail::select_per_client(std::move(scored), per_client, /*ascending=*/false);
    return res;
}

} // namespace fedcase
