#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedcase/errors.hpp"

namespace fedcase {

// F1 of the positive class; 0 when precision + recall is 0.
inline double f1_score(const std::vector<int>& predictions, const std::vector<int>& truths) {
    if (predictions.size() != truths.size())
        throw ShapeError("f1_score: prediction/truth length mismatch");
    if (predictions.empty()) throw StateError("f1_score: empty input");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == 1 && truths[i] == 1) ++tp;
        else if (predictions[i] == 1 && truths[i] == 0) ++fp;
        else if (predictions[i] == 0 && truths[i] == 1) ++fn;
    }
    const double p = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

// Relevance for ground-truth rank i of p: linear between the endpoints
// rel(1) = 5 and rel(p) = 1, rounded half up.
inline int assign_relevance(std::size_t i, std::size_t p) {
    if (p < 2) throw StateError("assign_relevance: degenerate ranking (p < 2)");
    if (i < 1 || i > p)
        throw StateError("assign_relevance: rank " + std::to_string(i) + " outside [1, " +
                         std::to_string(p) + "]");
    const double x = 4.0 * static_cast<double>(p - i) / static_cast<double>(p - 1);
    return 1 + static_cast<int>(std::floor(x + 0.5));
}

// DCG_p = sum_i (2^rel_i - 1) / log2(i + 1), i starting at 1.
inline double dcg(const std::vector<int>& relevances) {
    if (relevances.empty()) throw StateError("dcg: empty ranking");
    double acc = 0.0;
    for (std::size_t i = 0; i < relevances.size(); ++i) {
        if (relevances[i] < 0) throw StateError("dcg: negative relevance");
        acc += (std::exp2(static_cast<double>(relevances[i])) - 1.0) /
               std::log2(static_cast<double>(i) + 2.0);
    }
    return acc;
}

struct RankingEval {
    std::uint64_t query_id = 0;
    std::size_t p = 0;
    std::vector<std::uint64_t> ground_truth_order; // most similar first
    std::vector<std::uint64_t> method_order;
    std::vector<int> relevances; // of the method order positions
    double dcg_p = 0.0;
    double idcg_p = 0.0;
    double ndcg_p = 0.0;
};

// nDCG of a method ranking against the ground-truth ranking of the same
// items. Relevances come from ground-truth rank via assign_relevance; IDCG
// is the DCG of the ground-truth order itself.
inline RankingEval evaluate_ranking(std::uint64_t query_id,
                                    const std::vector<std::uint64_t>& method_order,
                                    const std::vector<std::uint64_t>& ground_truth_order) {
    const std::size_t p = ground_truth_order.size();
    if (method_order.size() != p)
        throw StateError("ndcg: ranking-mismatch, method has " +
                         std::to_string(method_order.size()) + " items, ground truth " +
                         std::to_string(p));
    std::vector<std::uint64_t> a = method_order, b = ground_truth_order;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b || std::adjacent_find(a.begin(), a.end()) != a.end())
        throw StateError("ndcg: ranking-mismatch, orders are not permutations of the same ids");

    RankingEval ev;
    ev.query_id = query_id;
    ev.p = p;
    ev.ground_truth_order = ground_truth_order;
    ev.method_order = method_order;

    std::vector<int> ideal_rel(p);
    for (std::size_t i = 0; i < p; ++i) ideal_rel[i] = assign_relevance(i + 1, p);

    ev.relevances.resize(p);
    for (std::size_t pos = 0; pos < p; ++pos) {
        const auto it = std::find(ground_truth_order.begin(), ground_truth_order.end(),
                                  method_order[pos]);
        const std::size_t gt_rank = static_cast<std::size_t>(it - ground_truth_order.begin()) + 1;
        ev.relevances[pos] = assign_relevance(gt_rank, p);
    }
    ev.dcg_p = dcg(ev.relevances);
    ev.idcg_p = dcg(ideal_rel);
    ev.ndcg_p = ev.dcg_p / ev.idcg_p;
    return ev;
}

inline double ndcg(const std::vector<std::uint64_t>& method_order,
                   const std::vector<std::uint64_t>& ground_truth_order) {
    return evaluate_ranking(0, method_order, ground_truth_order).ndcg_p;
}

} // namespace fedcase
