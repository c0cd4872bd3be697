#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "slicefuse/tensor.hpp"

namespace slicefuse {

// How a slice counts as correct for the Exact Match Ratio. `strict` requires
// the full binarized row to equal the label row; `no_missed` only forbids
// false negatives (every true biomarker must be detected).
enum class EmrPolicy { strict, no_missed };

namespace detail {

inline void require_binary_labels(const std::vector<int>& labels) {
    for (int y : labels) {
        if (y != 0 && y != 1) throw ValueError("metrics: labels must be 0 or 1");
    }
}

inline std::vector<int> flatten_labels(const Tensor& y) {
    std::vector<int> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) {
            throw ValueError("metrics: soft labels rejected, entries must be exactly 0 or 1");
        }
        out[i] = y[i] == 1.0 ? 1 : 0;
    }
    return out;
}

inline void require_same_shape(const Tensor& y, const Tensor& yhat) {
    if (!y.same_shape(yhat)) {
        throw ShapeError("metrics: label shape " + y.shape_string() + " vs score shape " +
                         yhat.shape_string());
    }
}

// Sort order for ranking metrics: score descending; at equal score, negatives
// before positives (pessimistic), and otherwise original order (stable).
inline std::vector<std::size_t> ranking_order(const std::vector<int>& labels,
                                              const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return labels[a] < labels[b];
    });
    return idx;
}

}  // namespace detail

// Area under the precision-recall curve as the mean over positives of the
// precision at each positive's rank. Requires at least one positive.
inline double average_precision(const std::vector<int>& labels,
                                const std::vector<double>& scores) {
    if (labels.size() != scores.size()) {
        throw ShapeError("average_precision: label/score length mismatch");
    }
    detail::require_binary_labels(labels);
    const std::size_t positives =
        static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (positives == 0) {
        throw ValueError("average_precision: undefined without a positive label");
    }
    std::vector<std::size_t> order = detail::ranking_order(labels, scores);
    double sum = 0.0;
    std::size_t tp = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] == 1) {
            ++tp;
            sum += static_cast<double>(tp) / static_cast<double>(rank + 1);
        }
    }
    return sum / static_cast<double>(positives);
}

// AP with no positives reported as absent rather than an error, for
// per-biomarker columns.
inline std::optional<double> average_precision_or_absent(const std::vector<int>& labels,
                                                         const std::vector<double>& scores) {
    if (std::count(labels.begin(), labels.end(), 1) == 0) return std::nullopt;
    return average_precision(labels, scores);
}

// Micro mAP: AP over all (slice, biomarker) pairs flattened together.
inline double map_micro(const Tensor& y, const Tensor& yhat) {
    detail::require_same_shape(y, yhat);
    std::vector<int> labels = detail::flatten_labels(y);
    if (std::count(labels.begin(), labels.end(), 1) == 0) {
        throw ValueError("map_micro: no positive labels in the matrix");
    }
    return average_precision(labels, yhat.values());
}

struct MacroResult {
    double value = 0.0;
    std::size_t excluded_classes = 0;  // biomarkers with no positives
};

// Macro mAP: unweighted mean of the per-biomarker APs. Biomarkers without a
// positive are excluded and counted.
inline MacroResult map_macro(const Tensor& y, const Tensor& yhat) {
    detail::require_same_shape(y, yhat);
    MacroResult out;
    double sum = 0.0;
    std::size_t included = 0;
    for (std::size_t b = 0; b < y.cols(); ++b) {
        std::vector<int> labels(y.rows());
        std::vector<double> scores(y.rows());
        for (std::size_t s = 0; s < y.rows(); ++s) {
            const double v = y.at(s, b);
            if (v != 0.0 && v != 1.0) throw ValueError("metrics: soft labels rejected");
            labels[s] = v == 1.0 ? 1 : 0;
            scores[s] = yhat.at(s, b);
        }
        auto ap = average_precision_or_absent(labels, scores);
        if (ap.has_value()) {
            sum += *ap;
            ++included;
        } else {
            ++out.excluded_classes;
        }
    }
    if (included == 0) throw ValueError("map_macro: every biomarker lacks positives");
    out.value = sum / static_cast<double>(included);
    return out;
}

// Fraction of slices whose binarized prediction row (score >= threshold)
// matches the label row under the given policy.
inline double emr(const Tensor& y, const Tensor& yhat, double threshold,
                  EmrPolicy policy = EmrPolicy::strict) {
    detail::require_same_shape(y, yhat);
    if (y.rows() == 0) throw ValueError("emr: empty matrix");
    std::size_t matched = 0;
    for (std::size_t s = 0; s < y.rows(); ++s) {
        bool ok = true;
        for (std::size_t b = 0; b < y.cols(); ++b) {
            const double label = y.at(s, b);
            if (label != 0.0 && label != 1.0) throw ValueError("metrics: soft labels rejected");
            const bool pred = yhat.at(s, b) >= threshold;
            const bool truth = label == 1.0;
            if (policy == EmrPolicy::strict ? pred != truth : (truth && !pred)) {
                ok = false;
                break;
            }
        }
        if (ok) ++matched;
    }
    return static_cast<double>(matched) / static_cast<double>(y.rows());
}

struct F1Result {
    double f1 = 0.0;
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

// Micro F1 maximized over one global threshold. Candidates are the distinct
// scores plus the boundaries 0 and 1; prediction is score >= threshold, and
// the smallest threshold attaining the maximum is returned.
inline F1Result max_f1(const Tensor& y, const Tensor& yhat) {
    detail::require_same_shape(y, yhat);
    std::vector<int> labels = detail::flatten_labels(y);
    const std::vector<double>& scores = yhat.values();
    const std::size_t positives =
        static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (positives == 0) throw ValueError("max_f1: no positive labels");

    std::vector<double> candidates = scores;
    candidates.push_back(0.0);
    candidates.push_back(1.0);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    // Sweep thresholds descending with cumulative counts: at threshold t the
    // predicted-positive set is every item with score >= t.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    F1Result best;
    best.f1 = -1.0;
    std::size_t tp = 0, fp = 0, item = 0;
    for (std::size_t c = candidates.size(); c-- > 0;) {
        const double t = candidates[c];
        while (item < order.size() && scores[order[item]] >= t) {
            if (labels[order[item]] == 1) {
                ++tp;
            } else {
                ++fp;
            }
            ++item;
        }
        const std::size_t fn = positives - tp;
        const double denom = static_cast<double>(2 * tp + fp + fn);
        const double f1 = denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
        if (f1 > best.f1 || (f1 == best.f1 && t < best.threshold)) {
            best.f1 = f1;
            best.threshold = t;
            best.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
            best.recall = static_cast<double>(tp) / static_cast<double>(positives);
        }
    }
    return best;
}

// Everything Table-1-shaped for one evaluation: per-biomarker AP with support
// counts, micro/macro mAP, and the starred metrics computed at the max-F1
// threshold. Binary score matrices (every entry exactly 0 or 1) admit only a
// single precision-recall point, so their AP fields are flagged as not
// comparable.
struct MetricsReport {
    std::vector<std::optional<double>> per_biomarker_ap;
    std::vector<std::size_t> support;
    double map_micro = 0.0;
    double map_macro = 0.0;
    std::size_t macro_excluded_classes = 0;
    double emr = 0.0;
    double max_f1 = 0.0;
    double f1_threshold = 0.0;
    double precision_at_threshold = 0.0;
    double recall_at_threshold = 0.0;
    bool ap_comparable = true;
};

inline MetricsReport metrics_report(const Tensor& y, const Tensor& yhat,
                                    EmrPolicy policy = EmrPolicy::strict) {
    detail::require_same_shape(y, yhat);
    MetricsReport report;
    for (std::size_t b = 0; b < y.cols(); ++b) {
        std::vector<int> labels(y.rows());
        std::vector<double> scores(y.rows());
        for (std::size_t s = 0; s < y.rows(); ++s) {
            labels[s] = y.at(s, b) == 1.0 ? 1 : 0;
            scores[s] = yhat.at(s, b);
        }
        report.per_biomarker_ap.push_back(average_precision_or_absent(labels, scores));
        report.support.push_back(
            static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)));
    }
    report.map_micro = map_micro(y, yhat);
    const MacroResult macro = map_macro(y, yhat);
    report.map_macro = macro.value;
    report.macro_excluded_classes = macro.excluded_classes;
    const F1Result f1 = max_f1(y, yhat);
    report.max_f1 = f1.f1;
    report.f1_threshold = f1.threshold;
    report.precision_at_threshold = f1.precision;
    report.recall_at_threshold = f1.recall;
    report.emr = emr(y, yhat, f1.threshold, policy);
    report.ap_comparable = false;
    for (double v : yhat.values()) {
        if (v != 0.0 && v != 1.0) {
            report.ap_comparable = true;
            break;
        }
    }
    return report;
}

}  // namespace slicefuse
