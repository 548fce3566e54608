#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ave/dataset.hpp"
#include "ave/errors.hpp"
#include "ave/matching.hpp"

namespace ave {

// Component-wise sum of per-instance normalized confusion vectors. Each
// instance contributes total weight 1, so tp+tn+fp+fn == n_instances.
struct GlobalConfusion {
    double tp = 0.0;
    double tn = 0.0;
    double fp = 0.0;
    double fn = 0.0;
    int n_instances = 0;
};

inline GlobalConfusion aggregate_confusion(const std::vector<ConfusionVector>& cs) {
    GlobalConfusion g;
    for (const auto& c : cs) {
        g.tp += c.normalized[0];
        g.tn += c.normalized[1];
        g.fp += c.normalized[2];
        g.fn += c.normalized[3];
    }
    g.n_instances = static_cast<int>(cs.size());
    return g;
}

enum class MetricKind { f1, mcc, recall_minus_fpr };

inline const char* to_string(MetricKind k) {
    switch (k) {
        case MetricKind::f1: return "f1";
        case MetricKind::mcc: return "mcc";
        case MetricKind::recall_minus_fpr: return "rec-fpr";
    }
    return "?";
}

inline MetricKind metric_kind_from_string(std::string_view s) {
    if (s == "f1") return MetricKind::f1;
    if (s == "mcc") return MetricKind::mcc;
    if (s == "rec-fpr") return MetricKind::recall_minus_fpr;
    throw ConfigError("unknown metric '" + std::string(s) + "' (expected f1|mcc|rec-fpr)");
}

// Scalar objective over an aggregated confusion matrix. Ill-defined
// divisions follow the value-0 convention: a zero denominator zeroes that
// quotient (for Recall-FPR each term independently), and a zero factor under
// the MCC root zeroes the whole metric.
inline double phi_apply(MetricKind kind, const GlobalConfusion& g) {
    if (g.n_instances <= 0) throw EmptyAggregate("phi_apply: aggregate over zero instances");
    const double tp = g.tp, tn = g.tn, fp = g.fp, fn = g.fn;
    switch (kind) {
        case MetricKind::f1: {
            const double denom = 2.0 * tp + fp + fn;
            return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
        }
        case MetricKind::recall_minus_fpr: {
            const double recall = (tp + fn) == 0.0 ? 0.0 : tp / (tp + fn);
            const double fpr = (fp + tn) == 0.0 ? 0.0 : fp / (fp + tn);
            return recall - fpr;
        }
        case MetricKind::mcc: {
            const double radicand = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
            if (radicand == 0.0) return 0.0;
            return (tp * tn - fp * fn) / std::sqrt(radicand);
        }
    }
    throw ConfigError("phi_apply: unhandled metric kind");
}

namespace detail {

// Strict inversions (left > right) via merge sort.
inline long long count_inversions(std::vector<double>& v) {
    std::vector<double> buf(v.size());
    long long inversions = 0;
    for (std::size_t width = 1; width < v.size(); width *= 2) {
        for (std::size_t lo = 0; lo + width < v.size(); lo += 2 * width) {
            std::size_t mid = lo + width;
            std::size_t hi = std::min(lo + 2 * width, v.size());
            std::size_t i = lo, j = mid, k = lo;
            while (i < mid && j < hi) {
                if (v[j] < v[i]) {
                    inversions += static_cast<long long>(mid - i);
                    buf[k++] = v[j++];
                } else {
                    buf[k++] = v[i++];
                }
            }
            while (i < mid) buf[k++] = v[i++];
            while (j < hi) buf[k++] = v[j++];
            std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
                      buf.begin() + static_cast<std::ptrdiff_t>(hi),
                      v.begin() + static_cast<std::ptrdiff_t>(lo));
        }
    }
    return inversions;
}

} // namespace detail

// Kendall's tau-b in O(n log n): sort by (x, y), take tie counts from run
// lengths and the discordant count from an inversion count over y.
// An all-tied side zeroes a denominator factor and yields 0.
inline double kendall_tau(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw std::invalid_argument("kendall_tau: length mismatch");
    }
    const std::size_t n = xs.size();
    if (n < 2) throw std::invalid_argument("kendall_tau: need at least 2 observations");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (xs[a] != xs[b]) return xs[a] < xs[b];
        return ys[a] < ys[b];
    });

    long long xtie = 0, both_tie = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && xs[idx[j]] == xs[idx[i]]) ++j;
        const long long run = static_cast<long long>(j - i);
        xtie += run * (run - 1) / 2;
        for (std::size_t a = i; a < j;) {
            std::size_t b = a;
            while (b < j && ys[idx[b]] == ys[idx[a]]) ++b;
            const long long r2 = static_cast<long long>(b - a);
            both_tie += r2 * (r2 - 1) / 2;
            a = b;
        }
        i = j;
    }

    long long ytie = 0;
    {
        std::vector<double> sorted_y(ys.begin(), ys.end());
        std::sort(sorted_y.begin(), sorted_y.end());
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j < n && sorted_y[j] == sorted_y[i]) ++j;
            const long long run = static_cast<long long>(j - i);
            ytie += run * (run - 1) / 2;
            i = j;
        }
    }

    std::vector<double> y_in_x_order(n);
    for (std::size_t i = 0; i < n; ++i) y_in_x_order[i] = ys[idx[i]];
    const long long discordant = detail::count_inversions(y_in_x_order);

    const long long total = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
    const long long con_minus_dis = total - xtie - ytie + both_tie - 2 * discordant;
    const double not_tied_y = static_cast<double>(total - ytie);  // = C + D + Tx
    const double not_tied_x = static_cast<double>(total - xtie);  // = C + D + Ty
    if (not_tied_x == 0.0 || not_tied_y == 0.0) return 0.0;
    return static_cast<double>(con_minus_dis) / std::sqrt(not_tied_y * not_tied_x);
}

// Per-instance scalar pair fed to the alignment correlation: predicted-side
// value first, human-side second.
using AlignmentScalarFn =
    std::function<std::pair<double, double>(const InstanceEvaluation&, const Sample&)>;

// Default: fewer weaknesses ranks better on both sides, using the predicted
// set size (matches + hallucinations) against the annotated set size.
inline std::pair<double, double> default_alignment_scalars(const InstanceEvaluation& eval,
                                                           const Sample& sample) {
    const double predicted_size = static_cast<double>(eval.outcome.matched_pairs.size() +
                                                      eval.outcome.hallucinations.size());
    return {-predicted_size, -static_cast<double>(sample.weaknesses.size())};
}

inline double human_alignment_tau(
    const std::vector<std::pair<InstanceEvaluation, Sample>>& evals,
    const AlignmentScalarFn& scalars = default_alignment_scalars) {
    if (evals.size() < 2) {
        throw std::invalid_argument("human_alignment_tau: need at least 2 instances");
    }
    std::vector<double> predicted, human;
    predicted.reserve(evals.size());
    human.reserve(evals.size());
    for (const auto& [eval, sample] : evals) {
        auto [p, h] = scalars(eval, sample);
        predicted.push_back(p);
        human.push_back(h);
    }
    return kendall_tau(predicted, human);
}

// Metric report rows (task_family, metric, value), emitted as CSV and JSON.
struct MetricReportRow {
    std::string task_family;
    MetricKind metric = MetricKind::f1;
    double value = 0.0;
};

inline std::string metric_report_csv(const std::vector<MetricReportRow>& rows) {
    std::ostringstream out;
    out << "task_family,metric,value\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.task_family << ',' << to_string(r.metric) << ',' << r.value << '\n';
    }
    return out.str();
}

inline nlohmann::json metric_report_json(const std::vector<MetricReportRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        out.push_back({{"task_family", r.task_family},
                       {"metric", to_string(r.metric)},
                       {"value", r.value}});
    }
    return out;
}

} // namespace ave
