#pragma once

// Multi-label evaluation: thresholded precision/recall/F1 with macro, micro,
// samples and weighted averaging, step-wise average precision and ROC AUC.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcnbind {

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Row-major [N, k] post-sigmoid scores with matching binary targets.
struct ScoreMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> scores;
    std::vector<std::uint8_t> targets;
    std::vector<std::string> label_names;

    double score(std::size_t i, std::size_t j) const { return scores[i * cols + j]; }
    bool target(std::size_t i, std::size_t j) const { return targets[i * cols + j] != 0; }

    void validate() const {
        if (scores.size() != rows * cols || targets.size() != rows * cols) {
            throw MetricError("score matrix: scores/targets do not match [" + std::to_string(rows) + "," +
                              std::to_string(cols) + "]");
        }
        if (!label_names.empty() && label_names.size() != cols) {
            throw MetricError("score matrix: label count mismatch");
        }
        for (auto t : targets) {
            if (t > 1) {
                throw MetricError("score matrix: targets must be 0 or 1");
            }
        }
    }

    std::vector<double> column_scores(std::size_t j) const {
        std::vector<double> out(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            out[i] = score(i, j);
        }
        return out;
    }
    std::vector<std::uint8_t> column_targets(std::size_t j) const {
        std::vector<std::uint8_t> out(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            out[i] = targets[i * cols + j];
        }
        return out;
    }
};

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::size_t support() const { return tp + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

/// Per-label counts with prediction = (score >= threshold).
inline std::vector<ConfusionCounts> confusion_counts(const ScoreMatrix& sm, double threshold) {
    sm.validate();
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw MetricError("threshold must lie in (0, 1)");
    }
    std::vector<ConfusionCounts> out(sm.cols);
    for (std::size_t i = 0; i < sm.rows; ++i) {
        for (std::size_t j = 0; j < sm.cols; ++j) {
            const bool pred = sm.score(i, j) >= threshold;
            const bool truth = sm.target(i, j);
            auto& c = out[j];
            if (pred && truth) {
                ++c.tp;
            } else if (pred) {
                ++c.fp;
            } else if (truth) {
                ++c.fn;
            } else {
                ++c.tn;
            }
        }
    }
    return out;
}

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline double safe_ratio(double num, double den) {
    return den == 0.0 ? 0.0 : num / den;
}

/// 0/0 cases evaluate to 0.
inline Prf precision_recall_f1(const ConfusionCounts& c) {
    Prf m;
    m.precision = safe_ratio(double(c.tp), double(c.tp + c.fp));
    m.recall = safe_ratio(double(c.tp), double(c.tp + c.fn));
    m.f1 = safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    return m;
}

enum class Averaging { kMacro, kMicro, kSamples, kWeighted };

inline const char* averaging_name(Averaging mode) {
    switch (mode) {
        case Averaging::kMacro: return "macro";
        case Averaging::kMicro: return "micro";
        case Averaging::kSamples: return "samples";
        case Averaging::kWeighted: return "weighted";
    }
    return "?";
}

inline Averaging parse_averaging(const std::string& name) {
    if (name == "macro") return Averaging::kMacro;
    if (name == "micro") return Averaging::kMicro;
    if (name == "samples") return Averaging::kSamples;
    if (name == "weighted") return Averaging::kWeighted;
    throw MetricError("unknown averaging mode '" + name + "'");
}

/// Averages P/R/F1 over the labels listed in `labels` (all when empty).
/// Samples mode reads per-sample predictions from `sm` at `threshold`.
inline Prf average_metrics(Averaging mode, const ScoreMatrix& sm, double threshold,
                           std::vector<std::size_t> labels = {}) {
    const auto counts = confusion_counts(sm, threshold);
    if (labels.empty()) {
        labels.resize(sm.cols);
        std::iota(labels.begin(), labels.end(), std::size_t{0});
    }
    Prf out;
    switch (mode) {
        case Averaging::kMacro:
        case Averaging::kWeighted: {
            double wsum = 0.0;
            for (auto j : labels) {
                const auto m = precision_recall_f1(counts[j]);
                const double w = mode == Averaging::kMacro ? 1.0 : double(counts[j].support());
                out.precision += w * m.precision;
                out.recall += w * m.recall;
                out.f1 += w * m.f1;
                wsum += w;
            }
            out.precision = safe_ratio(out.precision, wsum);
            out.recall = safe_ratio(out.recall, wsum);
            out.f1 = safe_ratio(out.f1, wsum);
            return out;
        }
        case Averaging::kMicro: {
            ConfusionCounts pooled;
            for (auto j : labels) {
                pooled += counts[j];
            }
            return precision_recall_f1(pooled);
        }
        case Averaging::kSamples: {
            if (sm.rows == 0) {
                return out;
            }
            for (std::size_t i = 0; i < sm.rows; ++i) {
                ConfusionCounts c;
                for (auto j : labels) {
                    const bool pred = sm.score(i, j) >= threshold;
                    const bool truth = sm.target(i, j);
                    c.tp += pred && truth;
                    c.fp += pred && !truth;
                    c.fn += !pred && truth;
                }
                const auto m = precision_recall_f1(c);
                out.precision += m.precision;
                out.recall += m.recall;
                out.f1 += m.f1;
            }
            out.precision /= double(sm.rows);
            out.recall /= double(sm.rows);
            out.f1 /= double(sm.rows);
            return out;
        }
    }
    throw MetricError("unknown averaging mode");
}

/// Non-interpolated AP = sum_n (R_n - R_{n-1}) P_n over descending score
/// thresholds; equal scores form a single threshold.
inline double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw MetricError("average_precision: scores and labels differ in length");
    }
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (positives == 0) {
        throw MetricError("average_precision: no positive labels");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0, seen = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            tp += labels[order[i]];
            ++seen;
            ++i;
        }
        const double recall = double(tp) / double(positives);
        ap += (recall - prev_recall) * (double(tp) / double(seen));
        prev_recall = recall;
    }
    return ap;
}

/// Mann-Whitney form of ROC AUC using mid-ranks for ties.
inline double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw MetricError("roc_auc: scores and labels differ in length");
    }
    const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw MetricError("roc_auc: needs both positive and negative labels");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        const double mid_rank = 0.5 * double(i + 1 + j);  // mean of ranks i+1 .. j
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]]) {
                rank_sum += mid_rank;
            }
        }
        i = j;
    }
    const double u = rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
    return u / (double(n_pos) * double(n_neg));
}

struct LabelMetrics {
    std::string name;
    Prf prf;
    std::size_t support = 0;
    std::optional<double> ap;
    std::optional<double> auc;
};

struct MetricsReport {
    double threshold = 0.5;
    std::vector<LabelMetrics> labels;
    Prf macro, micro, samples, weighted;
    double ap_micro = 0.0, auc_micro = 0.0;
    double ap_macro = 0.0, auc_macro = 0.0;
    std::optional<double> accuracy;  // binary mode only
    std::vector<std::string> warnings;

    const Prf& average(Averaging mode) const {
        switch (mode) {
            case Averaging::kMacro: return macro;
            case Averaging::kMicro: return micro;
            case Averaging::kSamples: return samples;
            case Averaging::kWeighted: return weighted;
        }
        return macro;
    }
};

/// Flattened (sample, label) pairs for the given label subset.
inline double micro_average_precision(const ScoreMatrix& sm, const std::vector<std::size_t>& labels) {
    std::vector<double> s;
    std::vector<std::uint8_t> t;
    for (std::size_t i = 0; i < sm.rows; ++i) {
        for (auto j : labels) {
            s.push_back(sm.score(i, j));
            t.push_back(sm.targets[i * sm.cols + j]);
        }
    }
    return average_precision(s, t);
}

inline MetricsReport metrics_report(const ScoreMatrix& sm, double threshold = 0.5) {
    sm.validate();
    MetricsReport r;
    r.threshold = threshold;
    const auto counts = confusion_counts(sm, threshold);
    std::vector<std::size_t> scored;
    double ap_sum = 0.0, auc_sum = 0.0;
    std::size_t auc_n = 0;
    for (std::size_t j = 0; j < sm.cols; ++j) {
        LabelMetrics lm;
        lm.name = sm.label_names.empty() ? "label" + std::to_string(j) : sm.label_names[j];
        lm.prf = precision_recall_f1(counts[j]);
        lm.support = counts[j].support();
        const auto s = sm.column_scores(j);
        const auto t = sm.column_targets(j);
        if (lm.support == 0) {
            r.warnings.push_back("label " + lm.name + " has no positive samples; excluded from macro and summary");
        } else {
            scored.push_back(j);
            lm.ap = average_precision(s, t);
            ap_sum += *lm.ap;
            if (lm.support < sm.rows) {
                lm.auc = roc_auc(s, t);
                auc_sum += *lm.auc;
                ++auc_n;
            }
        }
        r.labels.push_back(std::move(lm));
    }
    if (scored.empty()) {
        throw MetricError("no label has a positive sample");
    }
    r.macro = average_metrics(Averaging::kMacro, sm, threshold, scored);
    r.weighted = average_metrics(Averaging::kWeighted, sm, threshold);
    r.micro = average_metrics(Averaging::kMicro, sm, threshold);
    r.samples = average_metrics(Averaging::kSamples, sm, threshold);
    r.ap_macro = ap_sum / double(scored.size());
    r.ap_micro = micro_average_precision(sm, scored);
    r.auc_macro = auc_n ? auc_sum / double(auc_n) : 0.0;
    {
        std::vector<double> s;
        std::vector<std::uint8_t> t;
        for (std::size_t i = 0; i < sm.rows; ++i) {
            for (auto j : scored) {
                s.push_back(sm.score(i, j));
                t.push_back(sm.targets[i * sm.cols + j]);
            }
        }
        const auto pos = static_cast<std::size_t>(std::count(t.begin(), t.end(), 1));
        if (pos < t.size()) {
            r.auc_micro = roc_auc(s, t);
        } else {
            r.warnings.push_back("every pair is positive; AUC undefined and reported as 0");
        }
    }
    if (sm.cols == 1) {
        r.accuracy = double(counts[0].tp + counts[0].tn) / double(sm.rows);
    }
    return r;
}

/// `metric.path = value` lines at six decimals.
inline void write_report_kv(std::ostream& os, const MetricsReport& r) {
    auto line = [&](const std::string& key, double v) {
        os << key << " = " << std::fixed << std::setprecision(6) << v << '\n';
    };
    line("threshold", r.threshold);
    for (const auto& lm : r.labels) {
        const std::string p = "label." + lm.name + ".";
        line(p + "precision", lm.prf.precision);
        line(p + "recall", lm.prf.recall);
        line(p + "f1", lm.prf.f1);
        os << p << "support = " << lm.support << '\n';
        if (lm.ap) {
            line(p + "ap", *lm.ap);
        }
        if (lm.auc) {
            line(p + "auc", *lm.auc);
        }
    }
    for (auto mode : {Averaging::kMacro, Averaging::kMicro, Averaging::kSamples, Averaging::kWeighted}) {
        const std::string p = std::string("avg.") + averaging_name(mode) + ".";
        const auto& m = r.average(mode);
        line(p + "precision", m.precision);
        line(p + "recall", m.recall);
        line(p + "f1", m.f1);
    }
    line("summary.ap", r.ap_micro);
    line("summary.auc", r.auc_micro);
    line("summary.ap_macro", r.ap_macro);
    line("summary.auc_macro", r.auc_macro);
    if (r.accuracy) {
        line("summary.accuracy", *r.accuracy);
    }
}

/// Aligned per-label table followed by average rows and summary metrics.
inline void write_report_table(std::ostream& os, const MetricsReport& r) {
    std::size_t width = 12;
    for (const auto& lm : r.labels) {
        width = std::max(width, lm.name.size() + 2);
    }
    auto row = [&](const std::string& name, const Prf& m, const std::string& support) {
        os << std::left << std::setw(static_cast<int>(width)) << name << std::right << std::fixed
           << std::setprecision(4) << std::setw(10) << m.f1 << std::setw(11) << m.precision << std::setw(10)
           << m.recall << std::setw(10) << support << '\n';
    };
    os << std::left << std::setw(static_cast<int>(width)) << "" << std::right << std::setw(10) << "f1-score"
       << std::setw(11) << "precision" << std::setw(10) << "recall" << std::setw(10) << "support" << '\n';
    std::size_t total = 0;
    for (const auto& lm : r.labels) {
        row(lm.name, lm.prf, std::to_string(lm.support));
        total += lm.support;
    }
    os << '\n';
    for (auto mode : {Averaging::kMacro, Averaging::kMicro, Averaging::kSamples, Averaging::kWeighted}) {
        row(std::string(averaging_name(mode)) + " avg", r.average(mode), std::to_string(total));
    }
    os << '\n' << std::setprecision(4) << "APS " << r.ap_micro << "  AUC " << r.auc_micro;
    if (r.accuracy) {
        os << "  Accuracy " << *r.accuracy;
    }
    os << '\n';
}

}  // namespace tcnbind
