#pragma once

// Segmentation scores from a pixel confusion matrix, and analytic
// relative-inference-time accounting.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "razn/errors.hpp"
#include "razn/tensor.hpp"

namespace razn {

/// counts[t * C + p] = pixels with truth t predicted as p.
class ConfusionAccumulator {
public:
    explicit ConfusionAccumulator(int classes = 4) : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
        if (classes < 1) throw ConfigError("confusion matrix needs at least one class");
    }

    int classes() const { return classes_; }
    std::uint64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * classes_ + pred]; }
    const std::vector<std::uint64_t>& counts() const { return counts_; }

    void add(const IntMask& truth, const IntMask& pred) {
        if (truth.height != pred.height || truth.width != pred.width) {
            throw ValidationError("confusion: truth " + std::to_string(truth.height) + "x" + std::to_string(truth.width) +
                                  " vs prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width));
        }
        for (std::size_t i = 0; i < truth.size(); ++i) add(truth.data[i], pred.data[i]);
    }

    void add(int truth, int pred, std::uint64_t n = 1) {
        if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_) {
            throw ValidationError("confusion: class index out of range");
        }
        counts_[static_cast<std::size_t>(truth) * classes_ + pred] += n;
    }

    void merge(const ConfusionAccumulator& o) {
        if (o.classes_ != classes_) throw ValidationError("confusion: cannot merge different class counts");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto v : counts_) s += v;
        return s;
    }

    std::uint64_t truth_count(int c) const {
        std::uint64_t s = 0;
        for (int p = 0; p < classes_; ++p) s += at(c, p);
        return s;
    }

    std::uint64_t pred_count(int c) const {
        std::uint64_t s = 0;
        for (int t = 0; t < classes_; ++t) s += at(t, c);
        return s;
    }

    bool operator==(const ConfusionAccumulator&) const = default;

private:
    int classes_;
    std::vector<std::uint64_t> counts_;
};

/// Per-class IOU; empty where the class has zero union.
inline std::vector<std::optional<double>> iou_per_class(const ConfusionAccumulator& acc) {
    std::vector<std::optional<double>> out;
    for (int c = 0; c < acc.classes(); ++c) {
        const std::uint64_t tp = acc.at(c, c);
        const std::uint64_t uni = acc.truth_count(c) + acc.pred_count(c) - tp;
        if (uni == 0) {
            out.emplace_back();
        } else {
            out.emplace_back(static_cast<double>(tp) / static_cast<double>(uni));
        }
    }
    return out;
}

inline double mean_iou(const ConfusionAccumulator& acc) {
    double sum = 0.0;
    int n = 0;
    for (const auto& v : iou_per_class(acc)) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    if (n == 0) throw UndefinedMetricError("mean IOU undefined: every class has zero union");
    return sum / n;
}

/// Ground-truth class frequencies of the scored pixels.
inline std::vector<double> class_frequencies(const ConfusionAccumulator& acc) {
    const double total = static_cast<double>(acc.total());
    std::vector<double> f(static_cast<std::size_t>(acc.classes()), 0.0);
    if (total == 0.0) return f;
    for (int c = 0; c < acc.classes(); ++c) f[static_cast<std::size_t>(c)] = static_cast<double>(acc.truth_count(c)) / total;
    return f;
}

/// Inverse-frequency weighted IOU with weights normalized to sum to one; zero-frequency classes excluded.
inline double weighted_iou(const ConfusionAccumulator& acc, const std::vector<double>& freq) {
    if (freq.size() != static_cast<std::size_t>(acc.classes())) throw ValidationError("weighted IOU: frequency count mismatch");
    const auto iou = iou_per_class(acc);
    double wsum = 0.0, total = 0.0;
    for (std::size_t c = 0; c < freq.size(); ++c) {
        if (!(freq[c] > 0.0)) continue;
        const double w = 1.0 / freq[c];
        wsum += w;
        total += w * iou[c].value_or(0.0);
    }
    if (wsum == 0.0) throw UndefinedMetricError("weighted IOU undefined: every class frequency is zero");
    return total / wsum;
}

inline double weighted_iou(const ConfusionAccumulator& acc) { return weighted_iou(acc, class_frequencies(acc)); }

/// IOU of the union of `group` against everything else.
inline std::optional<double> merged_iou(const ConfusionAccumulator& acc, const std::vector<int>& group) {
    std::vector<bool> in(static_cast<std::size_t>(acc.classes()), false);
    for (int g : group) in.at(static_cast<std::size_t>(g)) = true;
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (int t = 0; t < acc.classes(); ++t) {
        for (int p = 0; p < acc.classes(); ++p) {
            const bool ti = in[static_cast<std::size_t>(t)], pi = in[static_cast<std::size_t>(p)];
            if (ti && pi) tp += acc.at(t, p);
            if (!ti && pi) fp += acc.at(t, p);
            if (ti && !pi) fn += acc.at(t, p);
        }
    }
    if (tp + fp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

// ---------------------------------------------------------------------------
// cost accounting

/// Work done for one top-level patch, in units of one segmentation pass and one policy pass.
struct PatchCost {
    std::vector<std::uint64_t> seg_units;  // indexed by pyramid level
    std::uint64_t policy_units = 0;

    void add_seg(int level, std::uint64_t n = 1) {
        if (seg_units.size() <= static_cast<std::size_t>(level)) seg_units.resize(static_cast<std::size_t>(level) + 1, 0);
        seg_units[static_cast<std::size_t>(level)] += n;
    }
    std::uint64_t total_seg() const {
        std::uint64_t s = 0;
        for (auto v : seg_units) s += v;
        return s;
    }
    /// Cost relative to one segmentation pass over the patch.
    double relative(double policy_ratio) const {
        return static_cast<double>(policy_units) * policy_ratio + static_cast<double>(total_seg());
    }
};

struct CostLedger {
    std::vector<PatchCost> patches;
};

struct TimeSummary {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation over patches
    std::size_t patches = 0;
};

inline TimeSummary relative_time(const CostLedger& ledger, double policy_ratio) {
    if (ledger.patches.empty()) throw UndefinedMetricError("relative time undefined for an empty ledger");
    TimeSummary s;
    s.patches = ledger.patches.size();
    for (const auto& p : ledger.patches) s.mean += p.relative(policy_ratio);
    s.mean /= static_cast<double>(s.patches);
    for (const auto& p : ledger.patches) {
        const double d = p.relative(policy_ratio) - s.mean;
        s.std += d * d;
    }
    s.std = std::sqrt(s.std / static_cast<double>(s.patches));
    return s;
}

// ---------------------------------------------------------------------------
// report

inline const std::vector<int> kNonCarcinoma{0, 1};
inline const std::vector<int> kCarcinoma{2, 3};

struct EvalReport {
    std::string method;
    std::vector<std::optional<double>> class_iou;
    std::optional<double> non_carcinoma_iou;
    std::optional<double> carcinoma_iou;
    double miou = 0.0;
    double wiou = 0.0;
    TimeSummary time;
    std::uint64_t pixels = 0;
};

inline EvalReport make_report(const std::string& method, const ConfusionAccumulator& acc, const TimeSummary& time) {
    EvalReport r;
    r.method = method;
    r.class_iou = iou_per_class(acc);
    r.non_carcinoma_iou = merged_iou(acc, kNonCarcinoma);
    r.carcinoma_iou = merged_iou(acc, kCarcinoma);
    r.miou = mean_iou(acc);
    r.wiou = weighted_iou(acc);
    r.time = time;
    r.pixels = acc.total();
    return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json cls = nlohmann::json::array();
    for (const auto& v : r.class_iou) cls.push_back(opt(v));
    return {{"method", r.method},
            {"class_iou", cls},
            {"non_carcinoma_iou", opt(r.non_carcinoma_iou)},
            {"carcinoma_iou", opt(r.carcinoma_iou)},
            {"miou", r.miou},
            {"weighted_iou", r.wiou},
            {"relative_time_mean", r.time.mean},
            {"relative_time_std", r.time.std},
            {"patches", r.time.patches},
            {"pixels", r.pixels}};
}

/// Fixed-width table, one row per method.
inline std::string format_table(const std::vector<EvalReport>& rows) {
    std::ostringstream os;
    auto cell = [&](const std::optional<double>& v) {
        if (v) {
            os << std::setw(12) << std::fixed << std::setprecision(4) << *v;
        } else {
            os << std::setw(12) << "n/a";
        }
    };
    os << std::left << std::setw(22) << "method" << std::right << std::setw(12) << "non-carc" << std::setw(12) << "carc"
       << std::setw(12) << "mIOU" << std::setw(12) << "wIOU" << std::setw(20) << "rel. time" << '\n';
    for (const auto& r : rows) {
        os << std::left << std::setw(22) << r.method << std::right;
        cell(r.non_carcinoma_iou);
        cell(r.carcinoma_iou);
        cell(r.miou);
        cell(r.wiou);
        std::ostringstream t;
        t << std::fixed << std::setprecision(3) << r.time.mean << " +- " << r.time.std;
        os << std::setw(20) << t.str() << '\n';
    }
    return os.str();
}

}  // namespace razn
