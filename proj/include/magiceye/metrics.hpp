#pragma once

/// Detection and classification metrics: precision, recall, greedy
/// detection/truth matching, all-points AP, mAP and confusion matrices.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "magiceye/detect.hpp"
#include "magiceye/error.hpp"

namespace magiceye::metrics {

inline constexpr double kDefaultEvalIou = 0.5;

struct MatchCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::optional<std::int64_t> tn;  // undefined for box detection
};

/// tp / (tp + fp); 1.0 when nothing was predicted.
inline double precision(const MatchCounts& c) noexcept {
    const auto denom = c.tp + c.fp;
    return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// tp / (tp + fn); 1.0 when there was nothing to find.
inline double recall(const MatchCounts& c) noexcept {
    const auto denom = c.tp + c.fn;
    return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double f1_score(double p, double r) noexcept { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

struct TruthBox {
    int class_index = 0;
    detect::Box box;
};

struct MatchResult {
    std::vector<bool> is_tp;                        // parallel to the input detections
    std::vector<std::optional<std::size_t>> truth;  // matched truth index per detection
    std::size_t false_negatives = 0;

    std::size_t true_positives() const { return static_cast<std::size_t>(std::count(is_tp.begin(), is_tp.end(), true)); }
    std::size_t false_positives() const { return is_tp.size() - true_positives(); }
};

/// Detection indices in ranking order (see detect::ranks_before).
inline std::vector<std::size_t> ranking(std::span<const detect::Detection> dets) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return detect::ranks_before(dets[a], dets[b]); });
    return order;
}

namespace detail {

// Greedy one-to-one matching in ranking order. When `same_class` is set only
// truths of the detection's class are candidates.
inline MatchResult greedy_match(std::span<const detect::Detection> dets, std::span<const TruthBox> truths,
                                double iou_threshold, bool same_class) {
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) throw ValidationError("IoU threshold out of range");
    MatchResult r;
    r.is_tp.assign(dets.size(), false);
    r.truth.assign(dets.size(), std::nullopt);
    std::vector<bool> taken(truths.size(), false);
    for (std::size_t di : ranking(dets)) {
        const auto& d = dets[di];
        std::optional<std::size_t> best;
        double best_iou = -1.0;
        for (std::size_t ti = 0; ti < truths.size(); ++ti) {
            if (taken[ti] || (same_class && truths[ti].class_index != d.class_index)) continue;
            const double v = detect::iou(d.box, truths[ti].box);
            if (v > best_iou) {
                best_iou = v;
                best = ti;
            }
        }
        if (best && best_iou >= iou_threshold) {
            taken[*best] = true;
            r.is_tp[di] = true;
            r.truth[di] = best;
        }
    }
    r.false_negatives = static_cast<std::size_t>(std::count(taken.begin(), taken.end(), false));
    return r;
}

} // namespace detail

/// Per-class greedy matching in confidence order; each truth is consumed at
/// most once and a detection is a TP iff its best-IoU unmatched truth of the
/// same class reaches `iou_threshold`.
inline MatchResult match_detections(std::span<const detect::Detection> dets, std::span<const TruthBox> truths,
                                    double iou_threshold = kDefaultEvalIou) {
    return detail::greedy_match(dets, truths, iou_threshold, true);
}

/// All-points interpolated AP over TP/FP flags already sorted by descending
/// confidence. Undefined (nullopt) when the class has no ground truth.
inline std::optional<double> average_precision(const std::vector<bool>& flags_by_confidence, std::size_t total_truths) {
    if (total_truths == 0) return std::nullopt;
    const std::size_t n = flags_by_confidence.size();
    std::vector<double> prec(n), rec(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (flags_by_confidence[i]) ++tp;
        prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        rec[i] = static_cast<double>(tp) / static_cast<double>(total_truths);
    }
    // Precision envelope: monotonically non-increasing from the right.
    for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ap += (rec[i] - prev_recall) * prec[i];
        prev_recall = rec[i];
    }
    return std::clamp(ap, 0.0, 1.0);
}

/// Unweighted mean over classes whose AP is defined.
inline double mean_average_precision(const std::map<int, std::optional<double>>& per_class_ap) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [cls, ap] : per_class_ap)
        if (ap) {
            sum += *ap;
            ++n;
        }
    if (n == 0) throw ValidationError("mAP: no class has a defined AP");
    return sum / static_cast<double>(n);
}

inline double mean_average_precision(const std::map<int, double>& per_class_ap) {
    std::map<int, std::optional<double>> m;
    for (const auto& [k, v] : per_class_ap) m[k] = v;
    return mean_average_precision(m);
}

/// (num_classes + 1)^2 counts; rows are truth classes, columns predicted
/// classes, and index num_classes is background.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = 0)
        : n_(static_cast<std::size_t>(num_classes) + 1), cells_(n_ * n_, 0) {}

    std::size_t dim() const noexcept { return n_; }
    int background() const noexcept { return static_cast<int>(n_) - 1; }
    std::int64_t at(int truth, int predicted) const { return cells_[idx(truth, predicted)]; }
    void add(int truth, int predicted, std::int64_t k = 1) { cells_[idx(truth, predicted)] += k; }

    std::int64_t total() const { return std::accumulate(cells_.begin(), cells_.end(), std::int64_t{0}); }
    std::int64_t trace() const {
        std::int64_t t = 0;
        for (std::size_t i = 0; i < n_; ++i) t += cells_[i * n_ + i];
        return t;
    }
    std::int64_t row_sum(int truth) const {
        std::int64_t s = 0;
        for (std::size_t j = 0; j < n_; ++j) s += cells_[static_cast<std::size_t>(truth) * n_ + j];
        return s;
    }
    std::int64_t col_sum(int predicted) const {
        std::int64_t s = 0;
        for (std::size_t i = 0; i < n_; ++i) s += cells_[i * n_ + static_cast<std::size_t>(predicted)];
        return s;
    }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        if (o.n_ != n_) throw ValidationError("confusion matrix dimension mismatch");
        for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] += o.cells_[i];
        return *this;
    }
    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t idx(int truth, int predicted) const {
        if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= n_ || static_cast<std::size_t>(predicted) >= n_)
            throw ValidationError("confusion matrix index out of range");
        return static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(predicted);
    }

    std::size_t n_;
    std::vector<std::int64_t> cells_;
};

/// Class-agnostic greedy matching so that cross-class confusions land off the
/// diagonal. Unmatched detections go to the background row, unmatched truths
/// to the background column.
inline ConfusionMatrix confusion_matrix(std::span<const detect::Detection> dets, std::span<const TruthBox> truths,
                                        int num_classes, double iou_threshold = kDefaultEvalIou) {
    ConfusionMatrix cm(num_classes);
    const auto m = detail::greedy_match(dets, truths, iou_threshold, false);
    std::vector<bool> matched(truths.size(), false);
    for (std::size_t di = 0; di < dets.size(); ++di) {
        if (m.truth[di]) {
            matched[*m.truth[di]] = true;
            cm.add(truths[*m.truth[di]].class_index, dets[di].class_index);
        } else {
            cm.add(cm.background(), dets[di].class_index);
        }
    }
    for (std::size_t ti = 0; ti < truths.size(); ++ti)
        if (!matched[ti]) cm.add(truths[ti].class_index, cm.background());
    return cm;
}

// ---------------------------------------------------------------------------
// Dataset-level report

struct ImageEval {
    std::vector<detect::Detection> detections;
    std::vector<TruthBox> truths;
};

struct ClassStats {
    std::size_t truths = 0;
    std::size_t detections = 0;
    std::size_t tp = 0;
    std::optional<double> ap;
};

struct EvalReport {
    std::map<int, ClassStats> per_class;  // classes with any truth or detection
    std::optional<double> map_score;
    double precision = 1.0;
    double recall = 1.0;
    MatchCounts counts;
    ConfusionMatrix confusion;
    double iou_threshold = kDefaultEvalIou;

    std::map<int, std::optional<double>> per_class_ap() const {
        std::map<int, std::optional<double>> m;
        for (const auto& [c, s] : per_class) m[c] = s.ap;
        return m;
    }
};

/// Matches every image independently, then ranks all detections of a class
/// across images by confidence to build its PR curve.
inline EvalReport evaluate(std::span<const ImageEval> images, int num_classes, double iou_threshold = kDefaultEvalIou) {
    EvalReport rep;
    rep.iou_threshold = iou_threshold;
    rep.confusion = ConfusionMatrix(num_classes);
    struct Scored {
        double confidence;
        std::size_t image, det;
        bool tp;
    };
    std::map<int, std::vector<Scored>> scored;
    for (std::size_t ii = 0; ii < images.size(); ++ii) {
        const auto& im = images[ii];
        for (const auto& d : im.detections)
            if (d.class_index < 0 || d.class_index >= num_classes)
                throw ValidationError("detection class index out of range");
        for (const auto& t : im.truths) {
            if (t.class_index < 0 || t.class_index >= num_classes) throw ValidationError("truth class index out of range");
            ++rep.per_class[t.class_index].truths;
        }
        const auto m = match_detections(im.detections, im.truths, iou_threshold);
        for (std::size_t di = 0; di < im.detections.size(); ++di) {
            const auto& d = im.detections[di];
            auto& cs = rep.per_class[d.class_index];
            ++cs.detections;
            if (m.is_tp[di]) ++cs.tp;
            scored[d.class_index].push_back({d.confidence, ii, di, m.is_tp[di]});
        }
        rep.counts.tp += static_cast<std::int64_t>(m.true_positives());
        rep.counts.fp += static_cast<std::int64_t>(m.false_positives());
        rep.counts.fn += static_cast<std::int64_t>(m.false_negatives);
        rep.confusion += confusion_matrix(im.detections, im.truths, num_classes, iou_threshold);
    }
    for (auto& [cls, stats] : rep.per_class) {
        auto& v = scored[cls];
        std::stable_sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            if (a.image != b.image) return a.image < b.image;
            return a.det < b.det;
        });
        std::vector<bool> flags;
        for (const auto& s : v) flags.push_back(s.tp);
        stats.ap = average_precision(flags, stats.truths);
    }
    const auto aps = rep.per_class_ap();
    if (std::any_of(aps.begin(), aps.end(), [](auto& kv) { return kv.second.has_value(); }))
        rep.map_score = mean_average_precision(aps);
    rep.precision = precision(rep.counts);
    rep.recall = recall(rep.counts);
    return rep;
}

} // namespace magiceye::metrics
