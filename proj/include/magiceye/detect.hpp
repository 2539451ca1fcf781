#pragma once

/// Detection post-processing: letterbox geometry, multi-scale grid decode,
/// confidence filtering, class-wise NMS and training target assignment.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "magiceye/dataset.hpp"
#include "magiceye/error.hpp"

namespace magiceye::detect {

struct Box {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const noexcept { return x_max - x_min; }
    double height() const noexcept { return y_max - y_min; }
    double area() const noexcept { return std::max(0.0, width()) * std::max(0.0, height()); }
    double center_x() const noexcept { return 0.5 * (x_min + x_max); }
    double center_y() const noexcept { return 0.5 * (y_min + y_max); }
    bool valid() const noexcept { return x_min < x_max && y_min < y_max; }

    static Box from_center(double cx, double cy, double w, double h) noexcept {
        return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    }
    bool operator==(const Box&) const = default;
};

struct Detection {
    int class_index = 0;
    double confidence = 0;
    Box box;  // original-image pixels

    bool operator==(const Detection&) const = default;
};

/// Intersection over union; zero for disjoint or degenerate boxes.
inline double iou(const Box& a, const Box& b) noexcept {
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

// ---------------------------------------------------------------------------
// Letterbox

struct LetterboxTransform {
    double scale = 1.0;
    double pad_x = 0.0;
    double pad_y = 0.0;
    int input_size = 640;
    int image_width = 640;
    int image_height = 640;

    std::pair<double, double> to_network(double x, double y) const noexcept {
        return {x * scale + pad_x, y * scale + pad_y};
    }
    std::pair<double, double> to_image(double x, double y) const noexcept {
        return {(x - pad_x) / scale, (y - pad_y) / scale};
    }
    Box to_network(const Box& b) const noexcept {
        auto [x0, y0] = to_network(b.x_min, b.y_min);
        auto [x1, y1] = to_network(b.x_max, b.y_max);
        return {x0, y0, x1, y1};
    }
    Box to_image(const Box& b) const noexcept {
        auto [x0, y0] = to_image(b.x_min, b.y_min);
        auto [x1, y1] = to_image(b.x_max, b.y_max);
        return {x0, y0, x1, y1};
    }
};

/// Aspect-preserving resize of an image into a square network input with the
/// scaled image centered by symmetric padding.
inline LetterboxTransform compute_letterbox(int image_w, int image_h, int input_size) {
    if (image_w <= 0 || image_h <= 0 || input_size <= 0)
        throw ValidationError("letterbox: dimensions must be positive");
    LetterboxTransform t;
    t.input_size = input_size;
    t.image_width = image_w;
    t.image_height = image_h;
    t.scale = static_cast<double>(input_size) / static_cast<double>(std::max(image_w, image_h));
    // The long side fills the input; rounding can leave it a hair negative.
    t.pad_x = std::max(0.0, (input_size - image_w * t.scale) / 2.0);
    t.pad_y = std::max(0.0, (input_size - image_h * t.scale) / 2.0);
    return t;
}

// ---------------------------------------------------------------------------
// Raw predictor output

struct Anchor {
    double width = 0, height = 0;  // network-input pixels
    bool operator==(const Anchor&) const = default;
};

/// One detection head. `values` is laid out [gy][gx][anchor][5 + num_classes]
/// holding (tx, ty, tw, th, t_obj, t_class...).
struct RawGridOutput {
    int grid_w = 0;
    int grid_h = 0;
    int num_classes = 0;
    std::vector<Anchor> anchors;
    std::vector<double> values;

    std::size_t slot_width() const noexcept { return 5 + static_cast<std::size_t>(num_classes); }
    std::size_t expected_size() const noexcept {
        return static_cast<std::size_t>(grid_w) * static_cast<std::size_t>(grid_h) * anchors.size() * slot_width();
    }
    std::size_t offset(int gx, int gy, std::size_t a) const noexcept {
        return ((static_cast<std::size_t>(gy) * static_cast<std::size_t>(grid_w) + static_cast<std::size_t>(gx)) *
                    anchors.size() +
                a) *
               slot_width();
    }
    std::span<double> slot(int gx, int gy, std::size_t a) { return {values.data() + offset(gx, gy, a), slot_width()}; }
    std::span<const double> slot(int gx, int gy, std::size_t a) const {
        return {values.data() + offset(gx, gy, a), slot_width()};
    }

    /// Zero-initialized head with every value set to `fill`.
    static RawGridOutput make(int grid_w, int grid_h, int num_classes, std::vector<Anchor> anchors, double fill = 0.0) {
        RawGridOutput r{grid_w, grid_h, num_classes, std::move(anchors), {}};
        r.values.assign(r.expected_size(), fill);
        return r;
    }
};

inline void validate_heads(std::span<const RawGridOutput> heads) {
    for (std::size_t i = 0; i < heads.size(); ++i) {
        const auto& h = heads[i];
        if (h.grid_w <= 0 || h.grid_h <= 0 || h.anchors.empty() || h.num_classes <= 0)
            throw ValidationError("head " + std::to_string(i) + ": empty grid, anchors or classes");
        if (h.values.size() != h.expected_size())
            throw ValidationError("head " + std::to_string(i) + ": shape mismatch, expected " +
                                  std::to_string(h.expected_size()) + " values, got " +
                                  std::to_string(h.values.size()));
        if (h.num_classes != heads[0].num_classes) throw ValidationError("heads disagree on class count");
    }
    if (heads.size() == 3) {
        const int g = heads[0].grid_w;
        const bool ok = heads[1].grid_w == 2 * g && heads[2].grid_w == 4 * g && heads[0].grid_h * 2 == heads[1].grid_h &&
                        heads[0].grid_h * 4 == heads[2].grid_h;
        if (!ok) throw ValidationError("three-scale heads must have grid sizes in ratio 1:2:4");
    }
}

/// Standard head layout for a square input: strides 32, 16, 8.
inline std::array<int, 3> grid_sizes(int input_size) {
    if (input_size <= 0 || input_size % 32 != 0) throw ValidationError("input size must be a positive multiple of 32");
    return {input_size / 32, input_size / 16, input_size / 8};
}

// Synthetic anchors per head (coarse to fine). Not trained priors.
inline std::vector<std::vector<Anchor>> default_anchors() {
    return {{{116, 90}, {156, 198}, {373, 326}}, {{30, 61}, {62, 45}, {59, 119}}, {{10, 13}, {16, 30}, {33, 23}}};
}

inline constexpr double kSizeLogitClamp = 10.0;
inline constexpr double kDefaultConfThreshold = 0.25;
inline constexpr double kDefaultNmsIou = 0.45;

/// Decoded slot in network-input pixels, before letterbox inversion.
struct SlotPrediction {
    Box box;
    double objectness = 0;
    int best_class = 0;
    double best_class_score = 0;
};

inline SlotPrediction decode_slot(std::span<const double> v, int gx, int gy, const Anchor& anchor, double stride_x,
                                  double stride_y, int num_classes) {
    SlotPrediction p;
    const double cx = (sigmoid(v[0]) + gx) * stride_x;
    const double cy = (sigmoid(v[1]) + gy) * stride_y;
    const double w = anchor.width * std::exp(std::clamp(v[2], -kSizeLogitClamp, kSizeLogitClamp));
    const double h = anchor.height * std::exp(std::clamp(v[3], -kSizeLogitClamp, kSizeLogitClamp));
    p.box = Box::from_center(cx, cy, w, h);
    p.objectness = sigmoid(v[4]);
    p.best_class_score = -1.0;
    for (int k = 0; k < num_classes; ++k) {
        const double s = sigmoid(v[5 + static_cast<std::size_t>(k)]);
        if (s > p.best_class_score) {
            p.best_class_score = s;
            p.best_class = k;
        }
    }
    return p;
}

/// Every anchor slot of every head whose objectness x best class score reaches
/// `conf_threshold`, mapped back to original-image pixels and clipped.
inline std::vector<Detection> decode_predictions(std::span<const RawGridOutput> heads,
                                                 const LetterboxTransform& transform, double conf_threshold) {
    if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0))
        throw ValidationError("confidence threshold out of range");
    validate_heads(heads);
    std::vector<Detection> out;
    const double W = transform.image_width;
    const double H = transform.image_height;
    for (const auto& head : heads) {
        const double sx = static_cast<double>(transform.input_size) / head.grid_w;
        const double sy = static_cast<double>(transform.input_size) / head.grid_h;
        for (int gy = 0; gy < head.grid_h; ++gy)
            for (int gx = 0; gx < head.grid_w; ++gx)
                for (std::size_t a = 0; a < head.anchors.size(); ++a) {
                    const auto v = head.slot(gx, gy, a);
                    // Cheap reject before the full decode.
                    if (sigmoid(v[4]) < conf_threshold) continue;
                    const auto p = decode_slot(v, gx, gy, head.anchors[a], sx, sy, head.num_classes);
                    const double conf = p.objectness * p.best_class_score;
                    if (conf < conf_threshold) continue;
                    Box b = transform.to_image(p.box);
                    b.x_min = std::clamp(b.x_min, 0.0, W);
                    b.x_max = std::clamp(b.x_max, 0.0, W);
                    b.y_min = std::clamp(b.y_min, 0.0, H);
                    b.y_max = std::clamp(b.y_max, 0.0, H);
                    if (!b.valid()) continue;
                    out.push_back({p.best_class, std::clamp(conf, 0.0, 1.0), b});
                }
    }
    return out;
}

// ---------------------------------------------------------------------------
// NMS

/// Deterministic ranking: confidence desc, class asc, then box coordinates asc.
inline bool ranks_before(const Detection& a, const Detection& b) noexcept {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.class_index != b.class_index) return a.class_index < b.class_index;
    if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
    if (a.box.y_min != b.box.y_min) return a.box.y_min < b.box.y_min;
    if (a.box.x_max != b.box.x_max) return a.box.x_max < b.box.x_max;
    return a.box.y_max < b.box.y_max;
}

inline void sort_by_rank(std::vector<Detection>& dets) { std::stable_sort(dets.begin(), dets.end(), ranks_before); }

/// Greedy class-wise suppression. A detection is kept iff its IoU with every
/// previously kept detection of the same class is below `iou_threshold`.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) throw ValidationError("NMS IoU threshold out of range");
    sort_by_rank(dets);
    std::vector<Detection> kept;
    kept.reserve(dets.size());
    for (const auto& d : dets) {
        const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
            return k.class_index == d.class_index && iou(k.box, d.box) >= iou_threshold;
        });
        if (!overlaps) kept.push_back(d);
    }
    return kept;
}

/// decode_predictions followed by nms.
inline std::vector<Detection> postprocess(std::span<const RawGridOutput> heads, const LetterboxTransform& transform,
                                          double conf_threshold = kDefaultConfThreshold,
                                          double iou_threshold = kDefaultNmsIou) {
    return nms(decode_predictions(heads, transform, conf_threshold), iou_threshold);
}

// ---------------------------------------------------------------------------
// Target assignment

struct TargetCell {
    int class_index = 0;
    double offset_x = 0;  // center position inside the cell, [0,1)
    double offset_y = 0;
    double width = 0;  // network-input pixels
    double height = 0;
    bool operator==(const TargetCell&) const = default;
};

struct TargetScale {
    int grid_w = 0;
    int grid_h = 0;
    std::size_t num_anchors = 0;
    std::vector<std::optional<TargetCell>> slots;  // [gy][gx][anchor]

    std::size_t index(int gx, int gy, std::size_t a) const noexcept {
        return (static_cast<std::size_t>(gy) * static_cast<std::size_t>(grid_w) + static_cast<std::size_t>(gx)) *
                   num_anchors +
               a;
    }
    const std::optional<TargetCell>& at(int gx, int gy, std::size_t a) const { return slots[index(gx, gy, a)]; }
    std::size_t assigned() const {
        return static_cast<std::size_t>(std::count_if(slots.begin(), slots.end(), [](auto& s) { return s.has_value(); }));
    }
};

struct TargetGrid {
    std::vector<TargetScale> scales;

    std::size_t assigned() const {
        std::size_t n = 0;
        for (const auto& s : scales) n += s.assigned();
        return n;
    }
    bool empty() const { return assigned() == 0; }
};

/// Shape-only IoU of two boxes sharing a center.
inline double shape_iou(double w0, double h0, double w1, double h1) noexcept {
    const double inter = std::min(w0, w1) * std::min(h0, h1);
    const double uni = w0 * h0 + w1 * h1 - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Cell index along one axis for a normalized coordinate; a center on a cell
/// boundary belongs to the higher cell.
inline int cell_of(double normalized, int grid) noexcept {
    const int c = static_cast<int>(std::floor(normalized * grid));
    return std::clamp(c, 0, grid - 1);
}

/// Assigns each box (normalized to the network input) to the cell containing
/// its center at every scale, using the best shape-IoU anchor of that scale.
/// A later box landing on an occupied (cell, anchor) slot overwrites it.
inline TargetGrid assign_targets(std::span<const dataset::GroundTruthBox> boxes, std::span<const int> grids,
                                 const std::vector<std::vector<Anchor>>& anchors, int input_size) {
    if (grids.size() != anchors.size()) throw ValidationError("assign_targets: one anchor set per scale required");
    TargetGrid tg;
    for (std::size_t s = 0; s < grids.size(); ++s) {
        TargetScale ts{grids[s], grids[s], anchors[s].size(), {}};
        ts.slots.assign(static_cast<std::size_t>(grids[s]) * static_cast<std::size_t>(grids[s]) * ts.num_anchors,
                        std::nullopt);
        for (const auto& b : boxes) {
            const double cx = 0.5 * (b.x_min + b.x_max);
            const double cy = 0.5 * (b.y_min + b.y_max);
            const double w = (b.x_max - b.x_min) * input_size;
            const double h = (b.y_max - b.y_min) * input_size;
            const int gx = cell_of(cx, ts.grid_w);
            const int gy = cell_of(cy, ts.grid_h);
            std::size_t best = 0;
            double best_iou = -1;
            for (std::size_t a = 0; a < anchors[s].size(); ++a) {
                const double v = shape_iou(w, h, anchors[s][a].width, anchors[s][a].height);
                if (v > best_iou) {
                    best_iou = v;
                    best = a;
                }
            }
            ts.slots[ts.index(gx, gy, best)] = TargetCell{b.class_index, cx * ts.grid_w - gx, cy * ts.grid_h - gy, w, h};
        }
        tg.scales.push_back(std::move(ts));
    }
    return tg;
}

/// Ground-truth box (normalized to the original image) re-normalized to the
/// letterboxed network input.
inline dataset::GroundTruthBox to_network_normalized(const dataset::GroundTruthBox& b, const LetterboxTransform& t) {
    const double W = t.image_width, H = t.image_height, S = t.input_size;
    const Box px = t.to_network(Box{b.x_min * W, b.y_min * H, b.x_max * W, b.y_max * H});
    return {b.class_index, px.x_min / S, px.y_min / S, px.x_max / S, px.y_max / S};
}

inline Box to_pixels(const dataset::GroundTruthBox& b, int image_w, int image_h) noexcept {
    return {b.x_min * image_w, b.y_min * image_h, b.x_max * image_w, b.y_max * image_h};
}

} // namespace magiceye::detect
