#pragma once

// Brute-force reference implementations. They deliberately avoid calling the
// library's matching, NMS, AP and identification code so that agreement is
// meaningful.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "magiceye/detect.hpp"
#include "magiceye/face.hpp"
#include "magiceye/metrics.hpp"

namespace oracle {

using magiceye::detect::Box;
using magiceye::detect::Detection;
using magiceye::metrics::TruthBox;

inline double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

inline double box_iou(const Box& a, const Box& b) {
    const double inter = overlap(a.x_min, a.x_max, b.x_min, b.x_max) * overlap(a.y_min, a.y_max, b.y_min, b.y_max);
    const double ua = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
    return ua > 0 ? inter / ua : 0.0;
}

// Confidence desc, class asc, then corners asc; remaining ties by input index.
inline std::vector<std::size_t> rank(const std::vector<Detection>& d) {
    std::vector<std::tuple<double, int, double, double, double, double, std::size_t>> keys;
    for (std::size_t i = 0; i < d.size(); ++i)
        keys.emplace_back(-d[i].confidence, d[i].class_index, d[i].box.x_min, d[i].box.y_min, d[i].box.x_max,
                          d[i].box.y_max, i);
    std::sort(keys.begin(), keys.end());
    std::vector<std::size_t> out;
    for (const auto& k : keys) out.push_back(std::get<6>(k));
    return out;
}

// Forward-suppression form: every survivor knocks out all lower-ranked
// same-class boxes overlapping it at or above the threshold.
inline std::vector<Detection> nms(const std::vector<Detection>& d, double thr) {
    const auto order = rank(d);
    std::vector<bool> dead(order.size(), false);
    std::vector<Detection> kept;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (dead[i]) continue;
        const auto& a = d[order[i]];
        kept.push_back(a);
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            const auto& b = d[order[j]];
            if (b.class_index == a.class_index && box_iou(a.box, b.box) >= thr) dead[j] = true;
        }
    }
    return kept;
}

struct Match {
    std::vector<bool> tp;
    std::vector<int> truth;  // -1 when unmatched
    std::size_t fn = 0;
};

// Precomputes the IoU table, then walks detections in rank order.
inline Match match(const std::vector<Detection>& d, const std::vector<TruthBox>& t, double thr, bool same_class) {
    std::vector<std::vector<double>> table(d.size(), std::vector<double>(t.size()));
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < t.size(); ++j) table[i][j] = box_iou(d[i].box, t[j].box);
    Match m{std::vector<bool>(d.size(), false), std::vector<int>(d.size(), -1), 0};
    std::set<std::size_t> used;
    for (std::size_t i : rank(d)) {
        int best = -1;
        for (std::size_t j = 0; j < t.size(); ++j) {
            if (used.count(j) || (same_class && t[j].class_index != d[i].class_index)) continue;
            if (best < 0 || table[i][j] > table[i][static_cast<std::size_t>(best)]) best = static_cast<int>(j);
        }
        if (best >= 0 && table[i][static_cast<std::size_t>(best)] >= thr) {
            used.insert(static_cast<std::size_t>(best));
            m.tp[i] = true;
            m.truth[i] = best;
        }
    }
    m.fn = t.size() - used.size();
    return m;
}

// Area under the precision envelope, computed by scanning each recall step
// and taking the maximum precision at any equal-or-higher recall.
inline std::optional<double> ap(const std::vector<bool>& flags, std::size_t truths) {
    if (truths == 0) return std::nullopt;
    std::vector<std::pair<double, double>> pr;  // (recall, precision)
    std::size_t tp = 0;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        tp += flags[i] ? 1 : 0;
        pr.emplace_back(static_cast<double>(tp) / static_cast<double>(truths), static_cast<double>(tp) / static_cast<double>(i + 1));
    }
    double area = 0, prev = 0;
    for (std::size_t i = 0; i < pr.size(); ++i) {
        if (pr[i].first <= prev) continue;
        double best = 0;
        for (const auto& [r, p] : pr)
            if (r >= pr[i].first) best = std::max(best, p);
        area += (pr[i].first - prev) * best;
        prev = pr[i].first;
    }
    return area;
}

// Rows truth, columns predicted, index n = background.
inline std::vector<std::vector<long>> confusion(const std::vector<Detection>& d, const std::vector<TruthBox>& t, int n,
                                                double thr) {
    std::vector<std::vector<long>> cm(static_cast<std::size_t>(n) + 1, std::vector<long>(static_cast<std::size_t>(n) + 1, 0));
    const auto m = match(d, t, thr, false);
    std::vector<bool> hit(t.size(), false);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto p = static_cast<std::size_t>(d[i].class_index);
        if (m.truth[i] >= 0) {
            hit[static_cast<std::size_t>(m.truth[i])] = true;
            ++cm[static_cast<std::size_t>(t[static_cast<std::size_t>(m.truth[i])].class_index)][p];
        } else {
            ++cm[static_cast<std::size_t>(n)][p];
        }
    }
    for (std::size_t j = 0; j < t.size(); ++j)
        if (!hit[j]) ++cm[static_cast<std::size_t>(t[j].class_index)][static_cast<std::size_t>(n)];
    return cm;
}

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<long double>(a[i]) * b[i];
        na += static_cast<long double>(a[i]) * a[i];
        nb += static_cast<long double>(b[i]) * b[i];
    }
    return static_cast<double>(dot / std::sqrt(na * nb));
}

struct Identity {
    std::optional<std::string> person;
    std::string best;
    double score = -2;
};

// Enumerates every person, scoring each with the mean of per-backend maxima.
inline Identity identify(const std::map<std::string, std::array<std::vector<std::vector<float>>, 2>>& people,
                         const std::array<std::vector<float>, 2>& probe, double thr) {
    std::vector<std::pair<double, std::string>> scores;
    for (const auto& [id, emb] : people) {
        double s = 0;
        for (int b = 0; b < 2; ++b) {
            double m = -2;
            for (const auto& e : emb[static_cast<std::size_t>(b)]) m = std::max(m, cosine(probe[static_cast<std::size_t>(b)], e));
            s += m / 2;
        }
        scores.emplace_back(s, id);
    }
    Identity out;
    for (const auto& [s, id] : scores)
        if (out.best.empty() || s > out.score + 1e-12 || (std::abs(s - out.score) <= 1e-12 && id < out.best)) {
            out.best = id;
            out.score = s;
        }
    if (!out.best.empty() && out.score >= thr) out.person = out.best;
    return out;
}

// Random small detection scenes.
struct Scene {
    std::vector<Detection> dets;
    std::vector<TruthBox> truths;
};

inline Box random_box(std::mt19937_64& rng, double extent = 100.0) {
    std::uniform_real_distribution<double> pos(0.0, extent), size(2.0, extent / 2);
    const double x = pos(rng), y = pos(rng);
    return {x, y, x + size(rng), y + size(rng)};
}

// Truths are jittered copies so that matches are common; confidences come
// from a small grid so ties occur.
inline Scene random_scene(std::mt19937_64& rng, int max_boxes, int num_classes) {
    std::uniform_int_distribution<int> count(0, max_boxes), cls(0, num_classes - 1), conf(1, 10), coin(0, 3);
    std::normal_distribution<double> jitter(0.0, 4.0);
    Scene s;
    const int nt = count(rng);
    for (int i = 0; i < nt; ++i) s.truths.push_back({cls(rng), random_box(rng)});
    const int nd = count(rng);
    for (int i = 0; i < nd; ++i) {
        Detection d;
        d.confidence = conf(rng) / 10.0;
        if (!s.truths.empty() && coin(rng) != 0) {
            const auto& t = s.truths[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, nt - 1)(rng))];
            d.class_index = coin(rng) == 0 ? cls(rng) : t.class_index;
            d.box = {t.box.x_min + jitter(rng), t.box.y_min + jitter(rng), 0, 0};
            d.box.x_max = d.box.x_min + std::max(1.0, t.box.width() + jitter(rng));
            d.box.y_max = d.box.y_min + std::max(1.0, t.box.height() + jitter(rng));
        } else {
            d.class_index = cls(rng);
            d.box = random_box(rng);
        }
        s.dets.push_back(d);
    }
    return s;
}

}  // namespace oracle
