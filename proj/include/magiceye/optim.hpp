#pragma once

/// Training mathematics: plain and momentum SGD, empirical risk, the
/// box/object/class detection loss, and a small trainer that drives any
/// differentiable model with per-sample loss and gradient.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "magiceye/detail/random.hpp"
#include "magiceye/detect.hpp"
#include "magiceye/error.hpp"

namespace magiceye::optim {

struct ParamVector {
    std::vector<double> weights;
    std::vector<double> velocity;  // previous weight change
    std::vector<bool> frozen;      // empty, or one flag per weight

    ParamVector() = default;
    explicit ParamVector(std::vector<double> w) : weights(std::move(w)), velocity(weights.size(), 0.0) {}
    ParamVector(std::vector<double> w, std::vector<double> v) : weights(std::move(w)), velocity(std::move(v)) {}

    std::size_t size() const noexcept { return weights.size(); }
    bool is_frozen(std::size_t i) const noexcept { return !frozen.empty() && frozen[i]; }
    bool operator==(const ParamVector&) const = default;
};

struct OptimizerConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 32;
};

inline void validate(const OptimizerConfig& c) {
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate))
        throw ValidationError("learning rate must be positive");
    if (!(c.momentum >= 0.0 && c.momentum <= 1.0)) throw ValidationError("momentum must lie in [0,1]");
    if (c.batch_size < 1) throw ValidationError("batch size must be at least 1");
}

namespace detail {

inline void check_step_inputs(const ParamVector& p, std::span<const double> grad) {
    if (grad.size() != p.weights.size() || p.velocity.size() != p.weights.size())
        throw ValidationError("gradient dimension mismatch: expected " + std::to_string(p.weights.size()) + ", got " +
                              std::to_string(grad.size()));
    if (!p.frozen.empty() && p.frozen.size() != p.weights.size()) throw ValidationError("frozen mask dimension mismatch");
    for (double g : grad)
        if (!std::isfinite(g)) throw ValidationError("non-finite gradient");
}

} // namespace detail

/// w <- w - lr * grad. Velocity is left as is.
inline ParamVector sgd_step(ParamVector p, std::span<const double> grad, const OptimizerConfig& cfg) {
    detail::check_step_inputs(p, grad);
    for (std::size_t i = 0; i < p.size(); ++i)
        if (!p.is_frozen(i)) p.weights[i] = p.weights[i] - cfg.learning_rate * grad[i];
    return p;
}

/// dw <- -lr * grad + momentum * dw;  w <- w + dw.
inline ParamVector sgd_momentum_step(ParamVector p, std::span<const double> grad, const OptimizerConfig& cfg) {
    detail::check_step_inputs(p, grad);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.is_frozen(i)) continue;
        const double dw = -(cfg.learning_rate * grad[i]) + cfg.momentum * p.velocity[i];
        p.velocity[i] = dw;
        p.weights[i] = p.weights[i] + dw;
    }
    return p;
}

/// Mean per-sample loss.
inline double empirical_risk(std::span<const double> sample_losses) {
    if (sample_losses.empty()) throw ValidationError("empirical risk of an empty sample set");
    double sum = 0.0;
    for (double q : sample_losses) {
        if (!std::isfinite(q)) throw ValidationError("non-finite sample loss");
        sum += q;
    }
    return sum / static_cast<double>(sample_losses.size());
}

// ---------------------------------------------------------------------------
// Detection loss

struct LossTriple {
    double box_loss = 0;
    double object_loss = 0;
    double class_loss = 0;

    double total() const noexcept { return box_loss + object_loss + class_loss; }
};

inline constexpr double kLogitClamp = 15.0;

/// Binary cross-entropy of sigmoid(logit) against `target`, logit clamped.
inline double bce_with_logit(double logit, double target) noexcept {
    const double z = std::clamp(logit, -kLogitClamp, kLogitClamp);
    return std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
}

/// Box loss: mean (1 - IoU) over assigned slots. Object loss: mean BCE of
/// objectness against the assignment indicator over every slot. Class loss:
/// mean BCE of each class sigmoid against the one-hot target over assigned
/// slots (averaged over slot x class terms). Empty denominators give 0.
inline LossTriple detection_loss(std::span<const detect::RawGridOutput> heads, const detect::TargetGrid& targets,
                                 int input_size) {
    if (heads.size() != targets.scales.size()) throw ValidationError("loss: head/target scale count mismatch");
    double box_sum = 0, obj_sum = 0, cls_sum = 0;
    std::size_t assigned = 0, slots = 0, cls_terms = 0;
    for (std::size_t s = 0; s < heads.size(); ++s) {
        const auto& h = heads[s];
        const auto& t = targets.scales[s];
        if (h.grid_w != t.grid_w || h.grid_h != t.grid_h || h.anchors.size() != t.num_anchors ||
            h.values.size() != h.expected_size())
            throw ValidationError("loss: prediction/target geometry mismatch at scale " + std::to_string(s));
        const double sx = static_cast<double>(input_size) / h.grid_w;
        const double sy = static_cast<double>(input_size) / h.grid_h;
        for (int gy = 0; gy < h.grid_h; ++gy)
            for (int gx = 0; gx < h.grid_w; ++gx)
                for (std::size_t a = 0; a < h.anchors.size(); ++a) {
                    const auto v = h.slot(gx, gy, a);
                    const auto& cell = t.at(gx, gy, a);
                    ++slots;
                    obj_sum += bce_with_logit(v[4], cell ? 1.0 : 0.0);
                    if (!cell) continue;
                    if (cell->class_index < 0 || cell->class_index >= h.num_classes)
                        throw ValidationError("loss: target class out of range");
                    ++assigned;
                    const auto pred = detect::decode_slot(v, gx, gy, h.anchors[a], sx, sy, h.num_classes);
                    const auto truth = detect::Box::from_center((gx + cell->offset_x) * sx, (gy + cell->offset_y) * sy,
                                                                cell->width, cell->height);
                    box_sum += 1.0 - detect::iou(pred.box, truth);
                    for (int k = 0; k < h.num_classes; ++k) {
                        cls_sum += bce_with_logit(v[5 + static_cast<std::size_t>(k)], k == cell->class_index ? 1.0 : 0.0);
                        ++cls_terms;
                    }
                }
    }
    LossTriple out;
    out.box_loss = assigned ? box_sum / static_cast<double>(assigned) : 0.0;
    out.object_loss = slots ? obj_sum / static_cast<double>(slots) : 0.0;
    out.class_loss = cls_terms ? cls_sum / static_cast<double>(cls_terms) : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Toy models

/// A model the trainer can drive: per-sample loss and its gradient with
/// respect to a flat parameter vector.
template <typename M>
concept DifferentiableModel = requires(const M m, std::span<const double> w, const typename M::Sample& s) {
    { m.parameter_count() } -> std::convertible_to<std::size_t>;
    { m.sample_loss(w, s) } -> std::convertible_to<double>;
    { m.sample_gradient(w, s) } -> std::convertible_to<std::vector<double>>;
};

/// Mean loss over a batch, i.e. the empirical risk of its samples.
template <DifferentiableModel M>
double batch_loss(const M& model, std::span<const double> w, std::span<const typename M::Sample> batch) {
    std::vector<double> losses;
    losses.reserve(batch.size());
    for (const auto& s : batch) losses.push_back(model.sample_loss(w, s));
    return empirical_risk(losses);
}

template <DifferentiableModel M>
std::vector<double> batch_gradient(const M& model, std::span<const double> w, std::span<const typename M::Sample> batch) {
    if (batch.empty()) throw ValidationError("gradient of an empty batch");
    std::vector<double> g(model.parameter_count(), 0.0);
    for (const auto& s : batch) {
        const auto gs = model.sample_gradient(w, s);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs[i];
    }
    for (auto& x : g) x /= static_cast<double>(batch.size());
    return g;
}

/// y ~ slope * x + intercept with loss 0.5 * residual^2.
struct LeastSquaresModel {
    struct Sample {
        double x = 0, y = 0;
    };

    std::size_t parameter_count() const { return 2; }
    double sample_loss(std::span<const double> w, const Sample& s) const {
        const double r = w[0] * s.x + w[1] - s.y;
        return 0.5 * r * r;
    }
    std::vector<double> sample_gradient(std::span<const double> w, const Sample& s) const {
        const double r = w[0] * s.x + w[1] - s.y;
        return {r * s.x, r};
    }

    /// Normal-equation minimizer (slope, intercept).
    static std::vector<double> closed_form(std::span<const Sample> data) {
        if (data.size() < 2) throw ValidationError("least squares needs at least two samples");
        double mx = 0, my = 0;
        for (const auto& s : data) {
            mx += s.x;
            my += s.y;
        }
        mx /= static_cast<double>(data.size());
        my /= static_cast<double>(data.size());
        double sxx = 0, sxy = 0;
        for (const auto& s : data) {
            sxx += (s.x - mx) * (s.x - mx);
            sxy += (s.x - mx) * (s.y - my);
        }
        if (sxx == 0.0) throw ValidationError("least squares: all x identical");
        const double slope = sxy / sxx;
        return {slope, my - slope * mx};
    }
};

/// Three linear heads over a feature vector, mimicking a detector's
/// objectness, class and box outputs. Weights are laid out
/// [objectness | class | box], `dim` each.
struct ToyDetectorModel {
    struct Sample {
        std::vector<double> features;
        bool has_object = false;
        bool class_one = false;  // binary class label, meaningful when has_object
        double box_target = 0;   // regression target, meaningful when has_object
    };

    std::size_t dim = 4;

    std::size_t parameter_count() const { return 3 * dim; }

    LossTriple sample_terms(std::span<const double> w, const Sample& s) const {
        const auto [zo, zc, b] = heads(w, s);
        LossTriple t;
        t.object_loss = bce_with_logit(zo, s.has_object ? 1.0 : 0.0);
        if (s.has_object) {
            t.class_loss = bce_with_logit(zc, s.class_one ? 1.0 : 0.0);
            t.box_loss = 0.5 * (b - s.box_target) * (b - s.box_target);
        }
        return t;
    }
    double sample_loss(std::span<const double> w, const Sample& s) const { return sample_terms(w, s).total(); }

    std::vector<double> sample_gradient(std::span<const double> w, const Sample& s) const {
        const auto [zo, zc, b] = heads(w, s);
        std::vector<double> g(parameter_count(), 0.0);
        // d/dz BCE = sigmoid(z) - y inside the clamp, 0 outside.
        auto dbce = [](double z, double y) {
            return std::abs(z) > kLogitClamp ? 0.0 : detect::sigmoid(z) - y;
        };
        const double go = dbce(zo, s.has_object ? 1.0 : 0.0);
        const double gc = s.has_object ? dbce(zc, s.class_one ? 1.0 : 0.0) : 0.0;
        const double gb = s.has_object ? (b - s.box_target) : 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            g[i] = go * s.features[i];
            g[dim + i] = gc * s.features[i];
            g[2 * dim + i] = gb * s.features[i];
        }
        return g;
    }

    /// Precision and recall of the objectness head at sigmoid >= 0.5.
    std::pair<double, double> objectness_pr(std::span<const double> w, std::span<const Sample> data) const {
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (const auto& s : data) {
            const bool pred = std::get<0>(heads(w, s)) >= 0.0;
            if (pred && s.has_object) ++tp;
            else if (pred) ++fp;
            else if (s.has_object) ++fn;
        }
        const double p = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double r = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
        return {p, r};
    }

    /// Linearly separable synthetic data from a hidden weight vector.
    static std::vector<Sample> synthesize(std::size_t n, std::size_t dim, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::vector<double> wo(dim), wc(dim), wb(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            wo[i] = magiceye::detail::standard_normal(rng);
            wc[i] = magiceye::detail::standard_normal(rng);
            wb[i] = magiceye::detail::standard_normal(rng);
        }
        std::vector<Sample> data(n);
        for (auto& s : data) {
            s.features.resize(dim);
            for (std::size_t i = 0; i + 1 < dim; ++i) s.features[i] = magiceye::detail::uniform(rng, -1.0, 1.0);
            s.features[dim - 1] = 1.0;  // bias
            double zo = 0, zc = 0, b = 0;
            for (std::size_t i = 0; i < dim; ++i) {
                zo += wo[i] * s.features[i];
                zc += wc[i] * s.features[i];
                b += wb[i] * s.features[i];
            }
            s.has_object = zo >= 0.0;
            s.class_one = zc >= 0.0;
            s.box_target = b;
        }
        return data;
    }

private:
    std::tuple<double, double, double> heads(std::span<const double> w, const Sample& s) const {
        if (s.features.size() != dim || w.size() != parameter_count())
            throw ValidationError("toy detector: dimension mismatch");
        double zo = 0, zc = 0, b = 0;
        for (std::size_t i = 0; i < dim; ++i) {
            zo += w[i] * s.features[i];
            zc += w[dim + i] * s.features[i];
            b += w[2 * dim + i] * s.features[i];
        }
        return {zo, zc, b};
    }
};

// ---------------------------------------------------------------------------
// Trainer

struct EpochRecord {
    int epoch = 0;
    double loss = 0;  // empirical risk over the full dataset after the epoch
    LossTriple terms;
    std::optional<double> precision;
    std::optional<double> recall;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    ParamVector params;
    std::size_t steps = 0;
};

struct TrainOptions {
    int epochs = 25;
    std::uint64_t seed = 0;
};

/// Shuffles (seeded) each epoch, applies one momentum-SGD step per batch of
/// `cfg.batch_size` samples, then records the full-data loss.
template <DifferentiableModel M>
TrainResult train_toy(const M& model, std::span<const typename M::Sample> data, ParamVector init,
                      const OptimizerConfig& cfg, const TrainOptions& opts) {
    validate(cfg);
    if (opts.epochs < 1) throw ValidationError("epochs must be at least 1");
    if (data.empty()) throw ValidationError("training data is empty");
    if (init.size() != model.parameter_count()) throw ValidationError("initial parameters have wrong dimension");

    TrainResult res;
    res.params = std::move(init);
    std::mt19937_64 rng(opts.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<typename M::Sample> batch;
    for (int e = 1; e <= opts.epochs; ++e) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(magiceye::detail::bounded_draw(rng, i))]);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            batch.clear();
            for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
                batch.push_back(data[order[k]]);
            const auto g = batch_gradient(model, res.params.weights, std::span<const typename M::Sample>(batch));
            res.params = sgd_momentum_step(std::move(res.params), g, cfg);
            ++res.steps;
        }
        EpochRecord rec;
        rec.epoch = e;
        rec.loss = batch_loss(model, res.params.weights, data);
        if constexpr (requires { model.sample_terms(res.params.weights, data[0]); }) {
            LossTriple sum;
            for (const auto& s : data) {
                const auto t = model.sample_terms(res.params.weights, s);
                sum.box_loss += t.box_loss;
                sum.object_loss += t.object_loss;
                sum.class_loss += t.class_loss;
            }
            const double n = static_cast<double>(data.size());
            rec.terms = {sum.box_loss / n, sum.object_loss / n, sum.class_loss / n};
        } else {
            rec.terms.box_loss = rec.loss;
        }
        if constexpr (requires { model.objectness_pr(res.params.weights, data); }) {
            const auto [p, r] = model.objectness_pr(res.params.weights, data);
            rec.precision = p;
            rec.recall = r;
        }
        res.history.push_back(rec);
    }
    return res;
}

/// `epoch,box_loss,object_loss,class_loss,precision,recall`; missing
/// precision/recall are left empty.
inline std::string format_history_csv(std::span<const EpochRecord> history) {
    std::string out = "epoch,box_loss,object_loss,class_loss,precision,recall\n";
    char buf[256];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,", r.epoch, r.terms.box_loss, r.terms.object_loss,
                      r.terms.class_loss);
        out += buf;
        if (r.precision) {
            std::snprintf(buf, sizeof(buf), "%.6f", *r.precision);
            out += buf;
        }
        out += ",";
        if (r.recall) {
            std::snprintf(buf, sizeof(buf), "%.6f", *r.recall);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

} // namespace magiceye::optim
