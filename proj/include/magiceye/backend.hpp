#pragma once

/// Inference backends. A backend turns an image reference into raw head
/// outputs; everything after that boundary lives in detect.hpp.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magiceye/detail/text.hpp"
#include "magiceye/detect.hpp"
#include "magiceye/error.hpp"

namespace magiceye::backend {

struct ImageInfo {
    std::string image_id;
    int width = 0;
    int height = 0;
};

class InferenceBackend {
public:
    virtual ~InferenceBackend() = default;
    virtual int input_size() const = 0;
    virtual std::vector<detect::RawGridOutput> infer(const ImageInfo& image) = 0;
};

/// Sets up logits for one slot so that decode_slot reproduces `net_box`
/// (network pixels) with objectness x class score equal to `confidence`.
inline void encode_slot(std::span<double> slot, const detect::Box& net_box, int gx, int gy, const detect::Anchor& anchor,
                        double stride_x, double stride_y, int class_index, double confidence,
                        double background_logit) {
    constexpr double eps = 1e-12;
    auto off = [&](double v) { return detect::logit(std::clamp(v, eps, 1.0 - eps)); };
    slot[0] = off(net_box.center_x() / stride_x - gx);
    slot[1] = off(net_box.center_y() / stride_y - gy);
    slot[2] = std::log(net_box.width() / anchor.width);
    slot[3] = std::log(net_box.height() / anchor.height);
    // Split the confidence evenly between objectness and class score.
    const double part = std::sqrt(std::clamp(confidence, eps, 1.0 - eps));
    slot[4] = detect::logit(part);
    for (std::size_t k = 5; k < slot.size(); ++k) slot[k] = background_logit;
    slot[5 + static_cast<std::size_t>(class_index)] = detect::logit(part);
}

/// Deterministic stand-in for a detector: inverts the decode equations so the
/// given detections come back out of decode_predictions. Each object goes to
/// the free (head, cell, anchor) slot whose anchor best matches its shape.
class EncodingBackend final : public InferenceBackend {
public:
    EncodingBackend(int input_size, int num_classes, std::vector<std::vector<detect::Anchor>> anchors = detect::default_anchors(),
                    double background_logit = -20.0)
        : input_size_(input_size), num_classes_(num_classes), anchors_(std::move(anchors)), background_(background_logit) {
        const auto g = detect::grid_sizes(input_size);
        if (anchors_.size() != g.size()) throw ValidationError("encoding backend: one anchor set per head required");
        grids_.assign(g.begin(), g.end());
    }

    void script(const std::string& image_id, std::vector<detect::Detection> objects) {
        scripted_[image_id] = std::move(objects);
    }

    int input_size() const override { return input_size_; }

    std::vector<detect::RawGridOutput> infer(const ImageInfo& image) override {
        const auto t = detect::compute_letterbox(image.width, image.height, input_size_);
        std::vector<detect::RawGridOutput> heads;
        for (std::size_t s = 0; s < grids_.size(); ++s)
            heads.push_back(detect::RawGridOutput::make(grids_[s], grids_[s], num_classes_, anchors_[s], background_));
        std::vector<std::vector<bool>> used(heads.size());
        for (std::size_t s = 0; s < heads.size(); ++s)
            used[s].assign(heads[s].values.size() / heads[s].slot_width(), false);

        auto it = scripted_.find(image.image_id);
        if (it == scripted_.end()) return heads;
        for (const auto& obj : it->second) {
            if (obj.class_index < 0 || obj.class_index >= num_classes_)
                throw ValidationError("encoding backend: class index out of range");
            const detect::Box net = t.to_network(obj.box);
            struct Candidate {
                double score;
                std::size_t head, anchor;
            };
            std::vector<Candidate> cands;
            for (std::size_t s = 0; s < heads.size(); ++s)
                for (std::size_t a = 0; a < anchors_[s].size(); ++a)
                    cands.push_back({detect::shape_iou(net.width(), net.height(), anchors_[s][a].width, anchors_[s][a].height), s, a});
            std::stable_sort(cands.begin(), cands.end(), [](auto& x, auto& y) { return x.score > y.score; });
            bool placed = false;
            for (const auto& c : cands) {
                auto& head = heads[c.head];
                const double sx = static_cast<double>(input_size_) / head.grid_w;
                const double sy = static_cast<double>(input_size_) / head.grid_h;
                const int gx = detect::cell_of(net.center_x() / input_size_, head.grid_w);
                const int gy = detect::cell_of(net.center_y() / input_size_, head.grid_h);
                const std::size_t flat = head.offset(gx, gy, c.anchor) / head.slot_width();
                if (used[c.head][flat]) continue;
                used[c.head][flat] = true;
                encode_slot(head.slot(gx, gy, c.anchor), net, gx, gy, head.anchors[c.anchor], sx, sy, obj.class_index,
                            obj.confidence, background_);
                placed = true;
                break;
            }
            if (!placed) throw BackendError("encoding backend: no free slot for object in '" + image.image_id + "'");
        }
        return heads;
    }

private:
    int input_size_;
    int num_classes_;
    std::vector<std::vector<detect::Anchor>> anchors_;
    std::vector<int> grids_;
    double background_;
    std::map<std::string, std::vector<detect::Detection>> scripted_;
};

// ---------------------------------------------------------------------------
// Raw-head fixture files
//
// {
//   "input_size": 640, "num_classes": 2, "fill": -20,
//   "heads": [ { "grid_w": 20, "grid_h": 20, "anchors": [[116, 90], ...],
//                "cells": [ {"x": 3, "y": 4, "anchor": 0, "values": [tx, ty, tw, th, tobj, c0, c1]} ] } ]
// }
//
// Unlisted slots hold `fill` everywhere.

struct RawFixture {
    int input_size = 640;
    std::vector<detect::RawGridOutput> heads;
};

inline RawFixture parse_raw_fixture(const nlohmann::json& j) {
    try {
        RawFixture fx;
        fx.input_size = j.value("input_size", 640);
        const int nc = j.at("num_classes").get<int>();
        const double fill = j.value("fill", -20.0);
        for (const auto& h : j.at("heads")) {
            std::vector<detect::Anchor> anchors;
            for (const auto& a : h.at("anchors")) anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
            auto head = detect::RawGridOutput::make(h.at("grid_w").get<int>(), h.at("grid_h").get<int>(), nc, anchors, fill);
            if (h.contains("values")) {
                head.values = h.at("values").get<std::vector<double>>();
            }
            for (const auto& c : h.value("cells", nlohmann::json::array())) {
                const int x = c.at("x").get<int>(), y = c.at("y").get<int>();
                const auto a = c.at("anchor").get<std::size_t>();
                const auto vals = c.at("values").get<std::vector<double>>();
                if (x < 0 || y < 0 || x >= head.grid_w || y >= head.grid_h || a >= head.anchors.size())
                    throw ValidationError("raw fixture: cell outside grid");
                if (vals.size() != head.slot_width())
                    throw ValidationError("raw fixture: cell expects " + std::to_string(head.slot_width()) + " values");
                std::copy(vals.begin(), vals.end(), head.slot(x, y, a).begin());
            }
            fx.heads.push_back(std::move(head));
        }
        detect::validate_heads(fx.heads);
        return fx;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("raw fixture: ") + e.what());
    }
}

inline RawFixture load_raw_fixture(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return parse_raw_fixture(j);
}

/// Serves the same fixture heads for every image.
class FixtureBackend final : public InferenceBackend {
public:
    explicit FixtureBackend(RawFixture fx) : fx_(std::move(fx)) {}
    int input_size() const override { return fx_.input_size; }
    std::vector<detect::RawGridOutput> infer(const ImageInfo&) override { return fx_.heads; }

private:
    RawFixture fx_;
};

} // namespace magiceye::backend
