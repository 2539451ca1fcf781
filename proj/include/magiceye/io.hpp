#pragma once

/// File formats shared by the CLI and the tests: detection JSON, evaluation
/// report JSON/CSV, face probe/embedding JSON, classifier report JSON and the
/// simulation scene file.

#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "magiceye/currency.hpp"
#include "magiceye/dataset.hpp"
#include "magiceye/detail/text.hpp"
#include "magiceye/detect.hpp"
#include "magiceye/error.hpp"
#include "magiceye/face.hpp"
#include "magiceye/metrics.hpp"

namespace magiceye::io {

using nlohmann::json;

inline json parse_json_file(const std::string& path) {
    try {
        return json::parse(detail::read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Detections

struct ImageDetection {
    std::string image_id;
    detect::Detection detection;
};

/// JSON array, one object per line, every real printed with 4 decimals.
inline std::string format_detections(const std::vector<ImageDetection>& dets, const dataset::ClassMap& classes) {
    std::string out = "[";
    for (std::size_t i = 0; i < dets.size(); ++i) {
        const auto& [id, d] = dets[i];
        out += i ? ",\n  " : "\n  ";
        out += fmt::format(R"({{"image_id": {}, "class_index": {}, "label": {}, "confidence": {:.4f}, "box": [{:.4f}, {:.4f}, {:.4f}, {:.4f}]}})",
                           json(id).dump(), d.class_index, json(classes.label(d.class_index)).dump(), d.confidence,
                           d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max);
    }
    out += dets.empty() ? "]\n" : "\n]\n";
    return out;
}

inline std::vector<ImageDetection> parse_detections(const json& j, const dataset::ClassMap& classes) {
    if (!j.is_array()) throw ValidationError("detections: expected a JSON array");
    std::vector<ImageDetection> out;
    try {
        for (const auto& e : j) {
            ImageDetection d;
            d.image_id = e.at("image_id").get<std::string>();
            d.detection.class_index = e.at("class_index").get<int>();
            if (!classes.contains(d.detection.class_index)) throw ValidationError("detections: unknown class index");
            d.detection.confidence = e.at("confidence").get<double>();
            if (!(d.detection.confidence >= 0.0 && d.detection.confidence <= 1.0))
                throw ValidationError("detections: confidence out of [0,1]");
            const auto& b = e.at("box");
            if (!b.is_array() || b.size() != 4) throw ValidationError("detections: box must have 4 numbers");
            d.detection.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
            if (!d.detection.box.valid()) throw ValidationError("detections: inverted box");
            out.push_back(std::move(d));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("detections: ") + e.what());
    }
    return out;
}

/// Groups detections and pixel-space truths per manifest image.
inline std::vector<metrics::ImageEval> build_eval_set(const std::vector<ImageDetection>& dets,
                                                      const dataset::DatasetManifest& truth) {
    std::vector<metrics::ImageEval> images(truth.size());
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto& s = truth.samples[i];
        idx[s.image_id] = i;
        for (const auto& b : s.boxes)
            images[i].truths.push_back({b.class_index, detect::to_pixels(b, s.image_width, s.image_height)});
    }
    for (const auto& d : dets) {
        auto it = idx.find(d.image_id);
        if (it == idx.end()) throw ValidationError("detection for unknown image '" + d.image_id + "'");
        images[it->second].detections.push_back(d.detection);
    }
    return images;
}

// ---------------------------------------------------------------------------
// Evaluation report

inline json report_json(const metrics::EvalReport& r, const dataset::ClassMap& classes) {
    json j;
    j["iou_threshold"] = r.iou_threshold;
    j["map"] = r.map_score ? json(*r.map_score) : json(nullptr);
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", nullptr}};
    json per = json::object();
    for (const auto& [c, s] : r.per_class)
        per[classes.label(c)] = {{"class_index", c},
                                 {"ap", s.ap ? json(*s.ap) : json(nullptr)},
                                 {"truths", s.truths},
                                 {"detections", s.detections},
                                 {"tp", s.tp}};
    j["per_class"] = per;
    json labels = classes.labels();
    labels.push_back("background");
    json matrix = json::array();
    for (std::size_t i = 0; i < r.confusion.dim(); ++i) {
        json row = json::array();
        for (std::size_t k = 0; k < r.confusion.dim(); ++k)
            row.push_back(r.confusion.at(static_cast<int>(i), static_cast<int>(k)));
        matrix.push_back(row);
    }
    j["confusion"] = {{"labels", labels}, {"matrix", matrix}};
    return j;
}

inline std::string confusion_csv(const metrics::ConfusionMatrix& cm, const dataset::ClassMap& classes) {
    auto name = [&](std::size_t i) {
        return i + 1 == cm.dim() ? std::string("background") : detail::csv_field(classes.label(static_cast<int>(i)));
    };
    std::string out = "truth\\predicted";
    for (std::size_t k = 0; k < cm.dim(); ++k) out += "," + name(k);
    out += "\n";
    for (std::size_t i = 0; i < cm.dim(); ++i) {
        out += name(i);
        for (std::size_t k = 0; k < cm.dim(); ++k) out += "," + std::to_string(cm.at(static_cast<int>(i), static_cast<int>(k)));
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Faces

inline face::Vector parse_vector(const json& j) {
    if (!j.is_array()) throw ValidationError("embedding must be an array of numbers");
    face::Vector v;
    for (const auto& x : j) {
        if (!x.is_number()) throw ValidationError("embedding must be an array of numbers");
        v.push_back(x.get<float>());
    }
    return v;
}

/// {"<backend>": [[...], ...], ...}
inline face::EmbeddingSet parse_embedding_set(const json& j) {
    if (!j.is_object()) throw ValidationError("embeddings: expected an object keyed by backend id");
    face::EmbeddingSet set;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_array()) throw ValidationError("embeddings: expected a list of vectors for '" + k + "'");
        for (const auto& e : v) set[k].push_back(parse_vector(e));
    }
    return set;
}

inline std::optional<face::FaceAttributes> parse_attributes(const json& j) {
    if (!j.is_object()) return std::nullopt;
    face::FaceAttributes a;
    a.gender = j.value("gender", "");
    a.race = j.value("race", "");
    a.age_bracket = j.value("age_bracket", "");
    a.expression = j.value("expression", "");
    return a;
}

/// {"embeddings": {"<backend>": [...], ...}, "attributes": {...}}
inline face::FaceProbe parse_probe(const json& j) {
    face::FaceProbe p;
    const json& emb = j.contains("embeddings") ? j.at("embeddings") : j;
    if (!emb.is_object()) throw ValidationError("probe: expected an object keyed by backend id");
    for (const auto& [k, v] : emb.items()) {
        if (k == "attributes") continue;
        p.embeddings[k] = parse_vector(v);
    }
    if (j.contains("attributes")) p.attributes = parse_attributes(j.at("attributes"));
    return p;
}

inline json match_json(const face::MatchResult& m) {
    json j;
    j["matched"] = m.matched();
    j["person_id"] = m.person_id ? json(*m.person_id) : json(nullptr);
    j["best_candidate"] = m.best_candidate ? json(*m.best_candidate) : json(nullptr);
    j["fused_score"] = m.fused_score;
    j["per_backend_scores"] = m.per_backend_scores;
    if (m.attributes)
        j["attributes"] = {{"gender", m.attributes->gender},
                           {"race", m.attributes->race},
                           {"age_bracket", m.attributes->age_bracket},
                           {"expression", m.attributes->expression}};
    else
        j["attributes"] = nullptr;
    return j;
}

// ---------------------------------------------------------------------------
// Currency

inline json classifier_json(const currency::ClassifierReport& r) {
    json j;
    j["accuracy"] = r.accuracy;
    j["macro_f1"] = r.macro_f1;
    j["total"] = r.total;
    json per = json::object();
    for (const auto& [label, m] : r.per_class)
        per[label] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support},
                      {"tp", m.counts.tp}, {"fp", m.counts.fp}, {"fn", m.counts.fn},
                      {"tn", m.counts.tn ? json(*m.counts.tn) : json(nullptr)}};
    j["per_class"] = per;
    j["confusion"] = {{"labels", r.labels}, {"matrix", r.confusion}};
    return j;
}

} // namespace magiceye::io
