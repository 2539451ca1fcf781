#pragma once

/// Scripted perception world for replaying sensor traces without cameras or
/// networks. A scene file describes, per image reference, what the detector,
/// face and currency backends would report:
///
/// {
///   "branches": {"Human face": "face", "Banknote": "currency"},
///   "registry": {"backends": [["facenet", 4], ["vggface", 4]],
///                "people": {"alice": {"facenet": [[...]], "vggface": [[...]]}}},
///   "images": {
///     "img_003": {"width": 1280, "height": 720,
///                 "detections": [{"label": "Chair", "confidence": 0.91, "box": [x0, y0, x1, y1]}],
///                 "faces": [{"box": [...], "landmarks": [[x, y], ...],
///                            "embeddings": {"facenet": [...], "vggface": [...]},
///                            "attributes": {"gender": "...", ...}}],
///                 "currency": {"label": "100", "confidence": 0.97}}
///   }
/// }

#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "magiceye/backend.hpp"
#include "magiceye/currency.hpp"
#include "magiceye/dataset.hpp"
#include "magiceye/face.hpp"
#include "magiceye/io.hpp"
#include "magiceye/orchestrator.hpp"

namespace magiceye::scene {

struct MockWorld {
    std::unique_ptr<backend::EncodingBackend> detector;
    std::unique_ptr<face::ScriptedFaceDetector> face_detector = std::make_unique<face::ScriptedFaceDetector>();
    std::unique_ptr<face::ScriptedEmbedder> embedder = std::make_unique<face::ScriptedEmbedder>();
    std::unique_ptr<currency::ScriptedCurrencyBackend> currency =
        std::make_unique<currency::ScriptedCurrencyBackend>();
    std::unique_ptr<face::FaceRegistry> registry;
    std::map<std::string, backend::ImageInfo> images;
    std::map<std::string, orchestrator::Branch> branches;

    /// Perception handles pointing into this world; the world must outlive them.
    orchestrator::Perception perception(const dataset::ClassMap& classes) const {
        orchestrator::Perception p;
        p.detector = detector.get();
        p.image_info = [this](const std::string& ref) {
            auto it = images.find(ref);
            if (it == images.end()) throw BackendError("scene has no image '" + ref + "'");
            return it->second;
        };
        p.classes = &classes;
        p.branches = branches;
        p.face_detector = face_detector.get();
        p.embedder = embedder.get();
        p.registry = registry.get();
        p.currency = currency.get();
        return p;
    }
};

inline orchestrator::Branch parse_branch(const std::string& s) {
    if (s == "face") return orchestrator::Branch::Face;
    if (s == "currency") return orchestrator::Branch::Currency;
    if (s == "describe") return orchestrator::Branch::Describe;
    throw ValidationError("unknown branch '" + s + "' (expected face, currency or describe)");
}

inline detect::Box parse_box(const nlohmann::json& b) {
    if (!b.is_array() || b.size() != 4) throw ValidationError("scene: box must have 4 numbers");
    return {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
}

inline MockWorld build_world(const nlohmann::json& j, const dataset::ClassMap& classes, int input_size) {
    MockWorld w;
    w.detector = std::make_unique<backend::EncodingBackend>(input_size, static_cast<int>(classes.size()));
    try {
        const auto branches = j.value("branches", nlohmann::json::object());
        for (const auto& [label, br] : branches.items()) {
            if (!classes.index_of(label)) throw ValidationError("scene: branch for unknown label '" + label + "'");
            w.branches[label] = parse_branch(br.get<std::string>());
        }
        if (j.contains("registry")) {
            const auto& r = j.at("registry");
            face::BackendPair pair;
            const auto& bk = r.at("backends");
            if (!bk.is_array() || bk.size() != 2) throw ValidationError("scene: registry needs exactly two backends");
            for (std::size_t i = 0; i < 2; ++i)
                pair.backends[i] = {bk[i].at(0).get<std::string>(), bk[i].at(1).get<std::size_t>()};
            w.registry = std::make_unique<face::FaceRegistry>(pair);
            const auto people = r.value("people", nlohmann::json::object());
            for (const auto& [person, emb] : people.items())
                w.registry->enroll(person, io::parse_embedding_set(emb));
        }
        for (const auto& [ref, im] : j.at("images").items()) {
            backend::ImageInfo info{ref, im.at("width").get<int>(), im.at("height").get<int>()};
            if (info.width <= 0 || info.height <= 0) throw ValidationError("scene: image '" + ref + "' needs a positive size");
            w.images[ref] = info;
            std::vector<detect::Detection> objects;
            for (const auto& d : im.value("detections", nlohmann::json::array())) {
                const auto label = d.at("label").get<std::string>();
                const auto cls = classes.index_of(label);
                if (!cls) throw ValidationError("scene: unknown label '" + label + "'");
                const double conf = d.at("confidence").get<double>();
                if (!(conf > 0.0 && conf < 1.0)) throw ValidationError("scene: confidence must lie in (0,1)");
                objects.push_back({*cls, conf, parse_box(d.at("box"))});
            }
            w.detector->script(ref, std::move(objects));
            if (im.contains("faces")) {
                face::FaceDetection fd{info.width, info.height, {}};
                std::size_t k = 0;
                for (const auto& f : im.at("faces")) {
                    face::FaceCrop crop;
                    crop.box = parse_box(f.at("box"));
                    for (const auto& p : f.value("landmarks", nlohmann::json::array()))
                        crop.landmarks.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
                    fd.crops.push_back(crop);
                    if (f.contains("embeddings")) w.embedder->script(ref, k, io::parse_probe(f));
                    ++k;
                }
                w.face_detector->script(ref, std::move(fd));
            }
            if (im.contains("currency")) {
                const auto& c = im.at("currency");
                w.currency->script(ref, {c.at("label").get<std::string>(), c.at("confidence").get<double>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("scene: ") + e.what());
    }
    return w;
}

} // namespace magiceye::scene
