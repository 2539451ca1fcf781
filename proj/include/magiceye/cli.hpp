#pragma once

/// `magiceye` command line: ingest, detect, eval, train-toy, face, currency
/// and simulate subcommands over the library.
///
/// Exit codes: 0 success, 1 validation error, 2 I/O error, 64 usage error.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "magiceye/backend.hpp"
#include "magiceye/currency.hpp"
#include "magiceye/dataset.hpp"
#include "magiceye/detect.hpp"
#include "magiceye/error.hpp"
#include "magiceye/face.hpp"
#include "magiceye/io.hpp"
#include "magiceye/metrics.hpp"
#include "magiceye/optim.hpp"
#include "magiceye/orchestrator.hpp"
#include "magiceye/scene.hpp"

namespace magiceye::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2, kUsage = 64 };

namespace detail {

inline void require_range(double v, double lo, double hi, const std::string& what) {
    if (!(v >= lo && v <= hi)) throw ValidationError(what + " out of range");
}

inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-")
        out << text;
    else
        magiceye::detail::write_file(path, text);
}

inline std::pair<std::string, std::string> split_pair(const std::string& s, char sep, const std::string& what) {
    const auto pos = s.find(sep);
    if (pos == std::string::npos) throw ValidationError(what + ": expected two values separated by '" + sep + "'");
    return {s.substr(0, pos), s.substr(pos + 1)};
}

} // namespace detail

struct IngestArgs {
    std::string class_map, manifest, sizes, out_dir;
    double train = 0.8, val = 0.1, test = 0.1;
    std::uint64_t seed = 0;
};

inline int run_ingest(const IngestArgs& a, std::ostream& out) {
    const auto classes = dataset::load_class_map(a.class_map);
    const auto m = dataset::load_manifest(a.manifest, a.sizes, classes);
    const auto hist = dataset::class_histogram(m);
    out << "samples " << m.size() << "\n";
    out << "boxes " << m.box_count() << "\n";
    out << "classes " << hist.size() << "/" << classes.size() << "\n";
    const dataset::SplitSpec spec{a.train, a.val, a.test, a.seed};
    const auto split = dataset::split_dataset(m, spec);
    out << "split train=" << split.train.size() << " val=" << split.val.size() << " test=" << split.test.size() << "\n";
    if (!a.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(a.out_dir, ec);
        if (ec) throw IoError("cannot create '" + a.out_dir + "'");
        const std::filesystem::path dir(a.out_dir);
        const std::pair<const char*, const dataset::DatasetManifest*> parts[] = {
            {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
        for (const auto& [name, part] : parts)
            dataset::write_manifest(*part, classes, (dir / (std::string(name) + ".csv")).string(),
                                    (dir / (std::string(name) + "_sizes.csv")).string());
    }
    return kOk;
}

struct DetectArgs {
    std::string class_map, manifest, sizes, raw, image_id = "image", image_size, out;
    int input_size = 640;
    double conf_threshold = detect::kDefaultConfThreshold;
    double nms_iou = detect::kDefaultNmsIou;
    double mock_confidence = 0.9;
};

inline int run_detect(const DetectArgs& a, std::ostream& out) {
    detail::require_range(a.conf_threshold, 0, 1, "confidence threshold");
    detail::require_range(a.nms_iou, 0, 1, "NMS IoU threshold");
    detail::require_range(a.mock_confidence, 0, 1, "mock confidence");
    const auto classes = dataset::load_class_map(a.class_map);
    std::vector<io::ImageDetection> all;
    if (!a.raw.empty()) {
        const auto fx = backend::load_raw_fixture(a.raw);
        if (fx.heads.front().num_classes != static_cast<int>(classes.size()))
            throw ValidationError("raw fixture class count does not match the class map");
        const auto [w, h] = detail::split_pair(a.image_size, 'x', "--image-size");
        int iw = 0, ih = 0;
        if (!magiceye::detail::parse_int(w, iw) || !magiceye::detail::parse_int(h, ih))
            throw ValidationError("--image-size: expected WIDTHxHEIGHT");
        const auto t = detect::compute_letterbox(iw, ih, fx.input_size);
        for (const auto& d : detect::postprocess(fx.heads, t, a.conf_threshold, a.nms_iou)) all.push_back({a.image_id, d});
    } else {
        if (a.manifest.empty() || a.sizes.empty())
            throw ValidationError("detect needs either --raw or --manifest with --sizes");
        const auto m = dataset::load_manifest(a.manifest, a.sizes, classes);
        backend::EncodingBackend be(a.input_size, static_cast<int>(classes.size()));
        for (const auto& s : m.samples) {
            std::vector<detect::Detection> objs;
            for (const auto& b : s.boxes)
                objs.push_back({b.class_index, a.mock_confidence, detect::to_pixels(b, s.image_width, s.image_height)});
            be.script(s.image_id, std::move(objs));
            const auto heads = be.infer({s.image_id, s.image_width, s.image_height});
            const auto t = detect::compute_letterbox(s.image_width, s.image_height, a.input_size);
            for (const auto& d : detect::postprocess(heads, t, a.conf_threshold, a.nms_iou)) all.push_back({s.image_id, d});
        }
    }
    detail::emit(a.out, io::format_detections(all, classes), out);
    return kOk;
}

struct EvalArgs {
    std::string class_map, detections, manifest, sizes, out, confusion_csv;
    double iou = metrics::kDefaultEvalIou;
};

inline int run_eval(const EvalArgs& a, std::ostream& out) {
    detail::require_range(a.iou, 0, 1, "evaluation IoU threshold");
    const auto classes = dataset::load_class_map(a.class_map);
    const auto truth = dataset::load_manifest(a.manifest, a.sizes, classes);
    const auto dets = io::parse_detections(io::parse_json_file(a.detections), classes);
    const auto images = io::build_eval_set(dets, truth);
    const auto rep = metrics::evaluate(images, static_cast<int>(classes.size()), a.iou);
    detail::emit(a.out, io::report_json(rep, classes).dump(2) + "\n", out);
    if (!a.confusion_csv.empty()) magiceye::detail::write_file(a.confusion_csv, io::confusion_csv(rep.confusion, classes));
    return kOk;
}

struct TrainArgs {
    std::string out;
    int epochs = 25;
    double lr = 0.1;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t samples = 512;
    std::size_t dim = 4;
    std::uint64_t seed = 0;
    std::vector<std::string> freeze;
};

inline int run_train(const TrainArgs& a, std::ostream& out) {
    if (a.dim < 1) throw ValidationError("dim must be at least 1");
    if (a.samples < 1) throw ValidationError("samples must be at least 1");
    optim::ToyDetectorModel model{a.dim};
    const auto data = optim::ToyDetectorModel::synthesize(a.samples, a.dim, a.seed);
    optim::ParamVector init(std::vector<double>(model.parameter_count(), 0.0));
    if (!a.freeze.empty()) {
        init.frozen.assign(model.parameter_count(), false);
        for (const auto& head : a.freeze) {
            std::size_t block = 0;
            if (head == "object") block = 0;
            else if (head == "class") block = 1;
            else if (head == "box") block = 2;
            else throw ValidationError("--freeze: expected object, class or box");
            for (std::size_t i = 0; i < a.dim; ++i) init.frozen[block * a.dim + i] = true;
        }
    }
    const optim::OptimizerConfig cfg{a.lr, a.momentum, a.batch_size};
    const auto res = optim::train_toy(model, std::span<const optim::ToyDetectorModel::Sample>(data), init, cfg,
                                      {a.epochs, a.seed});
    detail::emit(a.out, optim::format_history_csv(res.history), out);
    return kOk;
}

struct FaceArgs {
    std::string registry, person, embeddings, probe, out;
    std::string backend_ids = "facenet,vggface";
    std::string dims = "128,2622";
    double threshold = face::kDefaultMatchThreshold;
    std::int64_t timestamp = 0;
};

inline std::array<std::string, 2> backend_ids(const FaceArgs& a) {
    auto [x, y] = detail::split_pair(a.backend_ids, ',', "--backend-ids");
    return {x, y};
}

inline int run_face_enroll(const FaceArgs& a, std::ostream& out) {
    const auto ids = backend_ids(a);
    const auto set = io::parse_embedding_set(io::parse_json_file(a.embeddings));
    std::optional<face::FaceRegistry> reg;
    if (std::filesystem::exists(a.registry) && std::filesystem::file_size(a.registry) > 0) {
        reg.emplace(face::FaceRegistry::load(a.registry, ids));
    } else {
        const auto [d0, d1] = detail::split_pair(a.dims, ',', "--dims");
        face::BackendPair pair;
        std::size_t n0 = 0, n1 = 0;
        if (!magiceye::detail::parse_int(d0, n0) || !magiceye::detail::parse_int(d1, n1))
            throw ValidationError("--dims: expected two positive integers");
        pair.backends = {face::BackendSpec{ids[0], n0}, face::BackendSpec{ids[1], n1}};
        reg.emplace(pair);
    }
    reg->enroll_and_append(a.registry, a.person, set, a.timestamp);
    const auto rec = reg->find(a.person);
    out << "enrolled " << a.person << " (" << rec->embeddings[0].size() << "+" << rec->embeddings[1].size()
        << " embeddings), registry size " << reg->size() << "\n";
    return kOk;
}

inline int run_face_identify(const FaceArgs& a, std::ostream& out) {
    detail::require_range(a.threshold, -1, 1, "face match threshold");
    const auto reg = face::FaceRegistry::load(a.registry, backend_ids(a));
    const auto probe = io::parse_probe(io::parse_json_file(a.probe));
    const auto m = reg.identify(probe, a.threshold);
    detail::emit(a.out, io::match_json(m).dump(2) + "\n", out);
    return kOk;
}

struct CurrencyArgs {
    std::string outcomes, out;
    std::string denominations = "10,20,50,100,200,500,2000";
};

inline int run_currency_eval(const CurrencyArgs& a, std::ostream& out) {
    std::vector<std::string> labels;
    for (auto& l : magiceye::detail::split(a.denominations, ','))
        if (!l.empty()) labels.push_back(std::string(magiceye::detail::trim(l)));
    const currency::DenominationSet set(labels);
    const auto outcomes = currency::parse_outcomes_csv(magiceye::detail::read_lines(a.outcomes), a.outcomes);
    for (const auto& o : outcomes) {
        if (!set.contains(o.predicted)) throw ValidationError("unknown denomination '" + o.predicted + "'");
        if (o.truth && !set.contains(*o.truth)) throw ValidationError("unknown denomination '" + *o.truth + "'");
    }
    const auto rep = currency::evaluate_classifier(outcomes, &set);
    detail::emit(a.out, io::classifier_json(rep).dump(2) + "\n", out);
    return kOk;
}

struct SimulateArgs {
    std::string trace, scenes, class_map, route, out;
    int input_size = 640;
    double conf_threshold = detect::kDefaultConfThreshold;
    double nms_iou = detect::kDefaultNmsIou;
    double face_threshold = face::kDefaultMatchThreshold;
    double proximity = 1.5;
    double arrival_radius = 10.0;
    double straight_band = 30.0;
    std::size_t queue_capacity = 32;
    std::size_t drain_every = 1;
    bool verbose = false;
};

inline int run_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
    detail::require_range(a.conf_threshold, 0, 1, "confidence threshold");
    detail::require_range(a.nms_iou, 0, 1, "NMS IoU threshold");
    detail::require_range(a.face_threshold, -1, 1, "face match threshold");
    if (!(a.proximity >= 0)) throw ValidationError("proximity threshold out of range");
    const auto classes = dataset::load_class_map(a.class_map);
    const auto events = orchestrator::parse_trace(magiceye::detail::read_lines(a.trace), a.trace);
    const auto world = scene::build_world(io::parse_json_file(a.scenes), classes, a.input_size);
    auto perception = world.perception(classes);
    perception.conf_threshold = a.conf_threshold;
    perception.nms_iou = a.nms_iou;
    perception.face_threshold = a.face_threshold;

    orchestrator::OrchestratorConfig cfg{a.proximity, a.straight_band, a.queue_capacity};
    orchestrator::PipelineState st(cfg);
    if (!a.route.empty())
        st.start_route(orchestrator::parse_route(magiceye::detail::read_lines(a.route), a.arrival_radius), cfg);
    const auto msgs = orchestrator::run_trace(st, events, perception, cfg, a.drain_every);
    std::string log;
    for (const auto& m : msgs) log += orchestrator::format_log_line(m) + "\n";
    detail::emit(a.out, log, out);
    if (a.verbose)
        for (const auto& l : st.log) err << l << "\n";
    return kOk;
}

/// Parses argv and dispatches. Output goes to `out` unless a subcommand was
/// given an output path; diagnostics go to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"MagicEye assistive-perception toolkit", "magiceye"};
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "key=value configuration file (flags override it)");
    app.require_subcommand(1);

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "validate a detection manifest and split it");
    c_ingest->add_option("--class-map", ingest.class_map, "class map file")->required();
    c_ingest->add_option("--manifest", ingest.manifest, "box CSV")->required();
    c_ingest->add_option("--sizes", ingest.sizes, "image-size sidecar CSV")->required();
    c_ingest->add_option("--train", ingest.train, "train fraction");
    c_ingest->add_option("--val", ingest.val, "validation fraction");
    c_ingest->add_option("--test", ingest.test, "test fraction");
    c_ingest->add_option("--seed", ingest.seed, "shuffle seed");
    c_ingest->add_option("--out-dir", ingest.out_dir, "write train/val/test manifests here");

    DetectArgs det;
    auto* c_detect = app.add_subcommand("detect", "run a mock backend through decode and NMS");
    c_detect->add_option("--class-map", det.class_map, "class map file")->required();
    c_detect->add_option("--manifest", det.manifest, "encode these ground-truth boxes as backend output");
    c_detect->add_option("--sizes", det.sizes, "image-size sidecar CSV");
    c_detect->add_option("--raw", det.raw, "raw head fixture JSON");
    c_detect->add_option("--image-id", det.image_id, "image id for --raw");
    c_detect->add_option("--image-size", det.image_size, "WIDTHxHEIGHT for --raw");
    c_detect->add_option("--input-size", det.input_size, "square network input size");
    c_detect->add_option("--conf-threshold", det.conf_threshold, "minimum objectness x class score");
    c_detect->add_option("--nms-iou", det.nms_iou, "NMS IoU threshold");
    c_detect->add_option("--mock-confidence", det.mock_confidence, "confidence given to encoded ground truth");
    c_detect->add_option("--out", det.out, "detection JSON path (default stdout)");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "score detections against ground truth");
    c_eval->add_option("--class-map", ev.class_map, "class map file")->required();
    c_eval->add_option("--detections", ev.detections, "detection JSON")->required();
    c_eval->add_option("--manifest", ev.manifest, "ground-truth box CSV")->required();
    c_eval->add_option("--sizes", ev.sizes, "image-size sidecar CSV")->required();
    c_eval->add_option("--iou", ev.iou, "IoU threshold for a true positive");
    c_eval->add_option("--out", ev.out, "report JSON path (default stdout)");
    c_eval->add_option("--confusion-csv", ev.confusion_csv, "also write the confusion matrix as CSV");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train-toy", "train the toy three-head model with momentum SGD");
    c_train->add_option("--epochs", tr.epochs, "number of epochs");
    c_train->add_option("--lr", tr.lr, "learning rate");
    c_train->add_option("--momentum", tr.momentum, "momentum factor in [0,1]");
    c_train->add_option("--batch-size", tr.batch_size, "samples per optimizer step");
    c_train->add_option("--samples", tr.samples, "synthetic dataset size");
    c_train->add_option("--dim", tr.dim, "feature dimension (last feature is a bias)");
    c_train->add_option("--seed", tr.seed, "data and shuffle seed");
    c_train->add_option("--freeze", tr.freeze, "heads whose weights stay fixed (object, class, box)");
    c_train->add_option("--out", tr.out, "loss-history CSV path (default stdout)");

    FaceArgs fa;
    auto* c_face = app.add_subcommand("face", "face registry operations");
    c_face->require_subcommand(1);
    auto add_face_common = [&](CLI::App* sc) {
        sc->add_option("--registry", fa.registry, "registry file")->required();
        sc->add_option("--backend-ids", fa.backend_ids, "the two embedding backend ids");
        sc->add_option("--out", fa.out, "output path (default stdout)");
    };
    auto* c_enroll = c_face->add_subcommand("enroll", "add embeddings for a person");
    add_face_common(c_enroll);
    c_enroll->add_option("--person", fa.person, "person id")->required();
    c_enroll->add_option("--embeddings", fa.embeddings, "JSON {backend: [[...], ...]}")->required();
    c_enroll->add_option("--dims", fa.dims, "embedding dimensions when creating a registry");
    c_enroll->add_option("--timestamp", fa.timestamp, "enrollment time in ms");
    auto* c_identify = c_face->add_subcommand("identify", "match a probe against the registry");
    add_face_common(c_identify);
    c_identify->add_option("--probe", fa.probe, "JSON {backend: [...], attributes: {...}}")->required();
    c_identify->add_option("--threshold", fa.threshold, "fused cosine score needed for a match");

    CurrencyArgs cu;
    auto* c_currency = app.add_subcommand("currency", "currency classifier operations");
    c_currency->require_subcommand(1);
    auto* c_ceval = c_currency->add_subcommand("eval", "accuracy, precision, recall and F1 of labeled outcomes");
    c_ceval->add_option("--outcomes", cu.outcomes, "CSV image_id,truth,predicted,confidence")->required();
    c_ceval->add_option("--denominations", cu.denominations, "comma-separated denomination labels");
    c_ceval->add_option("--out", cu.out, "report JSON path (default stdout)");

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "replay a sensor trace into a feedback log");
    c_sim->add_option("--trace", sim.trace, "sensor trace file")->required();
    c_sim->add_option("--scenes", sim.scenes, "scripted scene JSON")->required();
    c_sim->add_option("--class-map", sim.class_map, "class map file")->required();
    c_sim->add_option("--route", sim.route, "waypoint file; starts in navigation mode");
    c_sim->add_option("--input-size", sim.input_size, "square network input size");
    c_sim->add_option("--conf-threshold", sim.conf_threshold, "minimum objectness x class score");
    c_sim->add_option("--nms-iou", sim.nms_iou, "NMS IoU threshold");
    c_sim->add_option("--face-threshold", sim.face_threshold, "fused cosine score needed for a face match");
    c_sim->add_option("--proximity-threshold", sim.proximity, "alert distance in meters");
    c_sim->add_option("--arrival-radius", sim.arrival_radius, "waypoint arrival radius in meters");
    c_sim->add_option("--straight-band", sim.straight_band, "bearing change below this is 'straight' (degrees)");
    c_sim->add_option("--queue-capacity", sim.queue_capacity, "pending feedback capacity");
    c_sim->add_option("--drain-every", sim.drain_every, "drain feedback after this many events");
    c_sim->add_flag("--verbose", sim.verbose, "print the state-machine log to stderr");
    c_sim->add_option("--out", sim.out, "feedback log path (default stdout)");

    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kUsage;
    }

    try {
        if (*c_ingest) return run_ingest(ingest, out);
        if (*c_detect) return run_detect(det, out);
        if (*c_eval) return run_eval(ev, out);
        if (*c_train) return run_train(tr, out);
        if (*c_enroll) return run_face_enroll(fa, out);
        if (*c_identify) return run_face_identify(fa, out);
        if (*c_ceval) return run_currency_eval(cu, out);
        if (*c_sim) return run_simulate(sim, out, err);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const BackendError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    }
    err << app.help();
    return kUsage;
}

} // namespace magiceye::cli
