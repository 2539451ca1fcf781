#pragma once

/// Runtime loop of the wearable: device events in, prioritized text feedback
/// out. Button and proximity triggers start a capture, captured frames run the
/// detection pipeline (with face and currency branches), and GPS fixes drive
/// turn-by-turn navigation along a waypoint route.

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "magiceye/backend.hpp"
#include "magiceye/currency.hpp"
#include "magiceye/dataset.hpp"
#include "magiceye/detail/text.hpp"
#include "magiceye/detect.hpp"
#include "magiceye/error.hpp"
#include "magiceye/face.hpp"

namespace magiceye::orchestrator {

// ---------------------------------------------------------------------------
// Events and messages

struct ButtonPress {
    bool operator==(const ButtonPress&) const = default;
};
struct ProximityAlert {
    double distance_m = 0;
    bool operator==(const ProximityAlert&) const = default;
};
struct GpsFix {
    double lat = 0, lon = 0;
    bool operator==(const GpsFix&) const = default;
};
struct FrameCaptured {
    std::string image_ref;
    bool operator==(const FrameCaptured&) const = default;
};

struct DeviceEvent {
    std::int64_t timestamp_ms = 0;
    std::variant<ButtonPress, ProximityAlert, GpsFix, FrameCaptured> kind;
    bool operator==(const DeviceEvent&) const = default;
};

enum class Priority { Description = 0, Navigation = 1, Alert = 2 };

inline const char* to_string(Priority p) {
    switch (p) {
        case Priority::Alert: return "Alert";
        case Priority::Navigation: return "Navigation";
        case Priority::Description: return "Description";
    }
    return "?";
}

struct FeedbackMessage {
    Priority priority = Priority::Description;
    std::string text;
    std::int64_t created_at = 0;
    std::uint64_t seq = 0;  // insertion order, breaks created_at ties

    bool operator==(const FeedbackMessage&) const = default;
};

/// Drain order: higher priority first, then older first.
inline bool drains_before(const FeedbackMessage& a, const FeedbackMessage& b) noexcept {
    if (a.priority != b.priority) return a.priority > b.priority;
    if (a.created_at != b.created_at) return a.created_at < b.created_at;
    return a.seq < b.seq;
}

inline std::string alert_text(double distance_m) { return fmt::format("Obstacle within {:.1f} meters", distance_m); }

inline std::string description_text(const std::string& label, double confidence) {
    return fmt::format("{} ahead, confidence {:.0f}%", label, confidence * 100.0);
}

/// Bounded queue of pending feedback. On overflow the lowest-priority, oldest
/// message (the incoming one included) is dropped, so Descriptions go before
/// Navigation and Alerts only go when nothing else is left.
class FeedbackQueue {
public:
    explicit FeedbackQueue(std::size_t capacity = 32) : capacity_(capacity) {
        if (capacity_ == 0) throw ValidationError("feedback queue capacity must be positive");
    }

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    std::size_t dropped() const noexcept { return dropped_; }

    /// Returns the message evicted by overflow, if any.
    std::optional<FeedbackMessage> push(FeedbackMessage m) {
        if (m.text.empty()) throw ValidationError("feedback text must be non-empty");
        m.seq = next_seq_++;
        items_.push_back(std::move(m));
        if (items_.size() <= capacity_) return std::nullopt;
        auto victim = std::min_element(items_.begin(), items_.end(), [](const auto& a, const auto& b) {
            if (a.priority != b.priority) return a.priority < b.priority;
            return drains_before(a, b);
        });
        FeedbackMessage gone = std::move(*victim);
        items_.erase(victim);
        ++dropped_;
        return gone;
    }

    std::vector<FeedbackMessage> drain() {
        std::vector<FeedbackMessage> out(items_.begin(), items_.end());
        items_.clear();
        std::stable_sort(out.begin(), out.end(), drains_before);
        return out;
    }

private:
    std::size_t capacity_;
    std::deque<FeedbackMessage> items_;
    std::uint64_t next_seq_ = 0;
    std::size_t dropped_ = 0;
};

// ---------------------------------------------------------------------------
// Navigation

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) noexcept { return d * kPi / 180.0; }
inline double rad2deg(double r) noexcept { return r * 180.0 / kPi; }

/// Great-circle distance on a sphere of radius 6371 km.
inline double haversine_m(double lat1, double lon1, double lat2, double lon2) noexcept {
    const double p1 = deg2rad(lat1), p2 = deg2rad(lat2);
    const double dp = p2 - p1, dl = deg2rad(lon2 - lon1);
    const double a = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

/// Initial bearing from point 1 to point 2, degrees clockwise from north in [0, 360).
inline double bearing_deg(double lat1, double lon1, double lat2, double lon2) noexcept {
    const double p1 = deg2rad(lat1), p2 = deg2rad(lat2), dl = deg2rad(lon2 - lon1);
    const double y = std::sin(dl) * std::cos(p2);
    const double x = std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dl);
    double b = rad2deg(std::atan2(y, x));
    b = std::fmod(b + 360.0, 360.0);
    return b;
}

/// Normalizes an angle difference to (-180, 180].
inline double normalize_delta(double d) noexcept {
    d = std::fmod(d, 360.0);
    if (d <= -180.0) d += 360.0;
    if (d > 180.0) d -= 360.0;
    return d;
}

enum class TurnDirection { Straight, Left, Right };

inline const char* to_string(TurnDirection d) {
    switch (d) {
        case TurnDirection::Left: return "left";
        case TurnDirection::Right: return "right";
        case TurnDirection::Straight: return "straight";
    }
    return "?";
}

/// Positive deltas turn clockwise, i.e. right.
inline TurnDirection classify_turn(double delta_deg, double straight_band_deg = 30.0) noexcept {
    const double d = normalize_delta(delta_deg);
    if (std::abs(d) < straight_band_deg) return TurnDirection::Straight;
    return d < 0 ? TurnDirection::Left : TurnDirection::Right;
}

struct Waypoint {
    double lat = 0, lon = 0;
};

struct Route {
    std::vector<Waypoint> waypoints;
    double arrival_radius_m = 10.0;
};

inline void validate(const Route& r) {
    if (r.waypoints.size() < 2) throw ValidationError("route needs at least two waypoints");
    if (!(r.arrival_radius_m > 0.0)) throw ValidationError("arrival radius must be positive");
    for (const auto& w : r.waypoints)
        if (!(std::abs(w.lat) <= 90.0 && std::abs(w.lon) <= 180.0)) throw ValidationError("waypoint out of range");
}

/// Route plus progress. The first waypoint is the starting point; guidance
/// targets waypoints[next] starting from index 1.
struct NavigationState {
    Route route;
    std::size_t next = 1;
    bool finished = false;
    double straight_band_deg = 30.0;
};

struct NavInstruction {
    bool arrived = false;  // destination reached
    TurnDirection direction = TurnDirection::Straight;
    double distance_m = 0;  // from the fix to the waypoint just reached

    std::string text() const {
        if (arrived) return "destination reached";
        return fmt::format("turn {} in {:.0f} meters", to_string(direction), distance_m);
    }
};

/// Advances the route when the fix is within the arrival radius of the next
/// waypoint. At an intermediate waypoint the turn is the bearing change from
/// the incoming leg to the outgoing leg (the walker's heading stands in when
/// the incoming leg has zero length); at the last one the destination is
/// reached and the route finishes.
inline std::optional<NavInstruction> navigate_step(NavigationState& nav, const GpsFix& fix, double heading_deg) {
    if (nav.finished) return std::nullopt;
    const auto& wps = nav.route.waypoints;
    const auto& target = wps[nav.next];
    const double dist = haversine_m(fix.lat, fix.lon, target.lat, target.lon);
    if (dist > nav.route.arrival_radius_m) return std::nullopt;

    NavInstruction ins;
    ins.distance_m = dist;
    if (nav.next + 1 >= wps.size()) {
        nav.finished = true;
        ins.arrived = true;
        return ins;
    }
    const auto& prev = wps[nav.next - 1];
    const auto& after = wps[nav.next + 1];
    const double incoming = haversine_m(prev.lat, prev.lon, target.lat, target.lon) > 1e-9
                                ? bearing_deg(prev.lat, prev.lon, target.lat, target.lon)
                                : heading_deg;
    const double outgoing = bearing_deg(target.lat, target.lon, after.lat, after.lon);
    ins.direction = classify_turn(outgoing - incoming, nav.straight_band_deg);
    ++nav.next;
    return ins;
}

// ---------------------------------------------------------------------------
// Perception handles

enum class Branch { Describe, Face, Currency };

struct Perception {
    backend::InferenceBackend* detector = nullptr;
    std::function<backend::ImageInfo(const std::string&)> image_info;
    const dataset::ClassMap* classes = nullptr;
    std::map<std::string, Branch> branches;  // class label -> branch, default Describe

    face::FaceDetectorBackend* face_detector = nullptr;
    face::EmbeddingBackend* embedder = nullptr;
    const face::FaceRegistry* registry = nullptr;
    double face_threshold = face::kDefaultMatchThreshold;

    currency::CurrencyBackend* currency = nullptr;
    currency::DenominationSet denominations;

    double conf_threshold = detect::kDefaultConfThreshold;
    double nms_iou = detect::kDefaultNmsIou;
};

// ---------------------------------------------------------------------------
// State machine

enum class Mode { Idle, Capturing, Describing, Navigating };

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::Idle: return "Idle";
        case Mode::Capturing: return "Capturing";
        case Mode::Describing: return "Describing";
        case Mode::Navigating: return "Navigating";
    }
    return "?";
}

struct OrchestratorConfig {
    double proximity_threshold_m = 1.5;
    double straight_band_deg = 30.0;
    std::size_t queue_capacity = 32;
};

struct PipelineState {
    Mode mode = Mode::Idle;
    std::optional<NavigationState> navigation;
    FeedbackQueue queue;
    std::optional<GpsFix> last_fix;
    double heading_deg = 0.0;
    std::int64_t last_timestamp = std::numeric_limits<std::int64_t>::min();
    std::vector<std::string> log;  // diagnostics, not feedback

    explicit PipelineState(const OrchestratorConfig& cfg = {}) : queue(cfg.queue_capacity) {}

    void start_route(Route r, const OrchestratorConfig& cfg = {}) {
        validate(r);
        navigation = NavigationState{std::move(r), 1, false, cfg.straight_band_deg};
        if (mode == Mode::Idle) mode = Mode::Navigating;
    }
    Mode resting_mode() const { return navigation ? Mode::Navigating : Mode::Idle; }
};

namespace detail {

inline std::vector<std::pair<std::string, double>> describe_frame(PipelineState& st, const std::string& image_ref,
                                                                  const Perception& p) {
    if (!p.detector) throw BackendError("detector backend unavailable");
    if (!p.image_info) throw BackendError("image size lookup unavailable");
    const auto info = p.image_info(image_ref);
    const auto heads = p.detector->infer(info);
    const auto t = detect::compute_letterbox(info.width, info.height, p.detector->input_size());
    const auto dets = detect::postprocess(heads, t, p.conf_threshold, p.nms_iou);

    // Face and currency backends see the whole frame, so each runs at most once.
    std::vector<std::pair<std::string, double>> lines;
    bool faces_done = false, currency_done = false;
    for (const auto& d : dets) {
        const std::string label = p.classes && p.classes->contains(d.class_index) ? p.classes->label(d.class_index)
                                                                                  : "class " + std::to_string(d.class_index);
        auto it = p.branches.find(label);
        const Branch br = it == p.branches.end() ? Branch::Describe : it->second;
        if (br == Branch::Face && faces_done) continue;
        if (br == Branch::Currency && currency_done) continue;
        if (br == Branch::Face && p.face_detector && p.embedder && p.registry) {
            const auto crops = face::detect_faces(image_ref, p.face_detector);
            if (!crops.empty()) {
                faces_done = true;
                for (std::size_t i = 0; i < crops.size(); ++i) {
                    const auto probe = p.embedder->embed(image_ref, i, crops[i]);
                    const auto m = p.registry->identify(probe, p.face_threshold);
                    if (m.matched())
                        lines.emplace_back(*m.person_id, std::clamp(m.fused_score, 0.0, 1.0));
                    else
                        lines.emplace_back("Unknown person", d.confidence);
                }
                continue;
            }
            st.log.push_back("face branch: no face crops in " + image_ref);
        } else if (br == Branch::Currency && p.currency) {
            try {
                const auto o = currency::classify(image_ref, p.currency, p.denominations);
                lines.emplace_back(o.predicted + " note", o.confidence);
                currency_done = true;
                continue;
            } catch (const std::exception& e) {
                st.log.push_back(std::string("currency branch: ") + e.what());
            }
        }
        lines.emplace_back(label, d.confidence);
    }
    return lines;
}

} // namespace detail

/// Applies one event. Every emitted message is also pushed onto the state's
/// feedback queue. The transition table is total: pairs without an effect are
/// logged no-ops.
inline std::vector<FeedbackMessage> handle_event(PipelineState& st, const DeviceEvent& ev, const Perception& perception,
                                                 const OrchestratorConfig& cfg = {}) {
    if (ev.timestamp_ms < st.last_timestamp) throw ValidationError("event timestamps must be non-decreasing");
    st.last_timestamp = ev.timestamp_ms;
    std::vector<FeedbackMessage> emitted;
    auto emit = [&](Priority pr, std::string text) {
        FeedbackMessage m{pr, std::move(text), ev.timestamp_ms, 0};
        st.queue.push(m);
        emitted.push_back(std::move(m));
    };
    auto note = [&](const std::string& what) {
        st.log.push_back(std::to_string(ev.timestamp_ms) + " " + to_string(st.mode) + ": " + what);
    };

    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, ButtonPress>) {
                if (st.mode == Mode::Capturing) {
                    note("button ignored, capture already pending");
                } else {
                    st.mode = Mode::Capturing;
                    note("capture requested");
                }
            } else if constexpr (std::is_same_v<K, ProximityAlert>) {
                if (!(k.distance_m >= 0.0)) throw ValidationError("proximity distance must be non-negative");
                if (k.distance_m < cfg.proximity_threshold_m) {
                    emit(Priority::Alert, alert_text(k.distance_m));
                    st.mode = Mode::Capturing;
                    note("proximity capture requested");
                } else {
                    note("proximity reading beyond threshold");
                }
            } else if constexpr (std::is_same_v<K, FrameCaptured>) {
                if (st.mode != Mode::Capturing) {
                    note("spurious frame " + k.image_ref + " ignored");
                    return;
                }
                st.mode = Mode::Describing;
                try {
                    for (const auto& [label, conf] : detail::describe_frame(st, k.image_ref, perception))
                        emit(Priority::Description, description_text(label, conf));
                } catch (const std::exception& e) {
                    note(std::string("pipeline failed: ") + e.what());
                }
                st.mode = st.resting_mode();
            } else if constexpr (std::is_same_v<K, GpsFix>) {
                if (!(std::abs(k.lat) <= 90.0 && std::abs(k.lon) <= 180.0))
                    throw ValidationError("GPS fix out of range");
                if (st.last_fix && haversine_m(st.last_fix->lat, st.last_fix->lon, k.lat, k.lon) > 1e-6)
                    st.heading_deg = bearing_deg(st.last_fix->lat, st.last_fix->lon, k.lat, k.lon);
                st.last_fix = k;
                if (!st.navigation) {
                    note("gps fix without active route");
                    return;
                }
                if (auto ins = navigate_step(*st.navigation, k, st.heading_deg)) {
                    emit(Priority::Navigation, ins->text());
                    if (ins->arrived) {
                        st.navigation.reset();
                        if (st.mode == Mode::Navigating) st.mode = Mode::Idle;
                    }
                }
            }
        },
        ev.kind);
    return emitted;
}

inline std::vector<FeedbackMessage> drain_feedback(PipelineState& st) { return st.queue.drain(); }

// ---------------------------------------------------------------------------
// Trace and log formats

/// `timestamp_ms kind args...` with kinds BUTTON, FRAME <ref>, PROX <meters>,
/// GPS <lat> <lon>. Blank lines and `#` comments are skipped.
inline std::vector<DeviceEvent> parse_trace(const std::vector<std::string>& lines, const std::string& name = "trace") {
    std::vector<DeviceEvent> out;
    std::int64_t last = std::numeric_limits<std::int64_t>::min();
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const auto line = magiceye::detail::trim(lines[ln]);
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> tok;
        for (auto& t : magiceye::detail::split(line, ' '))
            if (!t.empty()) tok.push_back(t);
        const std::string where = name + ":" + std::to_string(ln + 1) + ": ";
        DeviceEvent ev;
        if (tok.size() < 2 || !magiceye::detail::parse_int(tok[0], ev.timestamp_ms))
            throw ValidationError(where + "expected `timestamp_ms kind args...`");
        const auto& kind = tok[1];
        if (kind == "BUTTON" && tok.size() == 2) {
            ev.kind = ButtonPress{};
        } else if (kind == "FRAME" && tok.size() == 3) {
            ev.kind = FrameCaptured{tok[2]};
        } else if (kind == "PROX" && tok.size() == 3) {
            ProximityAlert p;
            if (!magiceye::detail::parse_double(tok[2], p.distance_m) || p.distance_m < 0)
                throw ValidationError(where + "proximity distance must be a non-negative number");
            ev.kind = p;
        } else if (kind == "GPS" && tok.size() == 4) {
            GpsFix g;
            if (!magiceye::detail::parse_double(tok[2], g.lat) || !magiceye::detail::parse_double(tok[3], g.lon) ||
                std::abs(g.lat) > 90 || std::abs(g.lon) > 180)
                throw ValidationError(where + "invalid GPS fix");
            ev.kind = g;
        } else {
            throw ValidationError(where + "unknown event `" + kind + "` or wrong argument count");
        }
        if (ev.timestamp_ms < last) throw ValidationError(where + "timestamps must be non-decreasing");
        last = ev.timestamp_ms;
        out.push_back(std::move(ev));
    }
    return out;
}

inline std::string format_event(const DeviceEvent& ev) {
    return std::visit(
        [&](const auto& k) -> std::string {
            using K = std::decay_t<decltype(k)>;
            const std::string ts = std::to_string(ev.timestamp_ms);
            if constexpr (std::is_same_v<K, ButtonPress>) return ts + " BUTTON";
            else if constexpr (std::is_same_v<K, FrameCaptured>) return ts + " FRAME " + k.image_ref;
            else if constexpr (std::is_same_v<K, ProximityAlert>) return ts + " PROX " + magiceye::detail::format_double(k.distance_m);
            else return ts + " GPS " + magiceye::detail::format_double(k.lat) + " " + magiceye::detail::format_double(k.lon);
        },
        ev.kind);
}

/// `timestamp_ms priority "text"`.
inline std::string format_log_line(const FeedbackMessage& m) {
    std::string text;
    for (char c : m.text) {
        if (c == '"' || c == '\\') text.push_back('\\');
        text.push_back(c);
    }
    return std::to_string(m.created_at) + " " + to_string(m.priority) + " \"" + text + "\"";
}

/// Route file: one `lat lon` (or `lat,lon`) per line.
inline Route parse_route(const std::vector<std::string>& lines, double arrival_radius_m = 10.0) {
    Route r;
    r.arrival_radius_m = arrival_radius_m;
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        auto line = std::string(magiceye::detail::trim(lines[ln]));
        if (line.empty() || line.front() == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::vector<std::string> tok;
        for (auto& t : magiceye::detail::split(line, ' '))
            if (!t.empty()) tok.push_back(t);
        Waypoint w;
        if (tok.size() != 2 || !magiceye::detail::parse_double(tok[0], w.lat) ||
            !magiceye::detail::parse_double(tok[1], w.lon))
            throw ValidationError("route line " + std::to_string(ln + 1) + ": expected `lat lon`");
        r.waypoints.push_back(w);
    }
    validate(r);
    return r;
}

// ---------------------------------------------------------------------------
// Event loop

/// Blocking bounded channel for handing events from a producer thread to the
/// single-threaded state machine.
template <typename T>
class BoundedChannel {
public:
    explicit BoundedChannel(std::size_t capacity) : capacity_(capacity ? capacity : 1) {}

    void send(T v) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) return;
        items_.push_back(std::move(v));
        not_empty_.notify_one();
    }
    std::optional<T> receive() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return v;
    }
    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

private:
    std::size_t capacity_;
    std::deque<T> items_;
    bool closed_ = false;
    std::mutex mu_;
    std::condition_variable not_empty_, not_full_;
};

/// Replays events in order through the state machine, draining the feedback
/// queue after every `drain_every` events and once at the end. Events are fed
/// from a producer thread over a bounded channel; processing stays on the
/// calling thread, so the result depends only on the trace and the backends.
inline std::vector<FeedbackMessage> run_trace(PipelineState& st, const std::vector<DeviceEvent>& events,
                                              const Perception& perception, const OrchestratorConfig& cfg = {},
                                              std::size_t drain_every = 1) {
    BoundedChannel<DeviceEvent> channel(16);
    std::thread producer([&] {
        for (const auto& e : events) channel.send(e);
        channel.close();
    });
    std::vector<FeedbackMessage> out;
    std::size_t n = 0;
    try {
        while (auto ev = channel.receive()) {
            handle_event(st, *ev, perception, cfg);
            if (drain_every && ++n % drain_every == 0)
                for (auto& m : drain_feedback(st)) out.push_back(std::move(m));
        }
    } catch (...) {
        channel.close();
        producer.join();
        throw;
    }
    producer.join();
    for (auto& m : drain_feedback(st)) out.push_back(std::move(m));
    return out;
}

} // namespace magiceye::orchestrator
