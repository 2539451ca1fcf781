#include <gtest/gtest.h>

#include <random>

#include "magiceye/orchestrator.hpp"
#include "magiceye/scene.hpp"
#include "test_util.hpp"

using namespace magiceye;
using namespace magiceye::orchestrator;

namespace {

FeedbackMessage msg(Priority p, std::string text, std::int64_t t) { return {p, std::move(text), t, 0}; }

struct World {
    dataset::ClassMap classes = dataset::load_class_map(testutil::data_path("classes.txt"));
    scene::MockWorld world = scene::build_world(io::parse_json_file(testutil::data_path("sim/scenes.json")), classes, 640);
    Perception perception = world.perception(classes);
};

Route sim_route(double radius = 10.0) {
    return parse_route(magiceye::detail::read_lines(testutil::data_path("sim/route.txt")), radius);
}

DeviceEvent ev(std::int64_t t, decltype(DeviceEvent::kind) k) { return {t, std::move(k)}; }

}  // namespace

TEST(Queue, DrainsByPriorityThenAge) {
    FeedbackQueue q(8);
    q.push(msg(Priority::Description, "d1", 1));
    q.push(msg(Priority::Navigation, "n1", 2));
    q.push(msg(Priority::Alert, "a1", 3));
    q.push(msg(Priority::Description, "d0", 0));
    q.push(msg(Priority::Alert, "a0", 3));
    std::vector<std::string> got;
    for (const auto& m : q.drain()) got.push_back(m.text);
    EXPECT_EQ(got, (std::vector<std::string>{"a1", "a0", "n1", "d0", "d1"}));
    EXPECT_TRUE(q.empty());
}

TEST(Queue, OverflowDropsLowestPriorityOldest) {
    FeedbackQueue q(2);
    q.push(msg(Priority::Description, "d", 1));
    q.push(msg(Priority::Navigation, "n", 2));
    const auto gone = q.push(msg(Priority::Alert, "a", 3));
    ASSERT_TRUE(gone);
    EXPECT_EQ(gone->text, "d");
    const auto out = q.drain();
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].text, "a");
    EXPECT_EQ(out[1].text, "n");
    EXPECT_EQ(q.dropped(), 1u);
}

TEST(Queue, OverflowOfAlertsEvictsOldestAlert) {
    FeedbackQueue q(2);
    q.push(msg(Priority::Alert, "a1", 1));
    q.push(msg(Priority::Alert, "a2", 2));
    EXPECT_EQ(q.push(msg(Priority::Alert, "a3", 3))->text, "a1");
    // An incoming Description is itself the victim when the queue holds Alerts.
    EXPECT_EQ(q.push(msg(Priority::Description, "d", 4))->text, "d");
    EXPECT_THROW(q.push(msg(Priority::Alert, "", 5)), ValidationError);
    EXPECT_THROW(FeedbackQueue(0), ValidationError);
}

TEST(Templates, Wording) {
    EXPECT_EQ(alert_text(0.8), "Obstacle within 0.8 meters");
    EXPECT_EQ(alert_text(1.25), "Obstacle within 1.2 meters");
    EXPECT_EQ(description_text("Chair", 0.914), "Chair ahead, confidence 91%");
    EXPECT_EQ((NavInstruction{false, TurnDirection::Left, 42.4}).text(), "turn left in 42 meters");
    EXPECT_EQ((NavInstruction{true, TurnDirection::Straight, 3}).text(), "destination reached");
    EXPECT_EQ(format_log_line(msg(Priority::Alert, "say \"hi\"", 7)), R"(7 Alert "say \"hi\"")");
}

TEST(Geo, HaversineAndBearing) {
    // One degree of latitude is R*pi/180.
    EXPECT_NEAR(haversine_m(0, 0, 1, 0), 6371000.0 * kPi / 180.0, 1e-6);
    EXPECT_NEAR(haversine_m(0, 0, 0, 1), 111194.9266, 1e-3);
    EXPECT_EQ(haversine_m(17.3, 78.4, 17.3, 78.4), 0.0);
    EXPECT_NEAR(haversine_m(0, 0, 0, 180), 6371000.0 * kPi, 1e-6);
    EXPECT_NEAR(bearing_deg(0, 0, 1, 0), 0.0, 1e-9);
    EXPECT_NEAR(bearing_deg(0, 0, 0, 1), 90.0, 1e-9);
    EXPECT_NEAR(bearing_deg(0, 0, -1, 0), 180.0, 1e-9);
    EXPECT_NEAR(bearing_deg(0, 0, 0, -1), 270.0, 1e-9);
}

TEST(Geo, TurnClassification) {
    EXPECT_EQ(classify_turn(-90), TurnDirection::Left);
    EXPECT_EQ(classify_turn(90), TurnDirection::Right);
    EXPECT_EQ(classify_turn(29.9), TurnDirection::Straight);
    EXPECT_EQ(classify_turn(30), TurnDirection::Right);
    EXPECT_EQ(classify_turn(-30), TurnDirection::Left);
    EXPECT_EQ(classify_turn(350), TurnDirection::Straight);
    EXPECT_EQ(classify_turn(270), TurnDirection::Left);
    EXPECT_EQ(normalize_delta(-180), 180.0);
}

TEST(Navigation, ThreeWaypointRouteTurnsLeftThenArrivesOnce) {
    const auto route = sim_route();
    PipelineState st;
    st.start_route(route);
    EXPECT_EQ(st.mode, Mode::Navigating);
    const Perception none;
    std::vector<std::string> said;
    std::int64_t t = 0;
    auto fix = [&](double lat, double lon) {
        for (const auto& m : handle_event(st, ev(t += 100, GpsFix{lat, lon}), none)) said.push_back(m.text);
    };
    fix(17.3850, 78.4867);  // start, far from waypoint 1
    fix(17.3860, 78.4867);
    fix(17.38679, 78.48671);  // arrives at the corner
    fix(17.38680, 78.4860);
    fix(17.38680, 78.48481);  // arrives at the end
    fix(17.38680, 78.48480);  // already finished
    ASSERT_EQ(said.size(), 2u);
    EXPECT_EQ(said[0].rfind("turn left in ", 0), 0u) << said[0];
    EXPECT_EQ(said[1], "destination reached");
    EXPECT_EQ(st.mode, Mode::Idle);
    EXPECT_FALSE(st.navigation);
}

TEST(Navigation, RightTurnAndStraight) {
    NavigationState nav{Route{{{0, 0}, {0.001, 0}, {0.001, 0.001}, {0.002, 0.001}}, 5}, 1, false, 30};
    auto a = navigate_step(nav, {0.001, 0}, 0);  // north then east
    ASSERT_TRUE(a);
    EXPECT_EQ(a->direction, TurnDirection::Right);
    auto b = navigate_step(nav, {0.001, 0.001}, 0);  // east then north
    EXPECT_EQ(b->direction, TurnDirection::Left);
    EXPECT_FALSE(navigate_step(nav, {0.0015, 0.001}, 0));
    EXPECT_TRUE(navigate_step(nav, {0.002, 0.001}, 0)->arrived);
    EXPECT_TRUE(nav.finished);
}

TEST(Navigation, RouteValidation) {
    EXPECT_THROW(parse_route({"17 78"}), ValidationError);
    EXPECT_THROW(parse_route({"17 78", "95 78"}), ValidationError);
    EXPECT_THROW(parse_route({"17 78", "oops"}), ValidationError);
    EXPECT_THROW(parse_route({"17 78", "18 78"}, 0.0), ValidationError);
    EXPECT_EQ(parse_route({"# c", "17,78", "18 78"}).waypoints.size(), 2u);
}

TEST(Trace, ParseAndFormatRoundTrip) {
    const auto lines = magiceye::detail::read_lines(testutil::data_path("sim/trace.txt"));
    const auto events = parse_trace(lines);
    ASSERT_EQ(events.size(), 6u);
    std::vector<std::string> again;
    for (const auto& e : events) again.push_back(format_event(e));
    EXPECT_EQ(parse_trace(again), events);
}

TEST(Trace, MalformedLinesRejected) {
    EXPECT_THROW(parse_trace({"x BUTTON"}), ValidationError);
    EXPECT_THROW(parse_trace({"10 JUMP"}), ValidationError);
    EXPECT_THROW(parse_trace({"10 PROX -1"}), ValidationError);
    EXPECT_THROW(parse_trace({"10 GPS 91 0"}), ValidationError);
    EXPECT_THROW(parse_trace({"10 FRAME"}), ValidationError);
    EXPECT_THROW(parse_trace({"10 BUTTON", "5 BUTTON"}), ValidationError);
    try {
        parse_trace({"", "10 BUTTON", "oops"}, "t.txt");
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("t.txt:3"), std::string::npos);
    }
}

TEST(StateMachine, TransitionTableIsTotal) {
    World w;
    const std::vector<DeviceEvent> kinds{ev(0, ButtonPress{}), ev(0, ProximityAlert{0.5}), ev(0, ProximityAlert{5.0}),
                                         ev(0, GpsFix{17.3850, 78.4867}), ev(0, FrameCaptured{"img_003"}),
                                         ev(0, FrameCaptured{"missing"})};
    for (bool routed : {false, true})
        for (Mode m : {Mode::Idle, Mode::Capturing, Mode::Describing, Mode::Navigating})
            for (const auto& e : kinds) {
                PipelineState st;
                if (routed) st.start_route(sim_route());
                st.mode = m;
                ASSERT_NO_THROW(handle_event(st, e, w.perception));
                // Describing is transient: entered and left within one frame event.
                if (m != Mode::Describing) EXPECT_NE(st.mode, Mode::Describing);
            }
}

TEST(StateMachine, SpecificTransitions) {
    World w;
    PipelineState st;
    handle_event(st, ev(1, FrameCaptured{"img_003"}), w.perception);
    EXPECT_EQ(st.mode, Mode::Idle);  // spurious frame
    handle_event(st, ev(2, ButtonPress{}), w.perception);
    EXPECT_EQ(st.mode, Mode::Capturing);
    handle_event(st, ev(3, ButtonPress{}), w.perception);
    EXPECT_EQ(st.mode, Mode::Capturing);
    const auto said = handle_event(st, ev(4, FrameCaptured{"img_003"}), w.perception);
    EXPECT_EQ(st.mode, Mode::Idle);
    ASSERT_EQ(said.size(), 2u);
    EXPECT_EQ(said[0].text, "Chair ahead, confidence 91%");
    EXPECT_EQ(handle_event(st, ev(5, ProximityAlert{1.5}), w.perception).size(), 0u);
    EXPECT_EQ(st.mode, Mode::Idle);
    const auto alert = handle_event(st, ev(6, ProximityAlert{1.49}), w.perception);
    ASSERT_EQ(alert.size(), 1u);
    EXPECT_EQ(alert[0].priority, Priority::Alert);
    EXPECT_EQ(st.mode, Mode::Capturing);
    EXPECT_THROW(handle_event(st, ev(5, ButtonPress{}), w.perception), ValidationError);

    // A failing pipeline is logged and the state machine recovers.
    PipelineState nav;
    nav.start_route(sim_route());
    handle_event(nav, ev(1, ButtonPress{}), w.perception);
    EXPECT_TRUE(handle_event(nav, ev(2, FrameCaptured{"missing"}), w.perception).empty());
    EXPECT_EQ(nav.mode, Mode::Navigating);
    EXPECT_NE(nav.log.back().find("pipeline failed"), std::string::npos);
}

TEST(StateMachine, FaceAndCurrencyBranches) {
    World w;
    PipelineState st;
    handle_event(st, ev(1, ButtonPress{}), w.perception);
    const auto faces = handle_event(st, ev(2, FrameCaptured{"img_003"}), w.perception);
    ASSERT_EQ(faces.size(), 2u);
    EXPECT_EQ(faces[1].text, "alice ahead, confidence 100%");
    handle_event(st, ev(3, ButtonPress{}), w.perception);
    const auto money = handle_event(st, ev(4, FrameCaptured{"img_004"}), w.perception);
    ASSERT_EQ(money.size(), 1u);
    EXPECT_EQ(money[0].text, "100 note ahead, confidence 97%");
}

namespace {

std::vector<DeviceEvent> random_trace(std::mt19937_64& rng, std::size_t n) {
    std::vector<DeviceEvent> out;
    std::int64_t t = 0;
    for (std::size_t i = 0; i < n; ++i) {
        t += static_cast<std::int64_t>(rng() % 3) * 50;  // repeated timestamps happen
        switch (rng() % 5) {
            case 0: out.push_back(ev(t, ButtonPress{})); break;
            case 1: out.push_back(ev(t, FrameCaptured{rng() % 2 ? "img_003" : "img_004"})); break;
            case 2: out.push_back(ev(t, ProximityAlert{static_cast<double>(rng() % 30) / 10.0})); break;
            default: {
                const double f = static_cast<double>(rng() % 101) / 100.0;
                // Walks the two route legs so navigation messages appear.
                out.push_back(f < 0.5 ? ev(t, GpsFix{17.3850 + 0.0018 * f * 2, 78.4867})
                                      : ev(t, GpsFix{17.3868, 78.4867 - 0.0019 * (f - 0.5) * 2}));
            }
        }
    }
    return out;
}

}  // namespace

TEST(StateMachine, AlertsPreemptWithinEveryDrain) {
    World w;
    std::mt19937_64 rng(2024);
    std::size_t alerts = 0;
    for (int iter = 0; iter < 100; ++iter) {
        const auto events = random_trace(rng, 10 + rng() % 40);
        const std::size_t every = 1 + rng() % 6;
        PipelineState st;
        st.start_route(sim_route(), {});
        std::size_t n = 0;
        std::vector<FeedbackMessage> pending;
        for (const auto& e : events) {
            for (auto& m : handle_event(st, e, w.perception)) pending.push_back(m);
            if (++n % every) continue;
            const auto batch = drain_feedback(st);
            ASSERT_EQ(batch.size(), pending.size());  // capacity 32 never overflows here
            for (std::size_t i = 1; i < batch.size(); ++i) {
                ASSERT_GE(static_cast<int>(batch[i - 1].priority), static_cast<int>(batch[i].priority));
                if (batch[i - 1].priority == batch[i].priority)
                    ASSERT_LE(batch[i - 1].created_at, batch[i].created_at);
            }
            for (const auto& m : batch) alerts += m.priority == Priority::Alert;
            pending.clear();
        }
    }
    EXPECT_GT(alerts, 100u);
}

TEST(StateMachine, ReplayIsDeterministic) {
    World w;
    std::mt19937_64 rng(99);
    for (int iter = 0; iter < 20; ++iter) {
        const auto events = random_trace(rng, 60);
        PipelineState a, b;
        a.start_route(sim_route());
        b.start_route(sim_route());
        EXPECT_EQ(run_trace(a, events, w.perception, {}, 3), run_trace(b, events, w.perception, {}, 3));
        EXPECT_EQ(a.log, b.log);
    }
}

TEST(StateMachine, RunTraceReproducesGoldenLog) {
    World w;
    PipelineState st;
    st.start_route(sim_route());
    const auto events = parse_trace(magiceye::detail::read_lines(testutil::data_path("sim/trace.txt")));
    std::string log;
    for (const auto& m : run_trace(st, events, w.perception)) log += format_log_line(m) + "\n";
    EXPECT_EQ(log, testutil::slurp(testutil::data_path("sim/expected_feedback.log")));
}

TEST(Channel, PassesValuesInOrderAcrossThreads) {
    BoundedChannel<int> ch(2);
    std::thread p([&] {
        for (int i = 0; i < 1000; ++i) ch.send(i);
        ch.close();
    });
    int expect = 0;
    while (auto v = ch.receive()) ASSERT_EQ(*v, expect++);
    p.join();
    EXPECT_EQ(expect, 1000);
}
