#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "test_util.hpp"

using testutil::data_path;
using testutil::run_cli;

namespace {

std::vector<std::string> simulate_args() {
    return {"simulate", "--trace", data_path("sim/trace.txt"), "--scenes", data_path("sim/scenes.json"),
            "--class-map", data_path("classes.txt"), "--route", data_path("sim/route.txt")};
}

std::vector<std::string> with(std::vector<std::string> base, std::initializer_list<std::string> extra) {
    base.insert(base.end(), extra);
    return base;
}

}  // namespace

TEST(CliSimulate, GoldenFeedbackLogByteIdentical) {
    const auto r = run_cli(simulate_args());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, testutil::slurp(data_path("sim/expected_feedback.log")));
}

TEST(CliSimulate, WritesFileAndVerboseLog) {
    const auto dir = testutil::scratch_dir("cli_sim");
    const auto out = (dir / "feedback.log").string();
    const auto r = run_cli(with(simulate_args(), {"--out", out, "--verbose"}));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(r.out.empty());
    EXPECT_EQ(testutil::slurp(out), testutil::slurp(data_path("sim/expected_feedback.log")));
    EXPECT_NE(r.err.find("capture requested"), std::string::npos);
}

TEST(CliSimulate, ConfigFileThenFlagsOverride) {
    const auto dir = testutil::scratch_dir("cli_cfg");
    const auto ini = (dir / "sim.ini").string();
    testutil::spit(ini, "[simulate]\nproximity-threshold=0.5\n");
    auto r = run_cli([&] {
        std::vector<std::string> a{"--config", ini};
        for (auto& s : simulate_args()) a.push_back(s);
        return a;
    }());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.find("Obstacle"), std::string::npos);  // 0.8 m is beyond 0.5 m

    std::vector<std::string> a{"--config", ini};
    for (auto& s : simulate_args()) a.push_back(s);
    a.insert(a.end(), {"--proximity-threshold", "1.0"});
    r = run_cli(a);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("Obstacle within 0.8 meters"), std::string::npos);

    std::vector<std::string> bundled{"--config", data_path("sim/simulate.ini")};
    for (auto& s : simulate_args()) bundled.push_back(s);
    EXPECT_EQ(run_cli(bundled).out, testutil::slurp(data_path("sim/expected_feedback.log")));
}

TEST(CliErrors, ExitCodes) {
    auto r = run_cli({"detect", "--class-map", data_path("classes.txt"), "--raw", data_path("raw/head_fixture.json"),
                      "--image-id", "x", "--image-size", "1280x720", "--conf-threshold", "1.1"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("confidence threshold out of range"), std::string::npos) << r.err;

    r = run_cli({"eval", "--class-map", data_path("nope.txt"), "--detections", "a", "--manifest", "b", "--sizes", "c"});
    EXPECT_EQ(r.code, 2);

    EXPECT_EQ(run_cli({"frobnicate"}).code, 64);
    EXPECT_EQ(run_cli({}).code, 64);
    EXPECT_EQ(run_cli({"ingest", "--manifest", "m"}).code, 64);

    r = run_cli(with(simulate_args(), {"--nms-iou", "2"}));
    EXPECT_EQ(r.code, 1);
}

TEST(CliHelp, ListsDefaults) {
    const auto r = run_cli({"train-toy", "--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("--momentum"), std::string::npos);
    EXPECT_NE(r.out.find("0.9"), std::string::npos);
    const auto top = run_cli({"--help"});
    EXPECT_EQ(top.code, 0);
    EXPECT_NE(top.out.find("simulate"), std::string::npos);
}

TEST(CliPipeline, IngestDetectEvalOnSyntheticManifest) {
    const auto dir = testutil::scratch_dir("cli_pipeline");
    const auto classes = data_path("classes.txt"), manifest = data_path("synthetic/manifest.csv"),
               sizes = data_path("synthetic/sizes.csv");
    auto r = run_cli({"ingest", "--class-map", classes, "--manifest", manifest, "--sizes", sizes, "--out-dir",
                      (dir / "split").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("samples 132"), std::string::npos) << r.out;
    EXPECT_TRUE(std::filesystem::exists(dir / "split" / "train.csv"));

    const auto dets = (dir / "dets.json").string();
    r = run_cli({"detect", "--class-map", classes, "--manifest", manifest, "--sizes", sizes, "--out", dets});
    ASSERT_EQ(r.code, 0) << r.err;

    const auto cm = (dir / "cm.csv").string();
    r = run_cli({"eval", "--class-map", classes, "--detections", dets, "--manifest", manifest, "--sizes", sizes,
                 "--confusion-csv", cm});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_NEAR(j["map"].get<double>(), 1.0, 1e-12);
    EXPECT_EQ(j["precision"].get<double>(), 1.0);
    EXPECT_EQ(j["recall"].get<double>(), 1.0);
    EXPECT_EQ(j["counts"]["tp"], 332);
    EXPECT_EQ(testutil::slurp(cm).rfind("truth\\predicted,Person,", 0), 0u);
}

TEST(CliDetect, RawFixtureMatchesGolden) {
    const auto r = run_cli({"detect", "--class-map", data_path("classes.txt"), "--raw",
                            data_path("raw/head_fixture.json"), "--image-id", "street_01", "--image-size", "1280x720"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto got = nlohmann::json::parse(r.out);
    const auto want = nlohmann::json::parse(testutil::slurp(data_path("raw/expected_detections.json")));
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i]["label"], want[i]["label"]);
        for (int k = 0; k < 4; ++k) EXPECT_NEAR(got[i]["box"][k].get<double>(), want[i]["box"][k].get<double>(), 1e-3);
    }
}

TEST(CliTrain, HistoryCsvShapeAndDeterminism) {
    const std::vector<std::string> args{"train-toy", "--epochs", "5", "--samples", "64", "--seed", "3"};
    const auto a = run_cli(args), b = run_cli(args);
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    const auto lines = magiceye::detail::split(a.out, '\n');
    EXPECT_EQ(lines[0].rfind("epoch,", 0), 0u);
    std::size_t rows = 0;
    for (const auto& l : lines) rows += !l.empty();
    EXPECT_EQ(rows, 6u);
    EXPECT_EQ(run_cli({"train-toy", "--momentum", "1.5"}).code, 1);
    EXPECT_EQ(run_cli({"train-toy", "--freeze", "tail"}).code, 1);
}
