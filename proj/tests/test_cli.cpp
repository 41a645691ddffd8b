#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "moepath/cli.hpp"
#include "moepath/error.hpp"
#include "moepath/model_io.hpp"
#include "moepath/pruner.hpp"

using namespace moepath;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "moe-pathfinder");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("moepath_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    std::string p(const std::string& name) const { return (dir_ / name).string(); }

    // gen-model -> gen-data -> score -> plan; returns the plan directory.
    void pipeline(const std::string& prefix, std::size_t m) {
        ASSERT_EQ(run({"gen-model", "--layers", "6", "--experts", "8", "--dim", "32", "--topk", "2", "--seed", "7",
                       "-o", p(prefix + "model")}).code, 0);
        ASSERT_EQ(run({"gen-data", "--dim", "32", "--samples", "1", "--tokens", "4", "--seed", "8", "-o",
                       p(prefix + "data")}).code, 0);
        ASSERT_EQ(run({"score", "--model", p(prefix + "model"), "--data", p(prefix + "data"), "-o",
                       p(prefix + "graphs")}).code, 0);
        ASSERT_EQ(run({"plan", "--graphs", p(prefix + "graphs"), "--m", std::to_string(m), "-o",
                       p(prefix + "paths")}).code, 0);
    }

    fs::path dir_;
};

}  // namespace

TEST_F(CliTest, SingleSampleSinglePathPipeline) {
    pipeline("", 1);
    const auto r = run({"prune", "--model", p("model"), "--paths", p("paths"), "-o", p("pruned")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = nlohmann::json::parse(read_bytes(dir_ / "pruned" / "report.json"));
    EXPECT_EQ(report.at("retained_total"), 6);
    const auto mask = mask_from_json(nlohmann::json::parse(read_bytes(dir_ / "pruned" / "mask.json")));
    for (std::size_t l = 0; l < 6; ++l) EXPECT_EQ(mask.retained_in_layer(l), 1u);
    const auto pruned = load_model(dir_ / "pruned" / "pruned");
    EXPECT_EQ(pruned.config.layer_experts, std::vector<std::size_t>(6, 1));
    EXPECT_TRUE(fs::exists(dir_ / "pruned" / "manifest.json"));

    const auto ev = run({"eval", "--model", p("model"), "--mask", p("pruned/mask.json"), "--data", p("data"), "-o",
                         p("eval.json")});
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_TRUE(nlohmann::json::parse(read_bytes(dir_ / "eval.json")).contains("final_error"));
}

TEST_F(CliTest, HugeMReturnsEveryPath) {
    ASSERT_EQ(run({"gen-model", "--layers", "2", "--experts", "2", "--dim", "3", "--topk", "1", "--seed", "1", "-o",
                   p("model")}).code, 0);
    ASSERT_EQ(run({"gen-data", "--dim", "3", "--samples", "1", "--tokens", "2", "--seed", "2", "-o", p("data")}).code, 0);
    ASSERT_EQ(run({"score", "--model", p("model"), "--data", p("data"), "-o", p("graphs")}).code, 0);
    ASSERT_EQ(run({"plan", "--graphs", p("graphs"), "--m", "999999", "-o", p("paths")}).code, 0);
    const auto j = nlohmann::json::parse(read_bytes(dir_ / "paths" / "paths0.json"));
    EXPECT_EQ(j.at("paths").size(), 4u);
    ASSERT_EQ(run({"plan", "--graphs", p("graphs"), "--m", "999999", "--bruteforce", "-o", p("bf")}).code, 0);
    EXPECT_EQ(read_bytes(dir_ / "bf" / "paths0.json"), read_bytes(dir_ / "paths" / "paths0.json"));
}

TEST_F(CliTest, SelfcheckReportsAllTrials) {
    const auto r = run({"selfcheck", "--seed", "1"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("oracle: 100/100"), std::string::npos) << r.out;
}

TEST_F(CliTest, UsageErrors) {
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"plan", "--bogus"}).code, 1);
    EXPECT_EQ(run({"gen-model", "--layers", "2"}).code, 1);
    pipeline("", 1);
    EXPECT_EQ(run({"prune", "--graphs", p("graphs"), "--m", "2", "--target-retention", "0.5", "-o", p("x")}).code, 1);
    EXPECT_EQ(run({"prune", "--graphs", p("graphs"), "-o", p("x")}).code, 1);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, DataErrors) {
    EXPECT_EQ(run({"score", "--model", p("missing"), "--data", p("missing"), "-o", p("g")}).code, 2);
    ASSERT_EQ(run({"gen-data", "--dim", "3", "--samples", "2", "--tokens", "2", "--seed", "2", "-o", p("data")}).code, 0);
    EXPECT_EQ(run({"calibrate", "--data", p("data"), "--k", "5", "--seed", "1", "-o", p("cal.json")}).code, 2);
    std::ofstream(dir_ / "data" / "sample0.tnsr", std::ios::trunc) << "junk";
    const auto r = run({"calibrate", "--data", p("data"), "--k", "1", "--seed", "1", "-o", p("cal.json")});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, UnreachableTargetIsADataError) {
    pipeline("", 1);
    EXPECT_EQ(run({"prune", "--graphs", p("graphs"), "--target-retention", "0.9", "--m-max", "1", "-o", p("x")}).code, 2);
}

TEST_F(CliTest, RerunsAreByteIdentical) {
    pipeline("a_", 5);
    pipeline("b_", 5);
    EXPECT_EQ(read_bytes(dir_ / "a_graphs" / "graph0.json"), read_bytes(dir_ / "b_graphs" / "graph0.json"));
    EXPECT_EQ(read_bytes(dir_ / "a_paths" / "paths0.json"), read_bytes(dir_ / "b_paths" / "paths0.json"));
    for (const char* pre : {"a_", "b_"}) {
        ASSERT_EQ(run({"prune", "--graphs", p(std::string(pre) + "graphs"), "--target-retention", "0.25", "--jobs",
                       pre[0] == 'a' ? "1" : "3", "-o", p(std::string(pre) + "pruned")}).code, 0);
        ASSERT_EQ(run({"heatmap", "--paths", p(std::string(pre) + "paths"), "--experts", "8", "-o",
                       p(std::string(pre) + "heat.csv")}).code, 0);
    }
    EXPECT_EQ(read_bytes(dir_ / "a_pruned" / "mask.json"), read_bytes(dir_ / "b_pruned" / "mask.json"));
    EXPECT_EQ(read_bytes(dir_ / "a_pruned" / "report.json"), read_bytes(dir_ / "b_pruned" / "report.json"));
    EXPECT_EQ(read_bytes(dir_ / "a_heat.csv"), read_bytes(dir_ / "b_heat.csv"));
}

TEST_F(CliTest, HeatmapOutliers) {
    pipeline("", 3);
    ASSERT_EQ(run({"heatmap", "--paths", p("paths"), "--experts", "8", "--outliers", "0:7,5:6", "-o", p("h.csv")}).code, 0);
    const auto csv = read_bytes(dir_ / "h.csv");
    EXPECT_EQ(csv.rfind("layer,expert,count\n", 0), 0u);
    EXPECT_EQ(run({"heatmap", "--paths", p("paths"), "--experts", "8", "--outliers", "bad", "-o", p("h.csv")}).code, 1);
}

TEST_F(CliTest, CompareWritesReports) {
    const nlohmann::json cfg = {
        {"model", {{"num_layers", 3}, {"experts_per_layer", 4}, {"hidden_dim", 6}, {"top_k", 2}, {"nonlinearity", "tanh"}}},
        {"pool_samples", 8}, {"tokens_per_sample", 3}, {"eval_samples", 3}, {"k", 2}, {"random_trials", 3}};
    std::ofstream(dir_ / "cfg.json") << cfg.dump();
    const auto r = run({"compare", "--config", p("cfg.json"), "--model-seeds", "1,2", "-o", p("cmp")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = read_bytes(dir_ / "cmp" / "comparison.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    const auto manifest = PipelineManifest::from_json(nlohmann::json::parse(read_bytes(dir_ / "cmp" / "manifest.json")));
    EXPECT_EQ(manifest.stage, "compare");
    EXPECT_EQ(manifest.tool_version, kToolVersion);
}

TEST(ResolveJobs, FlagThenEnvironmentThenOne) {
    unsetenv("MOE_PATHFINDER_JOBS");
    EXPECT_EQ(resolve_jobs(0), 1u);
    setenv("MOE_PATHFINDER_JOBS", "3", 1);
    EXPECT_EQ(resolve_jobs(0), 3u);
    EXPECT_EQ(resolve_jobs(2), 2u);
    unsetenv("MOE_PATHFINDER_JOBS");
}

TEST(Manifest, RoundTripAndMissingInputs) {
    PipelineManifest m;
    m.stage = "score";
    m.inputs = {{"model", "/nonexistent/moepath/model"}};
    m.outputs = {{"graphs", "g"}};
    m.seeds = {{"kmeans", 5}};
    const auto back = PipelineManifest::from_json(nlohmann::json::parse(m.to_json().dump()));
    EXPECT_EQ(back.to_json(), m.to_json());
    try {
        m.check_inputs_exist();
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/moepath/model"), std::string::npos);
    }
}
