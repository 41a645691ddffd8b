#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "moepath/harness.hpp"
#include "moepath/rng.hpp"

using namespace moepath;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_experiment() {
    ExperimentConfig c;
    c.model = MoEConfig{3, 4, 8, 2, Nonlinearity::tanh, {}};
    c.model_seeds = {1, 2, 3};
    c.pool_samples = 12;
    c.tokens_per_sample = 4;
    c.eval_samples = 4;
    c.k = 3;
    c.random_trials = 5;
    c.target_retention = 0.5;
    return c;
}

}  // namespace

TEST(RandomMask, CountsPerLayer) {
    const MoEConfig cfg{6, 8, 4, 2, Nonlinearity::tanh, {}};
    for (double f : {0.01, 0.25, 0.3, 0.5, 1.0}) {
        const auto mask = random_mask(cfg, f, 11);
        const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(f * 8 - 1e-9)));
        for (std::size_t l = 0; l < 6; ++l) EXPECT_EQ(mask.retained_in_layer(l), want) << f;
    }
    EXPECT_EQ(random_mask(cfg, 0.5, 3).keep, random_mask(cfg, 0.5, 3).keep);
    EXPECT_NE(random_mask(cfg, 0.5, 3).keep, random_mask(cfg, 0.5, 4).keep);
}

TEST(RandomMask, RoughlyUniformOverExperts) {
    const MoEConfig cfg{2, 4, 4, 1, Nonlinearity::tanh, {}};
    std::vector<std::size_t> hits(4, 0);
    for (std::uint64_t s = 0; s < 4000; ++s) {
        const auto mask = random_mask(cfg, 0.25, s);
        for (std::size_t i = 0; i < 4; ++i) hits[i] += mask.keep[0][i];
    }
    for (auto h : hits) EXPECT_NEAR(static_cast<double>(h), 1000.0, 120.0);
}

TEST(Ablation, TransitionOffRanksByNodesOnly) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto g = random_graph(4, 5, rng);
        const auto top = top_m_paths_dp(ablate_graph(g, {true, false}), 1).paths.front().experts;
        for (std::size_t l = 0; l < 4; ++l) {
            const auto& e = g.layers[l].importance;
            EXPECT_EQ(top[l], static_cast<std::size_t>(std::max_element(e.begin(), e.end()) - e.begin()));
        }
    }
}

TEST(Ablation, ImportanceOffRanksByEdgesOnly) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto g = random_graph(3, 3, rng);
        const auto ps = top_m_paths_dp(ablate_graph(g, {false, true}), 27);
        std::vector<std::pair<double, std::vector<std::size_t>>> oracle;
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 3; ++b)
                for (std::size_t c = 0; c < 3; ++c)
                    oracle.push_back({g.transitions[0](a, b) * g.transitions[1](b, c), {a, b, c}});
        std::stable_sort(oracle.begin(), oracle.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
        for (std::size_t i = 0; i < 27; ++i) {
            EXPECT_NEAR(std::exp(ps.paths[i].log_weight), oracle[i].first, 1e-12 * oracle[i].first);
        }
        EXPECT_EQ(ps.paths.front().experts, oracle.front().second);
    }
    EXPECT_THROW(ablate_graph(random_graph(2, 2, rng), {false, false}), ArgumentError);
}

TEST(Evaluate, FullMaskHasZeroError) {
    const auto model = gen_model(MoEConfig{3, 4, 6, 2, Nonlinearity::tanh, {}}, 4);
    const auto data = gen_data(6, 5, 3, 5);
    const auto r = evaluate_mask(model, PruneMask::all(3, 4), data);
    EXPECT_EQ(r.final_error, 0.0);
    EXPECT_EQ(r.retention_fraction, 1.0);
    for (double e : r.layer_errors) EXPECT_EQ(e, 0.0);
}

TEST(Evaluate, MatchesDirectComputation) {
    const auto model = gen_model(MoEConfig{3, 4, 6, 2, Nonlinearity::tanh, {}}, 6);
    const auto data = gen_data(6, 3, 5, 7);
    const auto mask = random_mask(model.config, 0.5, 8);
    double want = 0.0;
    for (const auto& x : data) {
        const auto a = model_forward(model, x).hidden_states.back();
        const auto b = model_forward(model, x, &mask).hidden_states.back();
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
        want += s / 5.0;
    }
    EXPECT_NEAR(evaluate_mask(model, mask, data, 2).final_error, want / 3.0, 1e-14);
}

TEST(Planted, RouterGivesPlantedExpertTenLogits) {
    auto model = gen_model(MoEConfig{3, 4, 6, 1, Nonlinearity::tanh, {}}, 9);
    const auto planted = plant_experts(model, 10);
    auto data = gen_data(6, 2, 3, 11);
    add_bias_coordinate(data);
    const auto trace = model_forward(model, data[0]);
    for (std::size_t l = 0; l < 3; ++l) {
        for (std::size_t t = 0; t < 3; ++t) {
            EXPECT_NEAR(trace.hidden_states[l](t, 0), trace.hidden_states[l](0, 0), 1e-15);
            const double col0 = trace.hidden_states[l](t, 0) * model.layers[l].router(planted[l], 0);
            EXPECT_NEAR(col0, 10.0, 1e-12);
            EXPECT_EQ(trace.selected_experts[l][t].front(), planted[l]);
        }
    }
}

TEST(Planted, PathfinderMaskContainsPlantedExperts) {
    auto c = small_experiment();
    c.planted = true;
    c.target_retention = 0.25;
    const auto report = run_comparison(c);
    for (const auto& s : report.seeds) {
        ASSERT_EQ(s.planted.size(), 3u);
        for (std::size_t l = 0; l < 3; ++l) EXPECT_TRUE(s.mask.keep[l][s.planted[l]]);
        EXPECT_TRUE(s.pathfinder_recovered);
    }
}

TEST(Comparison, ShapeAndReproducibility) {
    const auto c = small_experiment();
    const auto a = run_comparison(c);
    ASSERT_EQ(a.seeds.size(), 3u);
    for (const auto& s : a.seeds) {
        EXPECT_EQ(s.random_errors.size(), 5u);
        EXPECT_EQ(s.calibration_ids.size(), 3u);
        EXPECT_EQ(s.win, s.pathfinder.final_error <= s.random_median);
        EXPECT_EQ(s.mask.retained_total(), target_expert_count(0.5, 3, 4));
    }
    const auto csv = comparison_csv(a);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "model_seed,pathfinder_error,random_median,random_min,random_max,retention,m_used,win");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    auto parallel = c;
    parallel.jobs = 3;
    EXPECT_EQ(comparison_csv(run_comparison(parallel)), csv);
}

TEST(Comparison, ConfigJsonRoundTrip) {
    auto c = small_experiment();
    c.m = 7;
    c.ablation.use_transition = false;
    const auto back = experiment_from_json(nlohmann::json::parse(to_json(c).dump()));
    EXPECT_EQ(to_json(back), to_json(c));
    c.k = 0;
    EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(Median, OddAndEven) {
    EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}

TEST(Heatmap, CsvRowsAndRoundTrip) {
    const CountMatrix counts{{3, 0}, {1, 2}};
    EXPECT_EQ(heatmap_csv(counts), "layer,expert,count\n0,0,3\n0,1,0\n1,0,1\n1,1,2\n");
    const auto path = fs::temp_directory_path() / "moepath_heatmap.csv";
    export_heatmap(counts, path);
    EXPECT_EQ(read_heatmap(path), counts);
}

TEST(Heatmap, RowSumsFromPlannedPaths) {
    Rng rng(12);
    std::vector<SampleGraph> graphs;
    for (int n = 0; n < 4; ++n) graphs.push_back(random_graph(3, 5, rng));
    const auto counts = selection_frequency(plan_all(graphs, 20), 5);
    for (const auto& row : counts) EXPECT_EQ(std::accumulate(row.begin(), row.end(), std::size_t{0}), 80u);
}

TEST(FormatDouble, ShortestRoundTrip) {
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(2.0), "2");
    const double x = 0x1.5dd2c48cda7bcp-2;
    EXPECT_EQ(std::stod(format_double(x)), x);
}

TEST(DeriveSeed, DistinctStreams) {
    EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    EXPECT_NE(derive_seed(1, 2, 0), derive_seed(1, 2, 1));
    EXPECT_NE(derive_seed(1, 2, 0), derive_seed(1, 3, 0));
}
