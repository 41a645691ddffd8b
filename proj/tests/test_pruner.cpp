#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <tuple>

#include "moepath/pruner.hpp"
#include "moepath/rng.hpp"

using namespace moepath;

namespace {

std::vector<SampleGraph> random_graphs(std::size_t n, std::size_t L, std::size_t ne, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SampleGraph> gs;
    for (std::size_t i = 0; i < n; ++i) gs.push_back(random_graph(L, ne, rng));
    return gs;
}

SampleGraph uniform_graph(std::size_t L, std::size_t ne) {
    Rng rng(0);
    auto g = random_graph(L, ne, rng);
    for (auto& s : g.layers) std::fill(s.importance.begin(), s.importance.end(), 0.5);
    for (auto& t : g.transitions) std::fill(t.data().begin(), t.data().end(), 0.5);
    g.refresh_logs();
    return g;
}

// Trim rule recomputed from the untrimmed union and its path counts.
PruneMask trim_oracle(const std::vector<PathSet>& pathsets, std::size_t L, std::size_t ne, std::size_t target) {
    std::vector<ExpertSets> sets;
    for (const auto& ps : pathsets) sets.push_back(experts_from_paths(ps));
    auto mask = union_masks(sets, ne);
    const auto counts = selection_frequency(pathsets, ne);
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> order;  // count, layer, expert
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t i = 0; i < ne; ++i)
            if (mask.keep[l][i]) order.emplace_back(counts[l][i], l, i);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) > std::get<1>(b);
        return std::get<2>(a) > std::get<2>(b);
    });
    std::size_t total = mask.retained_total();
    for (const auto& [c, l, i] : order) {
        if (total <= target) break;
        if (mask.retained_in_layer(l) == 1) continue;
        mask.keep[l][i] = false;
        --total;
    }
    return mask;
}

}  // namespace

TEST(ExpertsFromPaths, CollectsPerLayerSets) {
    PathSet ps{2, {{{0, 2, 1}, -1.0}, {{0, 1, 1}, -2.0}}};
    EXPECT_EQ(experts_from_paths(ps), (ExpertSets{{0}, {1, 2}, {1}}));
}

TEST(UnionMasks, Example) {
    const std::vector<ExpertSets> sets{{{0}, {1}}, {{2}, {1}}};
    const auto mask = union_masks(sets, 3);
    EXPECT_EQ(mask.keep, (std::vector<std::vector<bool>>{{true, false, true}, {false, true, false}}));
    EXPECT_EQ(mask.retained_total(), 3u);
    const auto report = make_report(mask, 1, 2);
    EXPECT_EQ(report.retained_per_layer, (std::vector<std::size_t>{2, 1}));
    EXPECT_DOUBLE_EQ(report.retention_fraction, 0.5);
}

TEST(PruneWithM, SingleSampleSinglePathKeepsOnePerLayer) {
    const auto graphs = random_graphs(1, 6, 8, 1);
    const auto r = prune_with_m(graphs, 1);
    EXPECT_EQ(r.report.retained_total, 6u);
    for (std::size_t l = 0; l < 6; ++l) EXPECT_EQ(r.mask.retained_in_layer(l), 1u);
    EXPECT_DOUBLE_EQ(r.report.retention_fraction, 6.0 / 48.0);
}

TEST(PruneWithM, RetentionMonotoneInM) {
    const auto graphs = random_graphs(4, 4, 5, 2);
    double prev = 0.0;
    for (std::size_t m = 1; m <= 64; m *= 2) {
        const double f = prune_with_m(graphs, m).report.retention_fraction;
        EXPECT_GE(f, prev);
        prev = f;
    }
}

TEST(TargetCount, CeilingWithSlack) {
    EXPECT_EQ(target_expert_count(0.5, 6, 8), 24u);
    EXPECT_EQ(target_expert_count(0.3, 5, 8), 12u);
    EXPECT_EQ(target_expert_count(0.01, 6, 8), 6u);
    EXPECT_EQ(target_expert_count(1.0, 6, 8), 48u);
}

TEST(TargetSearch, FullRetentionKeepsEverything) {
    const auto r = target_sparsity_search(random_graphs(2, 3, 4, 3), 1.0);
    EXPECT_EQ(r.report.retained_total, 12u);
}

TEST(TargetSearch, ExactCountMinimalMAndTrimOracle) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto graphs = random_graphs(5, 4, 6, seed);
        for (double target : {0.25, 0.5, 0.7}) {
            const auto r = target_sparsity_search(graphs, target);
            const std::size_t want = target_expert_count(target, 4, 6);
            EXPECT_EQ(r.mask.retained_total(), want);
            for (std::size_t l = 0; l < 4; ++l) EXPECT_GE(r.mask.retained_in_layer(l), 1u);
            ASSERT_TRUE(r.report.target_retention.has_value());
            if (r.report.m_used > 1) {
                EXPECT_LT(prune_with_m(graphs, r.report.m_used - 1).mask.retained_total(), want);
            }
            EXPECT_GE(prune_with_m(graphs, r.report.m_used).mask.retained_total(), want);
            EXPECT_EQ(r.mask.keep, trim_oracle(r.pathsets, 4, 6, want).keep) << "seed " << seed;
        }
    }
}

TEST(TargetSearch, UnreachableTarget) {
    // With one sample and m capped at 1, only one expert per layer survives.
    const auto graphs = random_graphs(1, 2, 4, 5);
    try {
        target_sparsity_search(graphs, 1.0, 1);
        FAIL();
    } catch (const TargetUnreachableError& e) {
        EXPECT_LT(e.achievable(), 1.0);
    }
}

TEST(ApplyMask, AllTrueIsIdentity) {
    const auto model = gen_model(MoEConfig{3, 4, 5, 2, Nonlinearity::tanh, {}}, 4);
    const auto pruned = apply_mask(model, PruneMask::all(3, 4));
    EXPECT_EQ(pruned.model.layers, model.layers);
    const auto x = gen_data(5, 1, 3, 1).front();
    EXPECT_EQ(model_forward(pruned.model, x).hidden_states, model_forward(model, x).hidden_states);
}

TEST(ApplyMask, KeepsSelectedExpertAndRouterRow) {
    const auto model = gen_model(MoEConfig{2, 3, 4, 2, Nonlinearity::tanh, {}}, 5);
    auto mask = PruneMask::all(2, 3);
    mask.keep[0] = {false, true, false};
    const auto pruned = apply_mask(model, mask);
    ASSERT_EQ(pruned.model.layers[0].experts.size(), 1u);
    EXPECT_EQ(pruned.model.layers[0].experts[0], model.layers[0].experts[1]);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(pruned.model.layers[0].router(0, j), model.layers[0].router(1, j));
    EXPECT_EQ(pruned.model.config.layer_experts, (std::vector<std::size_t>{1, 3}));
    EXPECT_EQ(pruned.remap.new_to_old[0], (std::vector<std::size_t>{1}));
    EXPECT_FALSE(pruned.remap.old_to_new[0][0].has_value());
    EXPECT_EQ(pruned.remap.old_to_new[0][1], std::optional<std::size_t>{0});
}

TEST(ApplyMask, CompactedModelMatchesMaskedForward) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto model = gen_model(MoEConfig{4, 6, 5, 2, Nonlinearity::tanh, {}}, rng.next());
        auto mask = PruneMask::all(4, 6, false);
        for (auto& layer : mask.keep) {
            layer[rng.below(6)] = true;
            for (std::size_t i = 0; i < 6; ++i) layer[i] = layer[i] || rng.uniform() < 0.5;
        }
        const auto pruned = apply_mask(model, mask);
        const auto x = gen_data(5, 1, 4, rng.next()).front();
        const auto a = model_forward(pruned.model, x).hidden_states.back();
        const auto b = model_forward(model, x, &mask).hidden_states.back();
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
    }
}

TEST(ApplyMask, EmptyLayerIsAnError) {
    const auto model = gen_model(MoEConfig{2, 2, 3, 1, Nonlinearity::tanh, {}}, 1);
    auto mask = PruneMask::all(2, 2);
    mask.keep[1] = {false, false};
    EXPECT_THROW(apply_mask(model, mask), ArgumentError);
}

TEST(SelectionFrequency, SinglePathCountsOne) {
    const std::vector<PathSet> ps{{1, {{{2, 0, 1}, -1.0}}}};
    EXPECT_EQ(selection_frequency(ps, 3), (CountMatrix{{0, 0, 1}, {1, 0, 0}, {0, 1, 0}}));
}

TEST(SelectionFrequency, RowSumsEqualPathCount) {
    const auto graphs = random_graphs(10, 5, 4, 7);
    const auto ps = plan_all(graphs, 100);
    const auto counts = selection_frequency(ps, 4);
    for (const auto& row : counts) {
        std::size_t s = 0;
        for (auto c : row) s += c;
        EXPECT_EQ(s, 1000u);
    }
}

TEST(SelectionFrequency, UniformGraphAllPaths) {
    const std::vector<PathSet> ps{top_m_paths_dp(uniform_graph(3, 2), 8)};
    EXPECT_EQ(selection_frequency(ps, 2), (CountMatrix{{4, 4}, {4, 4}, {4, 4}}));
}

TEST(SelectionFrequency, OutliersTakeTheGlobalMaximum) {
    const std::vector<PathSet> ps{{2, {{{0, 0}, -1.0}, {{0, 1}, -2.0}}}};
    const std::set<ExpertId> outliers{{1, 2}};
    EXPECT_EQ(selection_frequency(ps, 3, &outliers), (CountMatrix{{2, 0, 0}, {1, 1, 2}}));
}

TEST(MaskJson, RoundTripAndShape) {
    PruneMask mask{{{true, false}, {false, true}}};
    const auto j = to_json(mask);
    EXPECT_EQ(j.at("L"), 2);
    EXPECT_EQ(j.at("Ne"), 2);
    EXPECT_EQ(j.at("keep"), nlohmann::json::parse("[[1,0],[0,1]]"));
    EXPECT_EQ(mask_from_json(j).keep, mask.keep);
}
