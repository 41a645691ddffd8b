#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "moepath/calibration.hpp"
#include "moepath/error.hpp"
#include "moepath/rng.hpp"

using namespace moepath;

namespace {

double brute_distortion(const std::vector<FeatureVector>& pts, const KMeansResult& r) {
    double total = 0.0;
    for (std::size_t n = 0; n < pts.size(); ++n) {
        const auto& c = r.centroids[r.assignments[n]];
        for (std::size_t j = 0; j < c.size(); ++j) total += (pts[n][j] - c[j]) * (pts[n][j] - c[j]);
    }
    return total;
}

std::vector<FeatureVector> blobs(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<FeatureVector> pts;
    for (int n = 0; n < 20; ++n) {
        const double c = n % 2 == 0 ? 10.0 : -10.0;
        pts.push_back({c + rng.uniform(-0.1, 0.1), c + rng.uniform(-0.1, 0.1)});
    }
    return pts;
}

}  // namespace

TEST(Featurize, SingleTokenIsItself) {
    EXPECT_EQ(featurize(SampleBatch{Matrix{{0.5, -2.0, 3.0}}}), (FeatureVector{0.5, -2.0, 3.0}));
}

TEST(Featurize, MeanOfTokens) {
    EXPECT_EQ(featurize(SampleBatch{Matrix{{1, 1}, {3, 3}}}), (FeatureVector{2, 2}));
}

TEST(Featurize, TokenPermutationInvariant) {
    const auto a = featurize(SampleBatch{Matrix{{1, 2}, {3, 5}, {-4, 0.5}}});
    const auto b = featurize(SampleBatch{Matrix{{-4, 0.5}, {1, 2}, {3, 5}}});
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(a[j], b[j], 1e-15);
}

TEST(KMeans, SingleClusterIsGlobalMean) {
    const std::vector<FeatureVector> pts{{0, 0}, {2, 0}, {4, 6}};
    const auto r = kmeans(pts, 1, 3);
    EXPECT_NEAR(r.centroids[0][0], 2.0, 1e-15);
    EXPECT_NEAR(r.centroids[0][1], 2.0, 1e-15);
    EXPECT_NEAR(r.distortion, 4 + 4 + 4 + 4 + 16 + 0, 1e-12);
}

TEST(KMeans, OneClusterPerPointHasZeroDistortion) {
    const std::vector<FeatureVector> pts{{0, 0}, {1, 0}, {5, 5}, {-3, 2}};
    const auto r = kmeans(pts, 4, 11);
    EXPECT_EQ(r.distortion, 0.0);
    EXPECT_EQ(std::set<std::size_t>(r.assignments.begin(), r.assignments.end()).size(), 4u);
}

TEST(KMeans, SeparatesTwoBlobs) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto pts = blobs(seed + 50);
        const auto r = kmeans(pts, 2, seed);
        for (std::size_t n = 2; n < pts.size(); ++n) EXPECT_EQ(r.assignments[n], r.assignments[n % 2]);
        EXPECT_NE(r.assignments[0], r.assignments[1]);
        EXPECT_NEAR(r.distortion, brute_distortion(pts, r), 1e-9);
    }
}

TEST(KMeans, DistortionHistoryNeverIncreases) {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<FeatureVector> pts(40, FeatureVector(3));
        for (auto& p : pts)
            for (double& v : p) v = rng.uniform(-1, 1);
        const auto r = kmeans(pts, 1 + rng.below(8), rng.next());
        ASSERT_FALSE(r.distortion_history.empty());
        for (std::size_t i = 1; i < r.distortion_history.size(); ++i) {
            EXPECT_LE(r.distortion_history[i], r.distortion_history[i - 1] * (1 + 1e-12));
        }
        EXPECT_NEAR(r.distortion, brute_distortion(pts, r), 1e-9);
    }
}

TEST(KMeans, MoreClustersThanPointsIsAnError) {
    EXPECT_THROW(kmeans({{0.0}, {1.0}}, 3, 0), ArgumentError);
    EXPECT_THROW(kmeans({{0.0}}, 0, 0), ArgumentError);
}

TEST(KMeans, DuplicatePointsDoNotStall) {
    const std::vector<FeatureVector> pts{{1, 1}, {1, 1}, {1, 1}, {2, 2}};
    const auto r = kmeans(pts, 3, 5);
    EXPECT_EQ(r.centroids.size(), 3u);
    EXPECT_EQ(r.distortion, 0.0);
    EXPECT_LE(r.iterations, 100u);
}

TEST(Representatives, NearestToCentroid) {
    const std::vector<FeatureVector> pts{{0.0}, {1.0}, {10.0}};
    const auto r = kmeans(pts, 1, 0);
    const auto cal = select_representatives(pts, r);
    EXPECT_EQ(cal.sample_ids, (std::vector<std::size_t>{1}));
}

TEST(Representatives, OnePerClusterUniqueAndMembers) {
    Rng rng(3);
    std::vector<SampleBatch> samples;
    for (int n = 0; n < 30; ++n) {
        Matrix t(4, 3);
        for (double& v : t.data()) v = rng.uniform(-1, 1);
        samples.push_back({t});
    }
    for (std::size_t k : {1u, 5u, 10u, 30u}) {
        const auto cal = calibrate(samples, k, 9);
        ASSERT_EQ(cal.sample_ids.size(), k);
        EXPECT_EQ(std::set<std::size_t>(cal.sample_ids.begin(), cal.sample_ids.end()).size(), k);
        for (auto id : cal.sample_ids) EXPECT_LT(id, samples.size());
    }
    const auto a = calibrate(samples, 6, 123);
    const auto b = calibrate(samples, 6, 123);
    EXPECT_EQ(a.sample_ids, b.sample_ids);
    EXPECT_EQ(a.distortion, b.distortion);
}

TEST(CalibrationSet, JsonRoundTrip) {
    const CalibrationSet c{{4, 1, 7}, 3, 99, 1.25};
    const auto j = to_json(c);
    EXPECT_EQ(j.at("K"), 3);
    const auto back = calibration_from_json(j);
    EXPECT_EQ(back.sample_ids, c.sample_ids);
    EXPECT_EQ(back.k, 3u);
    EXPECT_EQ(back.seed, 99u);
    EXPECT_EQ(back.distortion, 1.25);
}
