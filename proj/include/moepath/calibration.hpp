#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "moepath/moe_model.hpp"

namespace moepath {

using FeatureVector = std::vector<double>;

/// Mean of the sample's token rows.
FeatureVector featurize(const SampleBatch& sample);

struct KMeansResult {
    std::vector<FeatureVector> centroids;
    std::vector<std::size_t> assignments;
    /// Total within-cluster squared distance of the final clustering.
    double distortion = 0.0;
    /// Distortion after each assignment step, starting with the seeding.
    std::vector<double> distortion_history;
    std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding.
///
/// Seeding: the first centroid is point `rng.below(n)`; each next centroid is
/// drawn with probability proportional to the squared distance to the nearest
/// chosen centroid (u = rng.uniform() * total, first index whose running sum
/// exceeds u). If every remaining point coincides with a centroid, the lowest
/// unchosen index is taken.
///
/// Assignment ties go to the lower centroid index. A cluster left empty by an
/// update is refilled with the point farthest from its own centroid (ties to
/// the lower sample index) taken from a cluster with at least two members.
/// Stops when assignments are unchanged or after max_iters updates.
KMeansResult kmeans(const std::vector<FeatureVector>& features, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters = 100);

struct CalibrationSet {
    std::vector<std::size_t> sample_ids;  // one per cluster, in cluster order
    std::size_t k = 0;
    std::uint64_t seed = 0;
    double distortion = 0.0;
};

/// Per cluster, the member nearest its centroid; ties to the lower sample index.
CalibrationSet select_representatives(const std::vector<FeatureVector>& features,
                                      const KMeansResult& clustering);

/// featurize -> kmeans -> select_representatives.
CalibrationSet calibrate(const std::vector<SampleBatch>& samples, std::size_t k, std::uint64_t seed,
                         std::size_t max_iters = 100);

nlohmann::json to_json(const CalibrationSet& c);
CalibrationSet calibration_from_json(const nlohmann::json& j);

}  // namespace moepath
