#include "moepath/calibration.hpp"

#include <algorithm>
#include <limits>

#include "moepath/error.hpp"
#include "moepath/rng.hpp"

namespace moepath {
namespace {

struct Nearest {
    std::size_t index;
    double dist;
};

Nearest nearest_centroid(const FeatureVector& x, const std::vector<FeatureVector>& centroids) {
    Nearest best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(x, centroids[c]);
        if (d < best.dist) {
            best = {c, d};
        }
    }
    return best;
}

double total_distortion(const std::vector<FeatureVector>& features,
                        const std::vector<FeatureVector>& centroids,
                        const std::vector<std::size_t>& assignments) {
    double total = 0.0;
    for (std::size_t p = 0; p < features.size(); ++p) {
        total += squared_distance(features[p], centroids[assignments[p]]);
    }
    return total;
}

std::vector<FeatureVector> seed_plus_plus(const std::vector<FeatureVector>& features, std::size_t k,
                                          Rng& rng) {
    const std::size_t n = features.size();
    std::vector<bool> chosen(n, false);
    std::vector<FeatureVector> centroids;
    const std::size_t first = static_cast<std::size_t>(rng.below(n));
    chosen[first] = true;
    centroids.push_back(features[first]);

    std::vector<double> d2(n);
    for (std::size_t p = 0; p < n; ++p) {
        d2[p] = squared_distance(features[p], centroids.front());
    }
    while (centroids.size() < k) {
        double total = 0.0;
        for (double v : d2) total += v;

        std::size_t pick = n;
        if (total > 0.0) {
            const double u = rng.uniform() * total;
            double running = 0.0;
            for (std::size_t p = 0; p < n; ++p) {
                running += d2[p];
                if (running > u && d2[p] > 0.0) {
                    pick = p;
                    break;
                }
            }
            if (pick == n) {
                // Rounding left u at the very top of the range; take the last positive weight.
                for (std::size_t p = n; p-- > 0;) {
                    if (d2[p] > 0.0) {
                        pick = p;
                        break;
                    }
                }
            }
        } else {
            for (std::size_t p = 0; p < n; ++p) {
                if (!chosen[p]) {
                    pick = p;
                    break;
                }
            }
        }
        chosen[pick] = true;
        centroids.push_back(features[pick]);
        for (std::size_t p = 0; p < n; ++p) {
            d2[p] = std::min(d2[p], squared_distance(features[p], centroids.back()));
        }
    }
    return centroids;
}

}  // namespace

FeatureVector featurize(const SampleBatch& sample) {
    const auto& t = sample.tokens;
    if (t.rows() == 0) {
        throw ArgumentError("featurize: sample has no tokens");
    }
    FeatureVector mean(t.cols(), 0.0);
    for (std::size_t k = 0; k < t.rows(); ++k) {
        const auto row = t.row(k);
        for (std::size_t c = 0; c < row.size(); ++c) mean[c] += row[c];
    }
    for (double& v : mean) v /= static_cast<double>(t.rows());
    return mean;
}

KMeansResult kmeans(const std::vector<FeatureVector>& features, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters) {
    if (features.empty()) {
        throw ArgumentError("kmeans: no points");
    }
    if (k < 1) {
        throw ArgumentError("kmeans: K must be >= 1");
    }
    if (k > features.size()) {
        throw ArgumentError("kmeans: K=" + std::to_string(k) + " exceeds the number of points (" +
                            std::to_string(features.size()) + ")");
    }
    const std::size_t n = features.size();
    const std::size_t dim = features.front().size();
    Rng rng(seed);

    KMeansResult r;
    r.centroids = seed_plus_plus(features, k, rng);
    r.assignments.resize(n);
    for (std::size_t p = 0; p < n; ++p) {
        r.assignments[p] = nearest_centroid(features[p], r.centroids).index;
    }
    r.distortion_history.push_back(total_distortion(features, r.centroids, r.assignments));

    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        std::vector<std::size_t> counts(k, 0);
        for (auto a : r.assignments) ++counts[a];

        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = n;
            double far_dist = -1.0;
            for (std::size_t p = 0; p < n; ++p) {
                if (counts[r.assignments[p]] < 2) continue;
                const double d = squared_distance(features[p], r.centroids[r.assignments[p]]);
                if (d > far_dist) {
                    far = p;
                    far_dist = d;
                }
            }
            // k <= n guarantees a donor cluster with two or more members.
            --counts[r.assignments[far]];
            r.assignments[far] = c;
            counts[c] = 1;
        }

        std::vector<FeatureVector> sums(k, FeatureVector(dim, 0.0));
        for (std::size_t p = 0; p < n; ++p) {
            auto& s = sums[r.assignments[p]];
            for (std::size_t j = 0; j < dim; ++j) s[j] += features[p][j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t j = 0; j < dim; ++j) {
                r.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
            }
        }

        bool changed = false;
        for (std::size_t p = 0; p < n; ++p) {
            const auto a = nearest_centroid(features[p], r.centroids).index;
            if (a != r.assignments[p]) {
                r.assignments[p] = a;
                changed = true;
            }
        }
        r.iterations = iter + 1;
        r.distortion_history.push_back(total_distortion(features, r.centroids, r.assignments));
        if (!changed) break;
    }
    r.distortion = r.distortion_history.back();
    return r;
}

CalibrationSet select_representatives(const std::vector<FeatureVector>& features,
                                      const KMeansResult& clustering) {
    const std::size_t k = clustering.centroids.size();
    std::vector<std::size_t> best(k, features.size());
    std::vector<double> best_dist(k, std::numeric_limits<double>::infinity());
    for (std::size_t p = 0; p < features.size(); ++p) {
        const auto c = clustering.assignments[p];
        const double d = squared_distance(features[p], clustering.centroids[c]);
        if (d < best_dist[c]) {
            best[c] = p;
            best_dist[c] = d;
        }
    }
    CalibrationSet out;
    out.k = k;
    out.distortion = clustering.distortion;
    for (std::size_t c = 0; c < k; ++c) {
        if (best[c] == features.size()) {
            throw InvariantError("cluster " + std::to_string(c) + " has no members");
        }
        out.sample_ids.push_back(best[c]);
    }
    return out;
}

CalibrationSet calibrate(const std::vector<SampleBatch>& samples, std::size_t k, std::uint64_t seed,
                         std::size_t max_iters) {
    std::vector<FeatureVector> features;
    features.reserve(samples.size());
    for (const auto& s : samples) features.push_back(featurize(s));
    auto clustering = kmeans(features, k, seed, max_iters);
    auto out = select_representatives(features, clustering);
    out.seed = seed;
    return out;
}

nlohmann::json to_json(const CalibrationSet& c) {
    return {{"K", c.k}, {"seed", c.seed}, {"sample_ids", c.sample_ids}, {"distortion", c.distortion}};
}

CalibrationSet calibration_from_json(const nlohmann::json& j) {
    try {
        CalibrationSet c;
        c.k = j.at("K").get<std::size_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.sample_ids = j.at("sample_ids").get<std::vector<std::size_t>>();
        c.distortion = j.at("distortion").get<double>();
        if (c.sample_ids.size() != c.k) {
            throw FormatError("calibration lists " + std::to_string(c.sample_ids.size()) +
                              " ids for K=" + std::to_string(c.k));
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("calibration JSON: ") + e.what());
    }
}

}  // namespace moepath
