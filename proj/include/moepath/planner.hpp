#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "moepath/scoring.hpp"

namespace moepath {

/// Expert indices chosen at layers 0..l, with the accumulated log-weight.
struct PrefixPath {
    std::vector<std::size_t> experts;
    double log_weight = 0.0;

    friend bool operator==(const PrefixPath&, const PrefixPath&) = default;
};

/// Total order used everywhere paths are ranked: higher log-weight first,
/// then lexicographically smaller expert sequence first.
bool ranks_before(const PrefixPath& a, const PrefixPath& b);

struct PathSet {
    std::size_t m = 0;
    std::vector<PrefixPath> paths;  // sorted by ranks_before

    friend bool operator==(const PathSet&, const PathSet&) = default;
};

/// Sum of log node weights along the path plus log edge weights between
/// consecutive layers, accumulated in layer order (node 0, edge 0, node 1, ...).
double path_log_weight(const SampleGraph& graph, std::span<const std::size_t> experts);

/// Per-layer, per-node queues retained by the DP, for inspection.
struct DpQueues {
    std::vector<std::vector<std::vector<PrefixPath>>> layers;  // [layer][node] -> queue
};

/// Layer-by-layer DP keeping the m best prefixes ending at every node;
/// the final result is the global top min(m, N_e^L) over all last-layer queues.
PathSet top_m_paths_dp(const SampleGraph& graph, std::size_t m, DpQueues* queues = nullptr);

/// top_m_paths_dp for every graph, `jobs` at a time.
std::vector<PathSet> plan_all(const std::vector<SampleGraph>& graphs, std::size_t m,
                              std::size_t jobs = 1);

inline constexpr std::uint64_t kBruteForceCap = 1'000'000;

/// Exhaustive enumeration of all N_e^L paths. Throws ArgumentError above `cap`.
PathSet top_m_paths_bruteforce(const SampleGraph& graph, std::size_t m,
                               std::uint64_t cap = kBruteForceCap);

class Rng;

/// Synthetic graph: a ~ U(0, 2), r = softmax of U(-2, 2) logits,
/// e ~ U(0.01, 1), transitions a (x) r. Shapes only; not tied to any model.
SampleGraph random_graph(std::size_t layers, std::size_t experts, Rng& rng);

struct OracleSummary {
    std::size_t passed = 0;
    std::size_t trials = 0;
    std::string first_failure;
};

/// DP vs. brute force on `trials` random graphs: L in [2, 5], N_e in [2, 4],
/// m drawn from {1, 3, 10, N_e^L}. A trial passes when expert sequences match
/// exactly and log-weights agree within 1e-9.
OracleSummary run_oracle_suite(std::size_t trials, std::uint64_t seed);

nlohmann::json to_json(const PathSet& ps);
PathSet pathset_from_json(const nlohmann::json& j);

}  // namespace moepath
