#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "moepath/moe_model.hpp"
#include "moepath/pruner.hpp"
#include "moepath/scoring.hpp"

namespace moepath {

struct AblationFlags {
    bool use_importance = true;
    bool use_transition = true;
};

/// Neutralizes a disabled signal by zeroing its log weights (weight 1).
SampleGraph ablate_graph(const SampleGraph& graph, AblationFlags flags);

/// Per layer, ceil(fraction * N_e) experts drawn uniformly without replacement
/// (partial Fisher-Yates on one SplitMix64 stream), at least one.
PruneMask random_mask(const MoEConfig& config, double retention_fraction, std::uint64_t seed);

struct EvalResult {
    /// Mean over samples of ||H_full^(L) - H_pruned^(L)||_F^2 / N_x.
    double final_error = 0.0;
    /// Same quantity for every layer output H^(1)..H^(L).
    std::vector<double> layer_errors;
    double retention_fraction = 0.0;
};

EvalResult evaluate_mask(const MoEModel& model, const PruneMask& mask,
                         const std::vector<SampleBatch>& samples, std::size_t jobs = 1);

/// Deterministic child seed for (base, a, b).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Gives one expert per layer 10x the weight norm and a +10 router logit.
///
/// Requires inputs whose coordinate 0 is 1. Every expert copies coordinate 0
/// through unchanged, so it stays a known constant c_l at every layer; the
/// planted expert's router column 0 gets 10 / c_l (exactly +10 logits) and
/// its remaining rows are scaled by 10. Returns the planted index per layer.
std::vector<std::size_t> plant_experts(MoEModel& model, std::uint64_t seed);

/// Sets coordinate 0 of every token to 1 (the carrier plant_experts relies on).
void add_bias_coordinate(std::vector<SampleBatch>& samples);

struct ExperimentConfig {
    MoEConfig model{6, 8, 32, 2, Nonlinearity::tanh, {}};
    std::vector<std::uint64_t> model_seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::uint64_t data_seed = 1000;
    std::size_t pool_samples = 64;
    std::size_t tokens_per_sample = 16;
    std::size_t eval_samples = 16;
    std::size_t k = 8;
    std::size_t kmeans_iters = 100;
    /// Fixed m; when unset the target retention search is used.
    std::optional<std::size_t> m;
    double target_retention = 0.5;
    std::size_t m_max = kDefaultMaxM;
    AblationFlags ablation;
    std::size_t random_trials = 20;
    std::uint64_t random_seed = 2000;
    bool planted = false;
    std::size_t jobs = 1;

    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

struct SeedResult {
    std::uint64_t model_seed = 0;
    EvalResult pathfinder;
    std::vector<double> random_errors;
    double random_median = 0.0;
    bool win = false;  // pathfinder error <= random median
    std::size_t m_used = 0;
    std::vector<std::size_t> calibration_ids;
    PruneMask mask;
    /// Planted runs only.
    std::vector<std::size_t> planted;
    bool pathfinder_recovered = false;
    std::size_t random_recovered = 0;
};

struct ComparisonReport {
    ExperimentConfig config;
    std::vector<SeedResult> seeds;
    std::size_t wins = 0;
};

double median(std::vector<double> v);

/// Builds model and data per seed, calibrates, scores, plans, prunes, then
/// evaluates the pathfinder mask against random masks of equal retention.
ComparisonReport run_comparison(const ExperimentConfig& config);

/// Header `model_seed,pathfinder_error,random_median,random_min,random_max,retention,m_used,win`.
std::string comparison_csv(const ComparisonReport& report);
nlohmann::json to_json(const ComparisonReport& report);

struct KSweepPoint {
    std::size_t k = 0;
    double mean_pathfinder_error = 0.0;
    double mean_retention = 0.0;
    std::size_t wins = 0;
};

/// run_comparison once per K.
std::vector<KSweepPoint> run_k_sweep(const ExperimentConfig& config, const std::vector<std::size_t>& ks);

/// CSV with header `layer,expert,count`, layer-major.
std::string heatmap_csv(const CountMatrix& counts);
void export_heatmap(const CountMatrix& counts, const std::filesystem::path& path);
CountMatrix read_heatmap(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double.
std::string format_double(double x);

}  // namespace moepath
