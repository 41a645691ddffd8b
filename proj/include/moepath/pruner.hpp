#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "moepath/error.hpp"
#include "moepath/moe_model.hpp"
#include "moepath/planner.hpp"

namespace moepath {

/// Retained expert indices per layer, ascending.
using ExpertSets = std::vector<std::vector<std::size_t>>;

/// (layer, expert) pair.
using ExpertId = std::pair<std::size_t, std::size_t>;

ExpertSets experts_from_paths(const PathSet& pathset);

/// keep[l][i] is true iff some sample's set retains expert i at layer l.
PruneMask union_masks(const std::vector<ExpertSets>& per_sample, std::size_t num_experts);

struct RetentionReport {
    std::vector<std::size_t> retained_per_layer;
    std::size_t retained_total = 0;
    double retention_fraction = 0.0;
    std::size_t m_used = 0;
    std::size_t samples_used = 0;
    std::optional<double> target_retention;
    /// Experts on selected paths that were dropped to meet the target.
    std::vector<ExpertId> trimmed;
};

RetentionReport make_report(const PruneMask& mask, std::size_t m_used, std::size_t samples_used);

/// Raised when even m_max paths per sample cannot reach the target retention.
class TargetUnreachableError : public Error {
public:
    TargetUnreachableError(double target, double achievable, std::size_t m_max);
    double achievable() const { return achievable_; }

private:
    double achievable_;
};

struct PruneResult {
    PruneMask mask;
    RetentionReport report;
    std::vector<PathSet> pathsets;  // at m_used, untrimmed
};

/// Union mask of the per-sample top-m paths.
PruneResult prune_with_m(const std::vector<SampleGraph>& graphs, std::size_t m, std::size_t jobs = 1);

inline constexpr std::size_t kDefaultMaxM = 4096;

/// Expert count a target retention asks for: ceil(target * L * N_e), at least one per layer.
std::size_t target_expert_count(double target_retention, std::size_t layers, std::size_t experts);

/// Smallest m (doubling, then integer bisection, m <= m_max) whose union mask
/// retains at least `target_retention` of all experts. An overshooting mask is
/// trimmed back to target_expert_count() by ascending selection frequency
/// (ties: higher layer first, then higher expert index), never emptying a layer.
PruneResult target_sparsity_search(const std::vector<SampleGraph>& graphs, double target_retention,
                                   std::size_t m_max = kDefaultMaxM, std::size_t jobs = 1);

/// Maps between original and compacted expert indices of a pruned model.
struct ExpertRemap {
    std::vector<std::vector<std::optional<std::size_t>>> old_to_new;
    std::vector<std::vector<std::size_t>> new_to_old;
};

struct PrunedModel {
    MoEModel model;
    ExpertRemap remap;
};

/// Drops non-retained experts and their router rows, keeping order.
PrunedModel apply_mask(const MoEModel& model, const PruneMask& mask);

using CountMatrix = std::vector<std::vector<std::size_t>>;

/// count[l][i] = number of selected paths (over all pathsets) choosing expert i
/// at layer l. Experts listed in `outliers` are then set to the global maximum.
CountMatrix selection_frequency(const std::vector<PathSet>& pathsets, std::size_t num_experts,
                                const std::set<ExpertId>* outliers = nullptr);

nlohmann::json to_json(const PruneMask& mask);
PruneMask mask_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RetentionReport& r);
nlohmann::json to_json(const ExpertRemap& r);

}  // namespace moepath
