#include "moepath/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace moepath {

ExpertSets experts_from_paths(const PathSet& pathset) {
    if (pathset.paths.empty()) {
        throw ArgumentError("experts_from_paths: empty pathset");
    }
    const std::size_t L = pathset.paths.front().experts.size();
    std::vector<std::set<std::size_t>> sets(L);
    for (const auto& p : pathset.paths) {
        if (p.experts.size() != L) {
            throw ArgumentError("experts_from_paths: paths of different lengths");
        }
        for (std::size_t l = 0; l < L; ++l) sets[l].insert(p.experts[l]);
    }
    ExpertSets out;
    for (const auto& s : sets) out.emplace_back(s.begin(), s.end());
    return out;
}

PruneMask union_masks(const std::vector<ExpertSets>& per_sample, std::size_t num_experts) {
    if (per_sample.empty()) {
        throw ArgumentError("union_masks: no samples");
    }
    const std::size_t L = per_sample.front().size();
    auto mask = PruneMask::all(L, num_experts, false);
    for (const auto& sets : per_sample) {
        if (sets.size() != L) {
            throw ShapeError("union_masks: samples disagree on layer count");
        }
        for (std::size_t l = 0; l < L; ++l) {
            for (auto i : sets[l]) {
                if (i >= num_experts) {
                    throw ShapeError("union_masks: expert " + std::to_string(i) + " out of range");
                }
                mask.keep[l][i] = true;
            }
        }
    }
    return mask;
}

RetentionReport make_report(const PruneMask& mask, std::size_t m_used, std::size_t samples_used) {
    RetentionReport r;
    for (std::size_t l = 0; l < mask.num_layers(); ++l) {
        r.retained_per_layer.push_back(mask.retained_in_layer(l));
        r.retained_total += r.retained_per_layer.back();
    }
    r.retention_fraction = static_cast<double>(r.retained_total) /
                           static_cast<double>(mask.num_layers() * mask.num_experts());
    r.m_used = m_used;
    r.samples_used = samples_used;
    return r;
}

namespace {

std::string describe_unreachable(double target, double achievable, std::size_t m_max) {
    std::ostringstream os;
    os.precision(17);
    os << "target retention " << target << " unreachable with m <= " << m_max
       << "; achievable fraction " << achievable;
    return os.str();
}

PruneMask mask_from_pathsets(const std::vector<PathSet>& pathsets, std::size_t num_experts) {
    std::vector<ExpertSets> sets;
    sets.reserve(pathsets.size());
    for (const auto& ps : pathsets) sets.push_back(experts_from_paths(ps));
    return union_masks(sets, num_experts);
}

}  // namespace

TargetUnreachableError::TargetUnreachableError(double target, double achievable, std::size_t m_max)
    : Error(describe_unreachable(target, achievable, m_max)), achievable_(achievable) {}

PruneResult prune_with_m(const std::vector<SampleGraph>& graphs, std::size_t m, std::size_t jobs) {
    if (graphs.empty()) {
        throw ArgumentError("no sample graphs");
    }
    PruneResult out;
    out.pathsets = plan_all(graphs, m, jobs);
    out.mask = mask_from_pathsets(out.pathsets, graphs.front().num_experts);
    out.report = make_report(out.mask, m, graphs.size());
    return out;
}

std::size_t target_expert_count(double target_retention, std::size_t layers, std::size_t experts) {
    const double total = static_cast<double>(layers * experts);
    // The small slack absorbs representation error in targets like 0.3.
    auto count = static_cast<std::size_t>(std::ceil(target_retention * total - 1e-9));
    return std::clamp(count, layers, layers * experts);
}

PruneResult target_sparsity_search(const std::vector<SampleGraph>& graphs, double target_retention,
                                   std::size_t m_max, std::size_t jobs) {
    if (!(target_retention > 0.0 && target_retention <= 1.0)) {
        throw ArgumentError("target retention must be in (0, 1]");
    }
    if (m_max < 1) {
        throw ArgumentError("m_max must be >= 1");
    }
    if (graphs.empty()) {
        throw ArgumentError("no sample graphs");
    }
    const std::size_t L = graphs.front().num_layers;
    const std::size_t ne = graphs.front().num_experts;

    std::map<std::size_t, PruneResult> tried;
    auto attempt = [&](std::size_t m) -> const PruneResult& {
        auto it = tried.find(m);
        if (it == tried.end()) it = tried.emplace(m, prune_with_m(graphs, m, jobs)).first;
        return it->second;
    };
    auto passes = [&](std::size_t m) { return attempt(m).report.retention_fraction >= target_retention; };

    std::size_t failing = 0;
    std::size_t m = 1;
    while (!passes(m)) {
        if (m == m_max) {
            throw TargetUnreachableError(target_retention, attempt(m).report.retention_fraction, m_max);
        }
        failing = m;
        m = std::min(2 * m, m_max);
    }
    while (m - failing > 1) {
        const std::size_t mid = failing + (m - failing) / 2;
        if (passes(mid)) {
            m = mid;
        } else {
            failing = mid;
        }
    }

    PruneResult out = attempt(m);
    out.report.target_retention = target_retention;
    const std::size_t want = target_expert_count(target_retention, L, ne);
    std::size_t have = out.mask.retained_total();
    if (have > want) {
        const auto freq = selection_frequency(out.pathsets, ne);
        std::vector<ExpertId> order;
        for (std::size_t l = 0; l < L; ++l) {
            for (auto i : out.mask.retained_indices(l)) order.emplace_back(l, i);
        }
        std::sort(order.begin(), order.end(), [&](const ExpertId& a, const ExpertId& b) {
            const auto fa = freq[a.first][a.second];
            const auto fb = freq[b.first][b.second];
            if (fa != fb) return fa < fb;
            if (a.first != b.first) return a.first > b.first;
            return a.second > b.second;
        });
        for (const auto& [l, i] : order) {
            if (have == want) break;
            if (out.mask.retained_in_layer(l) <= 1) continue;
            out.mask.keep[l][i] = false;
            out.report.trimmed.emplace_back(l, i);
            --have;
        }
        auto report = make_report(out.mask, m, graphs.size());
        report.target_retention = target_retention;
        report.trimmed = std::move(out.report.trimmed);
        out.report = std::move(report);
    }
    return out;
}

PrunedModel apply_mask(const MoEModel& model, const PruneMask& mask) {
    const auto& cfg = model.config;
    if (!cfg.layer_experts.empty()) {
        throw ArgumentError("apply_mask expects an unpruned model");
    }
    if (mask.num_layers() != cfg.num_layers || mask.num_experts() != cfg.experts_per_layer) {
        throw ShapeError("mask shape " + std::to_string(mask.num_layers()) + "x" +
                         std::to_string(mask.num_experts()) + " does not match model " +
                         std::to_string(cfg.num_layers) + "x" + std::to_string(cfg.experts_per_layer));
    }
    PrunedModel out;
    out.model.config = cfg;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const auto kept = mask.retained_indices(l);
        if (kept.empty()) {
            throw ArgumentError("layer fully pruned: layer " + std::to_string(l));
        }
        MoELayer layer;
        layer.router = Matrix(kept.size(), cfg.hidden_dim);
        std::vector<std::optional<std::size_t>> old_to_new(cfg.experts_per_layer);
        for (std::size_t n = 0; n < kept.size(); ++n) {
            const auto src = model.layers[l].router.row(kept[n]);
            std::copy(src.begin(), src.end(), layer.router.row(n).begin());
            layer.experts.push_back(model.layers[l].experts[kept[n]]);
            old_to_new[kept[n]] = n;
        }
        out.model.config.layer_experts.push_back(kept.size());
        out.model.layers.push_back(std::move(layer));
        out.remap.old_to_new.push_back(std::move(old_to_new));
        out.remap.new_to_old.push_back(kept);
    }
    out.model.validate();
    return out;
}

CountMatrix selection_frequency(const std::vector<PathSet>& pathsets, std::size_t num_experts,
                                const std::set<ExpertId>* outliers) {
    std::size_t L = 0;
    for (const auto& ps : pathsets) {
        if (!ps.paths.empty()) {
            L = ps.paths.front().experts.size();
            break;
        }
    }
    CountMatrix count(L, std::vector<std::size_t>(num_experts, 0));
    for (const auto& ps : pathsets) {
        for (const auto& p : ps.paths) {
            if (p.experts.size() != L) {
                throw ShapeError("selection_frequency: paths of different lengths");
            }
            for (std::size_t l = 0; l < L; ++l) {
                if (p.experts[l] >= num_experts) {
                    throw ShapeError("selection_frequency: expert index out of range");
                }
                ++count[l][p.experts[l]];
            }
        }
    }
    if (outliers != nullptr && !outliers->empty()) {
        std::size_t mx = 0;
        for (const auto& row : count) {
            for (auto c : row) mx = std::max(mx, c);
        }
        for (const auto& [l, i] : *outliers) {
            if (l >= L || i >= num_experts) {
                throw ArgumentError("outlier (" + std::to_string(l) + ", " + std::to_string(i) +
                                    ") out of range");
            }
            count[l][i] = mx;
        }
    }
    return count;
}

nlohmann::json to_json(const PruneMask& mask) {
    nlohmann::json keep = nlohmann::json::array();
    for (const auto& row : mask.keep) {
        nlohmann::json r = nlohmann::json::array();
        for (bool b : row) r.push_back(b ? 1 : 0);
        keep.push_back(r);
    }
    return {{"L", mask.num_layers()}, {"Ne", mask.num_experts()}, {"keep", keep}};
}

PruneMask mask_from_json(const nlohmann::json& j) {
    try {
        const auto L = j.at("L").get<std::size_t>();
        const auto ne = j.at("Ne").get<std::size_t>();
        const auto rows = j.at("keep").get<std::vector<std::vector<int>>>();
        if (rows.size() != L) {
            throw ShapeError("mask lists " + std::to_string(rows.size()) + " layers, L=" + std::to_string(L));
        }
        auto mask = PruneMask::all(L, ne, false);
        for (std::size_t l = 0; l < L; ++l) {
            if (rows[l].size() != ne) {
                throw ShapeError("mask layer " + std::to_string(l) + " has " +
                                 std::to_string(rows[l].size()) + " entries, Ne=" + std::to_string(ne));
            }
            for (std::size_t i = 0; i < ne; ++i) {
                if (rows[l][i] != 0 && rows[l][i] != 1) {
                    throw FormatError("mask entries must be 0 or 1");
                }
                mask.keep[l][i] = rows[l][i] == 1;
            }
        }
        return mask;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("mask JSON: ") + e.what());
    }
}

nlohmann::json to_json(const RetentionReport& r) {
    nlohmann::json trimmed = nlohmann::json::array();
    for (const auto& [l, i] : r.trimmed) trimmed.push_back({l, i});
    nlohmann::json j = {{"retained_per_layer", r.retained_per_layer},
                        {"retained_total", r.retained_total},
                        {"retention_fraction", r.retention_fraction},
                        {"m_used", r.m_used},
                        {"samples_used", r.samples_used},
                        {"trimmed", trimmed}};
    j["target_retention"] = r.target_retention ? nlohmann::json(*r.target_retention) : nlohmann::json();
    return j;
}

nlohmann::json to_json(const ExpertRemap& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < r.new_to_old.size(); ++l) {
        nlohmann::json o2n = nlohmann::json::array();
        for (const auto& v : r.old_to_new[l]) o2n.push_back(v ? nlohmann::json(*v) : nlohmann::json());
        layers.push_back({{"old_to_new", o2n}, {"new_to_old", r.new_to_old[l]}});
    }
    return {{"layers", layers}};
}

}  // namespace moepath
