#include "moepath/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moepath/error.hpp"
#include "moepath/parallel.hpp"
#include "moepath/rng.hpp"

namespace moepath {

bool ranks_before(const PrefixPath& a, const PrefixPath& b) {
    if (a.log_weight != b.log_weight) return a.log_weight > b.log_weight;
    return a.experts < b.experts;
}

double path_log_weight(const SampleGraph& graph, std::span<const std::size_t> experts) {
    if (experts.size() != graph.num_layers) {
        throw ArgumentError("path has " + std::to_string(experts.size()) + " entries, graph has " +
                            std::to_string(graph.num_layers) + " layers");
    }
    for (std::size_t l = 0; l < experts.size(); ++l) {
        if (experts[l] >= graph.num_experts) {
            throw ArgumentError("expert index " + std::to_string(experts[l]) + " at layer " +
                                std::to_string(l) + " out of range");
        }
    }
    double w = graph.log_node[0][experts[0]];
    for (std::size_t l = 0; l + 1 < experts.size(); ++l) {
        w = w + graph.log_edge[l](experts[l], experts[l + 1]) + graph.log_node[l + 1][experts[l + 1]];
    }
    return w;
}

namespace {

struct Candidate {
    double log_weight;
    std::size_t from_node;
    std::size_t from_slot;
};

}  // namespace

PathSet top_m_paths_dp(const SampleGraph& graph, std::size_t m, DpQueues* queues) {
    if (m < 1) {
        throw ArgumentError("m must be >= 1");
    }
    const std::size_t ne = graph.num_experts;
    using Queue = std::vector<PrefixPath>;

    std::vector<Queue> prev(ne);
    for (std::size_t i = 0; i < ne; ++i) {
        prev[i].push_back(PrefixPath{{i}, graph.log_node[0][i]});
    }
    if (queues != nullptr) {
        queues->layers.assign(1, prev);
    }

    for (std::size_t l = 0; l + 1 < graph.num_layers; ++l) {
        std::vector<Queue> next(ne);
        for (std::size_t j = 0; j < ne; ++j) {
            std::vector<Candidate> cand;
            for (std::size_t i = 0; i < ne; ++i) {
                for (std::size_t s = 0; s < prev[i].size(); ++s) {
                    cand.push_back({prev[i][s].log_weight + graph.log_edge[l](i, j) +
                                        graph.log_node[l + 1][j],
                                    i, s});
                }
            }
            const std::size_t keep = std::min(m, cand.size());
            // Extensions append the same node, so prefix order decides ties.
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                              [&](const Candidate& a, const Candidate& b) {
                                  if (a.log_weight != b.log_weight) return a.log_weight > b.log_weight;
                                  return prev[a.from_node][a.from_slot].experts <
                                         prev[b.from_node][b.from_slot].experts;
                              });
            next[j].reserve(keep);
            for (std::size_t c = 0; c < keep; ++c) {
                PrefixPath p{prev[cand[c].from_node][cand[c].from_slot].experts, cand[c].log_weight};
                p.experts.push_back(j);
                next[j].push_back(std::move(p));
            }
        }
        prev = std::move(next);
        if (queues != nullptr) {
            queues->layers.push_back(prev);
        }
    }

    PathSet out;
    out.m = m;
    for (auto& q : prev) {
        for (auto& p : q) out.paths.push_back(std::move(p));
    }
    const std::size_t keep = std::min(m, out.paths.size());
    std::partial_sort(out.paths.begin(), out.paths.begin() + static_cast<std::ptrdiff_t>(keep),
                      out.paths.end(), ranks_before);
    out.paths.resize(keep);
    return out;
}

std::vector<PathSet> plan_all(const std::vector<SampleGraph>& graphs, std::size_t m,
                              std::size_t jobs) {
    std::vector<PathSet> out(graphs.size());
    parallel_for(graphs.size(), jobs, [&](std::size_t n) { out[n] = top_m_paths_dp(graphs[n], m); });
    return out;
}

PathSet top_m_paths_bruteforce(const SampleGraph& graph, std::size_t m, std::uint64_t cap) {
    if (m < 1) {
        throw ArgumentError("m must be >= 1");
    }
    const std::size_t L = graph.num_layers;
    const std::size_t ne = graph.num_experts;
    std::uint64_t total = 1;
    for (std::size_t l = 0; l < L; ++l) {
        if (total > cap / ne) {
            throw ArgumentError("brute force would enumerate more than " + std::to_string(cap) + " paths");
        }
        total *= ne;
    }
    if (total > cap) {
        throw ArgumentError("brute force would enumerate more than " + std::to_string(cap) + " paths");
    }

    // Enumeration order is lexicographic, so the running code doubles as the
    // lexicographic tie-break key.
    struct Scored {
        double log_weight;
        std::uint64_t code;
    };
    std::vector<Scored> all;
    all.reserve(total);
    std::vector<std::size_t> seq(L, 0);
    for (std::uint64_t code = 0; code < total; ++code) {
        all.push_back({path_log_weight(graph, seq), code});
        for (std::size_t l = L; l-- > 0;) {
            if (++seq[l] < ne) break;
            seq[l] = 0;
        }
    }
    const std::size_t keep = static_cast<std::size_t>(std::min<std::uint64_t>(m, total));
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                      [](const Scored& a, const Scored& b) {
                          if (a.log_weight != b.log_weight) return a.log_weight > b.log_weight;
                          return a.code < b.code;
                      });

    PathSet out;
    out.m = m;
    for (std::size_t c = 0; c < keep; ++c) {
        PrefixPath p;
        p.experts.resize(L);
        std::uint64_t code = all[c].code;
        for (std::size_t l = L; l-- > 0;) {
            p.experts[l] = static_cast<std::size_t>(code % ne);
            code /= ne;
        }
        p.log_weight = all[c].log_weight;
        out.paths.push_back(std::move(p));
    }
    return out;
}

SampleGraph random_graph(std::size_t layers, std::size_t experts, Rng& rng) {
    SampleGraph g;
    g.num_layers = layers;
    g.num_experts = experts;
    g.layers.resize(layers);
    for (auto& s : g.layers) {
        std::vector<double> logits;
        for (std::size_t i = 0; i < experts; ++i) {
            s.activation.push_back(rng.uniform(0.0, 2.0));
            logits.push_back(rng.uniform(-2.0, 2.0));
            s.importance.push_back(rng.uniform(0.01, 1.0));
            s.recon_loss.push_back(-std::log(s.importance.back()));
        }
        s.routing = softmax(logits);
    }
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        g.transitions.push_back(transition_intensity(g.layers[l].activation, g.layers[l + 1].routing));
    }
    g.refresh_logs();
    return g;
}

OracleSummary run_oracle_suite(std::size_t trials, std::uint64_t seed) {
    OracleSummary summary;
    summary.trials = trials;
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t L = 2 + static_cast<std::size_t>(rng.below(4));
        const std::size_t ne = 2 + static_cast<std::size_t>(rng.below(3));
        std::size_t all = 1;
        for (std::size_t l = 0; l < L; ++l) all *= ne;
        const std::size_t choices[] = {1, 3, 10, all};
        const std::size_t m = choices[rng.below(4)];
        const auto g = random_graph(L, ne, rng);

        const auto dp = top_m_paths_dp(g, m);
        const auto bf = top_m_paths_bruteforce(g, m);
        bool ok = dp.paths.size() == bf.paths.size();
        for (std::size_t p = 0; ok && p < dp.paths.size(); ++p) {
            ok = dp.paths[p].experts == bf.paths[p].experts &&
                 std::abs(dp.paths[p].log_weight - bf.paths[p].log_weight) <= 1e-9;
        }
        if (ok) {
            ++summary.passed;
        } else if (summary.first_failure.empty()) {
            summary.first_failure = "trial " + std::to_string(t) + " (L=" + std::to_string(L) +
                                    ", Ne=" + std::to_string(ne) + ", m=" + std::to_string(m) + ")";
        }
    }
    return summary;
}

nlohmann::json to_json(const PathSet& ps) {
    nlohmann::json paths = nlohmann::json::array();
    for (const auto& p : ps.paths) {
        paths.push_back({{"experts", p.experts}, {"log_weight", p.log_weight}});
    }
    return {{"m", ps.m}, {"paths", paths}};
}

PathSet pathset_from_json(const nlohmann::json& j) {
    try {
        PathSet ps;
        ps.m = j.at("m").get<std::size_t>();
        for (const auto& p : j.at("paths")) {
            ps.paths.push_back({p.at("experts").get<std::vector<std::size_t>>(),
                                p.at("log_weight").get<double>()});
        }
        for (const auto& p : ps.paths) {
            if (p.experts.size() != ps.paths.front().experts.size()) {
                throw FormatError("pathset mixes path lengths");
            }
        }
        return ps;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("pathset JSON: ") + e.what());
    }
}

}  // namespace moepath
