#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "moepath/planner.hpp"
#include "moepath/scoring.hpp"

namespace moepath {

/// `{stem}.json` holds counts and the a/r/recon_loss/e arrays; transition
/// matrices go to `{stem}.T{l}.tnsr`. Log fields are rebuilt on load.
void save_graph(const std::filesystem::path& dir, const std::string& stem, const SampleGraph& g);
SampleGraph load_graph(const std::filesystem::path& json_path);

/// Directory of graphs with a `graphs.json` index recording source sample ids.
void save_graph_set(const std::filesystem::path& dir, const std::vector<SampleGraph>& graphs,
                    const std::vector<std::size_t>& sample_ids);

struct GraphSet {
    std::vector<SampleGraph> graphs;
    std::vector<std::size_t> sample_ids;
};
GraphSet load_graph_set(const std::filesystem::path& dir);

/// Directory of `paths{n}.json` with a `pathsets.json` index.
void save_pathsets(const std::filesystem::path& dir, const std::vector<PathSet>& pathsets);
std::vector<PathSet> load_pathsets(const std::filesystem::path& dir);

}  // namespace moepath
