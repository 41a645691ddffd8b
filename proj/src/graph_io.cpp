#include "moepath/graph_io.hpp"

#include "moepath/error.hpp"
#include "moepath/model_io.hpp"
#include "moepath/tensor_io.hpp"

namespace moepath {

namespace fs = std::filesystem;
using nlohmann::json;

void save_graph(const fs::path& dir, const std::string& stem, const SampleGraph& g) {
    g.validate();
    fs::create_directories(dir);
    json layers = json::array();
    for (const auto& s : g.layers) {
        layers.push_back({{"a", s.activation},
                          {"r", s.routing},
                          {"recon_loss", s.recon_loss},
                          {"e", s.importance}});
    }
    json blobs = json::array();
    for (std::size_t l = 0; l < g.transitions.size(); ++l) {
        const std::string name = stem + ".T" + std::to_string(l) + ".tnsr";
        save_matrix(dir / name, g.transitions[l]);
        blobs.push_back(name);
    }
    write_json_file(dir / (stem + ".json"), json{{"format", "moe-pathfinder-graph"},
                                                 {"version", 1},
                                                 {"num_layers", g.num_layers},
                                                 {"num_experts", g.num_experts},
                                                 {"layers", layers},
                                                 {"transitions", blobs}});
}

SampleGraph load_graph(const fs::path& json_path) {
    const json j = read_json_file(json_path);
    if (j.value("format", std::string{}) != "moe-pathfinder-graph") {
        throw FormatError(json_path.string() + " is not a graph file");
    }
    SampleGraph g;
    try {
        g.num_layers = j.at("num_layers").get<std::size_t>();
        g.num_experts = j.at("num_experts").get<std::size_t>();
        for (const auto& s : j.at("layers")) {
            g.layers.push_back({s.at("a").get<std::vector<double>>(),
                                s.at("r").get<std::vector<double>>(),
                                s.at("recon_loss").get<std::vector<double>>(),
                                s.at("e").get<std::vector<double>>()});
        }
        for (const auto& name : j.at("transitions")) {
            g.transitions.push_back(load_matrix(json_path.parent_path() / name.get<std::string>()));
        }
    } catch (const json::exception& e) {
        throw FormatError(json_path.string() + ": " + e.what());
    }
    if (g.layers.size() != g.num_layers || g.transitions.size() + 1 != g.num_layers) {
        throw FormatError(json_path.string() + ": layer counts are inconsistent");
    }
    g.refresh_logs();
    g.validate();
    return g;
}

void save_graph_set(const fs::path& dir, const std::vector<SampleGraph>& graphs,
                    const std::vector<std::size_t>& sample_ids) {
    fs::create_directories(dir);
    json files = json::array();
    for (std::size_t n = 0; n < graphs.size(); ++n) {
        const std::string stem = "graph" + std::to_string(n);
        save_graph(dir, stem, graphs[n]);
        files.push_back(stem + ".json");
    }
    write_json_file(dir / "graphs.json", json{{"graphs", files}, {"sample_ids", sample_ids}});
}

GraphSet load_graph_set(const fs::path& dir) {
    const json index = read_json_file(dir / "graphs.json");
    GraphSet out;
    try {
        for (const auto& name : index.at("graphs")) {
            out.graphs.push_back(load_graph(dir / name.get<std::string>()));
        }
        out.sample_ids = index.at("sample_ids").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw FormatError((dir / "graphs.json").string() + ": " + e.what());
    }
    if (out.graphs.empty()) {
        throw FormatError((dir / "graphs.json").string() + ": no graphs");
    }
    for (const auto& g : out.graphs) {
        if (g.num_layers != out.graphs.front().num_layers ||
            g.num_experts != out.graphs.front().num_experts) {
            throw ShapeError((dir / "graphs.json").string() + ": graphs disagree in shape");
        }
    }
    return out;
}

void save_pathsets(const fs::path& dir, const std::vector<PathSet>& pathsets) {
    fs::create_directories(dir);
    json files = json::array();
    for (std::size_t n = 0; n < pathsets.size(); ++n) {
        const std::string name = "paths" + std::to_string(n) + ".json";
        write_json_file(dir / name, to_json(pathsets[n]));
        files.push_back(name);
    }
    write_json_file(dir / "pathsets.json", json{{"pathsets", files}});
}

std::vector<PathSet> load_pathsets(const fs::path& dir) {
    const json index = read_json_file(dir / "pathsets.json");
    std::vector<PathSet> out;
    try {
        for (const auto& name : index.at("pathsets")) {
            out.push_back(pathset_from_json(read_json_file(dir / name.get<std::string>())));
        }
    } catch (const json::exception& e) {
        throw FormatError((dir / "pathsets.json").string() + ": " + e.what());
    }
    if (out.empty()) {
        throw FormatError((dir / "pathsets.json").string() + ": no pathsets");
    }
    return out;
}

}  // namespace moepath
