#include "moepath/model_io.hpp"

#include <fstream>

#include "moepath/error.hpp"
#include "moepath/tensor_io.hpp"

namespace moepath {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModelFormat = "moe-pathfinder-model";
constexpr const char* kDataFormat = "moe-pathfinder-data";

std::string router_name(std::size_t l) {
    return "layer" + std::to_string(l) + ".router.tnsr";
}

std::string expert_name(std::size_t l, std::size_t i) {
    return "layer" + std::to_string(l) + ".expert" + std::to_string(i) + ".tnsr";
}

template <class T>
T field(const json& j, const char* key) {
    if (!j.contains(key)) {
        throw FormatError(std::string("missing field \"") + key + "\"");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("field \"") + key + "\": " + e.what());
    }
}

}  // namespace

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw FormatError("write failed: " + path.string());
    }
}

json config_to_json(const MoEConfig& c) {
    json j = {
        {"num_layers", c.num_layers},
        {"experts_per_layer", c.experts_per_layer},
        {"hidden_dim", c.hidden_dim},
        {"top_k", c.top_k},
        {"nonlinearity", to_string(c.nonlinearity)},
    };
    if (!c.layer_experts.empty()) {
        j["layer_experts"] = c.layer_experts;
    }
    return j;
}

MoEConfig config_from_json(const json& j) {
    MoEConfig c;
    c.num_layers = field<std::size_t>(j, "num_layers");
    c.experts_per_layer = field<std::size_t>(j, "experts_per_layer");
    c.hidden_dim = field<std::size_t>(j, "hidden_dim");
    c.top_k = field<std::size_t>(j, "top_k");
    try {
        c.nonlinearity = parse_nonlinearity(field<std::string>(j, "nonlinearity"));
    } catch (const ArgumentError& e) {
        throw FormatError(e.what());
    }
    if (j.contains("layer_experts")) {
        c.layer_experts = field<std::vector<std::size_t>>(j, "layer_experts");
    }
    try {
        c.validate();
    } catch (const ArgumentError& e) {
        throw FormatError(std::string("invalid model config: ") + e.what());
    }
    return c;
}

void save_model(const fs::path& dir, const MoEModel& model) {
    model.validate();
    fs::create_directories(dir);
    json layers = json::array();
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        save_matrix(dir / router_name(l), layer.router);
        json experts = json::array();
        for (std::size_t i = 0; i < layer.experts.size(); ++i) {
            save_matrix(dir / expert_name(l, i), layer.experts[i]);
            experts.push_back(expert_name(l, i));
        }
        layers.push_back({{"router", router_name(l)}, {"experts", experts}});
    }
    write_json_file(dir / "model.json", json{{"format", kModelFormat},
                                              {"version", 1},
                                              {"config", config_to_json(model.config)},
                                              {"layers", layers}});
}

MoEModel load_model(const fs::path& dir) {
    const json manifest = read_json_file(dir / "model.json");
    if (manifest.value("format", std::string{}) != kModelFormat) {
        throw FormatError((dir / "model.json").string() + " is not a model manifest");
    }
    if (manifest.value("version", 0) != 1) {
        throw BadVersionError("unsupported model manifest version");
    }
    MoEModel model;
    model.config = config_from_json(manifest.at("config"));
    const auto& layers = manifest.at("layers");
    if (layers.size() != model.config.num_layers) {
        throw ShapeError("manifest lists " + std::to_string(layers.size()) + " layers, config says " +
                         std::to_string(model.config.num_layers));
    }
    const std::size_t d = model.config.hidden_dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::size_t ne = model.config.experts_at(l);
        MoELayer layer;
        layer.router = load_matrix(dir / field<std::string>(layers[l], "router"));
        if (layer.router.rows() != ne || layer.router.cols() != d) {
            throw ShapeError("layer " + std::to_string(l) + " router: expected " +
                             std::to_string(ne) + "x" + std::to_string(d) + ", got " +
                             layer.router.shape_string());
        }
        const auto names = field<std::vector<std::string>>(layers[l], "experts");
        if (names.size() != ne) {
            throw ShapeError("layer " + std::to_string(l) + " lists " + std::to_string(names.size()) +
                             " experts, expected " + std::to_string(ne));
        }
        for (std::size_t i = 0; i < ne; ++i) {
            Matrix w = load_matrix(dir / names[i]);
            if (w.rows() != d || w.cols() != d) {
                throw ShapeError("layer " + std::to_string(l) + " expert " + std::to_string(i) +
                                 ": expected " + std::to_string(d) + "x" + std::to_string(d) +
                                 ", got " + w.shape_string());
            }
            layer.experts.push_back(std::move(w));
        }
        model.layers.push_back(std::move(layer));
    }
    return model;
}

void save_samples(const fs::path& dir, const std::vector<SampleBatch>& samples) {
    fs::create_directories(dir);
    json names = json::array();
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const std::string name = "sample" + std::to_string(n) + ".tnsr";
        save_matrix(dir / name, samples[n].tokens);
        names.push_back(name);
    }
    write_json_file(dir / "data.json",
                    json{{"format", kDataFormat}, {"version", 1}, {"samples", names}});
}

std::vector<SampleBatch> load_samples(const fs::path& dir) {
    const json manifest = read_json_file(dir / "data.json");
    if (manifest.value("format", std::string{}) != kDataFormat) {
        throw FormatError((dir / "data.json").string() + " is not a data manifest");
    }
    std::vector<SampleBatch> out;
    for (const auto& name : field<std::vector<std::string>>(manifest, "samples")) {
        out.push_back(SampleBatch{load_matrix(dir / name)});
        if (out.back().tokens.rows() == 0) {
            throw FormatError(name + ": sample has no tokens");
        }
        if (out.back().tokens.cols() != out.front().tokens.cols()) {
            throw ShapeError(name + ": token width differs from the first sample");
        }
    }
    return out;
}

}  // namespace moepath
