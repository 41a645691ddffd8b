#include "moepath/moe_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "moepath/error.hpp"
#include "moepath/rng.hpp"

namespace moepath {

std::string to_string(Nonlinearity n) {
    return n == Nonlinearity::tanh ? "tanh" : "none";
}

Nonlinearity parse_nonlinearity(const std::string& s) {
    if (s == "tanh") return Nonlinearity::tanh;
    if (s == "none") return Nonlinearity::none;
    throw ArgumentError("unknown nonlinearity \"" + s + "\" (expected none|tanh)");
}

std::size_t MoEConfig::top_k_at(std::size_t layer) const {
    return std::min(top_k, experts_at(layer));
}

void MoEConfig::validate() const {
    if (num_layers < 2) {
        throw ArgumentError("num_layers must be >= 2, got " + std::to_string(num_layers));
    }
    if (hidden_dim < 1) {
        throw ArgumentError("hidden_dim must be >= 1");
    }
    if (experts_per_layer < 1) {
        throw ArgumentError("experts_per_layer must be >= 1");
    }
    if (top_k < 1 || top_k > experts_per_layer) {
        throw ArgumentError("top_k must be in [1, experts_per_layer], got " +
                            std::to_string(top_k));
    }
    if (!layer_experts.empty()) {
        if (layer_experts.size() != num_layers) {
            throw ArgumentError("layer_experts has " + std::to_string(layer_experts.size()) +
                                " entries for " + std::to_string(num_layers) + " layers");
        }
        for (std::size_t l = 0; l < num_layers; ++l) {
            if (layer_experts[l] < 1 || layer_experts[l] > experts_per_layer) {
                throw ArgumentError("layer " + std::to_string(l) + " expert count " +
                                    std::to_string(layer_experts[l]) + " out of range");
            }
        }
    }
}

void MoEModel::validate() const {
    config.validate();
    if (layers.size() != config.num_layers) {
        throw ShapeError("model has " + std::to_string(layers.size()) + " layers, config says " +
                         std::to_string(config.num_layers));
    }
    const std::size_t d = config.hidden_dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const std::size_t ne = config.experts_at(l);
        if (layer.experts.size() != ne) {
            throw ShapeError("layer " + std::to_string(l) + " has " +
                             std::to_string(layer.experts.size()) + " experts, expected " +
                             std::to_string(ne));
        }
        if (layer.router.rows() != ne || layer.router.cols() != d) {
            throw ShapeError("layer " + std::to_string(l) + " router: expected " +
                             std::to_string(ne) + "x" + std::to_string(d) + ", got " +
                             layer.router.shape_string());
        }
        for (std::size_t i = 0; i < ne; ++i) {
            if (layer.experts[i].rows() != d || layer.experts[i].cols() != d) {
                throw ShapeError("layer " + std::to_string(l) + " expert " + std::to_string(i) +
                                 ": expected " + std::to_string(d) + "x" + std::to_string(d) +
                                 ", got " + layer.experts[i].shape_string());
            }
        }
    }
}

PruneMask PruneMask::all(std::size_t layers, std::size_t experts, bool value) {
    return PruneMask{std::vector<std::vector<bool>>(layers, std::vector<bool>(experts, value))};
}

std::size_t PruneMask::retained_in_layer(std::size_t layer) const {
    return static_cast<std::size_t>(std::count(keep[layer].begin(), keep[layer].end(), true));
}

std::size_t PruneMask::retained_total() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l < keep.size(); ++l) {
        total += retained_in_layer(l);
    }
    return total;
}

std::vector<std::size_t> PruneMask::retained_indices(std::size_t layer) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < keep[layer].size(); ++i) {
        if (keep[layer][i]) out.push_back(i);
    }
    return out;
}

Matrix route(const MoELayer& layer, const Matrix& h) {
    Matrix logits = matmul_transpose(h, layer.router);
    for (std::size_t k = 0; k < logits.rows(); ++k) {
        const auto p = softmax(logits.row(k));
        std::copy(p.begin(), p.end(), logits.row(k).begin());
    }
    return logits;
}

std::vector<std::size_t> top_k_indices(std::span<const double> probs, std::size_t k) {
    std::vector<std::size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (probs[a] != probs[b]) return probs[a] > probs[b];
                          return a < b;
                      });
    idx.resize(k);
    return idx;
}

LayerOutput layer_forward(const MoELayer& layer, const Matrix& h, std::size_t top_k,
                          const std::vector<bool>* retained) {
    const std::size_t ne = layer.experts.size();
    if (h.cols() != layer.router.cols()) {
        throw ShapeError("layer input " + h.shape_string() + " does not match router " +
                         layer.router.shape_string());
    }
    std::size_t retained_count = ne;
    if (retained != nullptr) {
        if (retained->size() != ne) {
            throw ShapeError("retention vector has " + std::to_string(retained->size()) +
                             " entries for " + std::to_string(ne) + " experts");
        }
        retained_count = static_cast<std::size_t>(std::count(retained->begin(), retained->end(), true));
        if (retained_count == 0) {
            throw ArgumentError("layer fully pruned");
        }
    }
    const std::size_t k_eff = std::min(top_k, retained_count);

    LayerOutput out;
    out.probs = matmul_transpose(h, layer.router);
    out.y = Matrix(h.rows(), layer.experts.front().rows());
    out.selected.resize(h.rows());

    for (std::size_t tok = 0; tok < h.rows(); ++tok) {
        auto logits = out.probs.row(tok);
        if (retained != nullptr) {
            for (std::size_t i = 0; i < ne; ++i) {
                if (!(*retained)[i]) logits[i] = -std::numeric_limits<double>::infinity();
            }
        }
        const auto p = softmax(logits);
        std::copy(p.begin(), p.end(), logits.begin());

        auto sel = top_k_indices(p, k_eff);
        double gate_sum = 0.0;
        for (auto i : sel) gate_sum += p[i];

        auto yk = out.y.row(tok);
        for (auto i : sel) {
            const double gate = p[i] / gate_sum;
            const auto expert_out = apply_transposed(h.row(tok), layer.experts[i]);
            for (std::size_t c = 0; c < yk.size(); ++c) {
                yk[c] += gate * expert_out[c];
            }
        }
        out.selected[tok] = std::move(sel);
    }
    return out;
}

ForwardTrace model_forward(const MoEModel& model, const SampleBatch& x, const PruneMask* mask) {
    const auto& cfg = model.config;
    if (x.tokens.cols() != cfg.hidden_dim) {
        throw ShapeError("sample width " + std::to_string(x.tokens.cols()) +
                         " does not match hidden_dim " + std::to_string(cfg.hidden_dim));
    }
    if (x.tokens.rows() == 0) {
        throw ArgumentError("sample has no tokens");
    }
    if (mask != nullptr && mask->num_layers() != cfg.num_layers) {
        throw ShapeError("mask covers " + std::to_string(mask->num_layers()) +
                         " layers, model has " + std::to_string(cfg.num_layers));
    }

    ForwardTrace trace;
    trace.hidden_states.reserve(cfg.num_layers + 1);
    trace.hidden_states.push_back(x.tokens);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::vector<bool>* retained = mask ? &mask->keep[l] : nullptr;
        if (retained != nullptr && std::none_of(retained->begin(), retained->end(), [](bool b) { return b; })) {
            throw ArgumentError("layer fully pruned: layer " + std::to_string(l));
        }
        auto out = layer_forward(model.layers[l], trace.hidden_states.back(), cfg.top_k, retained);
        Matrix next = out.y;
        if (cfg.nonlinearity == Nonlinearity::tanh) {
            for (double& v : next.data()) v = std::tanh(v);
        }
        trace.layer_outputs.push_back(std::move(out.y));
        trace.routing_probs.push_back(std::move(out.probs));
        trace.selected_experts.push_back(std::move(out.selected));
        trace.hidden_states.push_back(std::move(next));
    }
    return trace;
}

MoEModel gen_model(const MoEConfig& config, std::uint64_t seed) {
    config.validate();
    if (!config.layer_experts.empty()) {
        throw ArgumentError("gen_model expects a uniform (unpruned) config");
    }
    Rng rng(seed);
    const std::size_t d = config.hidden_dim;
    const std::size_t ne = config.experts_per_layer;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    auto fill = [&](Matrix& m) {
        for (double& v : m.data()) v = rng.uniform(-bound, bound);
    };

    MoEModel model;
    model.config = config;
    model.layers.resize(config.num_layers);
    for (auto& layer : model.layers) {
        layer.router = Matrix(ne, d);
        fill(layer.router);
        layer.experts.assign(ne, Matrix(d, d));
        for (auto& w : layer.experts) fill(w);
    }
    return model;
}

std::vector<SampleBatch> gen_data(std::size_t hidden_dim, std::size_t n_samples,
                                  std::size_t tokens_per_sample, std::uint64_t seed) {
    if (hidden_dim == 0 || tokens_per_sample == 0) {
        throw ArgumentError("gen_data needs hidden_dim >= 1 and tokens_per_sample >= 1");
    }
    Rng rng(seed);
    std::vector<SampleBatch> out(n_samples);
    for (auto& s : out) {
        s.tokens = Matrix(tokens_per_sample, hidden_dim);
        for (double& v : s.tokens.data()) v = rng.uniform(-1.0, 1.0);
    }
    return out;
}

}  // namespace moepath
