#include "moepath/scoring.hpp"

#include <cmath>

#include "moepath/error.hpp"
#include "moepath/parallel.hpp"

namespace moepath {

double clamped_log(double v) {
    return std::log(std::max(v, kLogFloor));
}

void SampleGraph::refresh_logs() {
    log_node.assign(num_layers, {});
    for (std::size_t l = 0; l < num_layers; ++l) {
        for (double e : layers[l].importance) log_node[l].push_back(clamped_log(e));
    }
    log_edge.clear();
    for (const auto& t : transitions) {
        Matrix lt(t.rows(), t.cols());
        for (std::size_t i = 0; i < t.size(); ++i) lt.data()[i] = clamped_log(t.data()[i]);
        log_edge.push_back(std::move(lt));
    }
}

void SampleGraph::validate() const {
    if (num_layers < 2 || num_experts < 1) {
        throw FormatError("graph needs >= 2 layers and >= 1 expert");
    }
    if (layers.size() != num_layers || transitions.size() != num_layers - 1 ||
        log_node.size() != num_layers || log_edge.size() != num_layers - 1) {
        throw FormatError("graph layer counts are inconsistent");
    }
    for (std::size_t l = 0; l < num_layers; ++l) {
        const auto& s = layers[l];
        if (s.activation.size() != num_experts || s.routing.size() != num_experts ||
            s.recon_loss.size() != num_experts || s.importance.size() != num_experts ||
            log_node[l].size() != num_experts) {
            throw FormatError("graph layer " + std::to_string(l) + " has wrong expert count");
        }
    }
    for (std::size_t l = 0; l + 1 < num_layers; ++l) {
        if (transitions[l].rows() != num_experts || transitions[l].cols() != num_experts ||
            log_edge[l].rows() != num_experts || log_edge[l].cols() != num_experts) {
            throw FormatError("graph transition " + std::to_string(l) + " has wrong shape");
        }
    }
}

std::vector<Matrix> expert_outputs(const MoELayer& layer, const Matrix& h) {
    std::vector<Matrix> out;
    out.reserve(layer.experts.size());
    for (const auto& w : layer.experts) out.push_back(matmul_transpose(h, w));
    return out;
}

std::vector<double> activation_strength(std::span<const Matrix> outputs) {
    std::vector<double> a;
    a.reserve(outputs.size());
    for (const auto& o : outputs) {
        double acc = 0.0;
        for (std::size_t k = 0; k < o.rows(); ++k) acc += l2_norm(o.row(k));
        a.push_back(acc / static_cast<double>(o.rows()));
    }
    return a;
}

std::vector<double> activation_strength(const MoELayer& layer, const Matrix& h) {
    const auto outs = expert_outputs(layer, h);
    return activation_strength(outs);
}

std::vector<double> mean_rows(const Matrix& probs) {
    std::vector<double> r(probs.cols(), 0.0);
    for (std::size_t k = 0; k < probs.rows(); ++k) {
        const auto row = probs.row(k);
        for (std::size_t j = 0; j < row.size(); ++j) r[j] += row[j];
    }
    for (double& v : r) v /= static_cast<double>(probs.rows());
    return r;
}

std::vector<double> routing_preference(const MoELayer& layer, const Matrix& h) {
    return mean_rows(route(layer, h));
}

Matrix transition_intensity(std::span<const double> a, std::span<const double> r_next) {
    if (a.size() != r_next.size()) {
        throw ShapeError("transition_intensity: " + std::to_string(a.size()) + " upstream vs " +
                         std::to_string(r_next.size()) + " downstream experts");
    }
    Matrix t(a.size(), r_next.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < r_next.size(); ++j) t(i, j) = a[i] * r_next[j];
    }
    return t;
}

std::vector<double> reconstruction_loss(std::span<const Matrix> outputs, const Matrix& y) {
    std::vector<double> loss;
    loss.reserve(outputs.size());
    for (const auto& o : outputs) {
        if (o.rows() != y.rows() || o.cols() != y.cols()) {
            throw ShapeError("reconstruction_loss: expert output " + o.shape_string() +
                             " vs layer output " + y.shape_string());
        }
        double acc = 0.0;
        for (std::size_t k = 0; k < y.rows(); ++k) acc += squared_distance(y.row(k), o.row(k));
        loss.push_back(acc / static_cast<double>(y.rows()));
    }
    return loss;
}

std::vector<double> reconstruction_loss(const MoELayer& layer, const Matrix& h, const Matrix& y) {
    const auto outs = expert_outputs(layer, h);
    return reconstruction_loss(outs, y);
}

std::vector<double> importance_scores(std::span<const double> losses, LayerPosition position,
                                      std::span<const double> correction) {
    std::vector<double> neg(losses.begin(), losses.end());
    for (double& v : neg) v = -v;
    auto e = softmax(neg);
    if (position == LayerPosition::interior) {
        return e;
    }
    if (correction.size() != e.size()) {
        throw ShapeError("importance_scores: boundary correction has " +
                         std::to_string(correction.size()) + " entries for " +
                         std::to_string(e.size()) + " experts");
    }
    for (std::size_t i = 0; i < e.size(); ++i) e[i] *= correction[i];
    return e;
}

SampleGraph score_sample(const MoEModel& model, const SampleBatch& x) {
    const auto& cfg = model.config;
    if (!cfg.layer_experts.empty()) {
        throw ArgumentError("score_sample expects an unpruned model");
    }
    const auto trace = model_forward(model, x);
    const std::size_t L = cfg.num_layers;

    SampleGraph g;
    g.num_layers = L;
    g.num_experts = cfg.experts_per_layer;
    g.layers.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        const auto outs = expert_outputs(model.layers[l], trace.hidden_states[l]);
        auto& s = g.layers[l];
        s.activation = activation_strength(outs);
        s.routing = mean_rows(trace.routing_probs[l]);
        s.recon_loss = reconstruction_loss(outs, trace.layer_outputs[l]);
    }
    for (std::size_t l = 0; l < L; ++l) {
        auto& s = g.layers[l];
        if (l == 0) {
            s.importance = importance_scores(s.recon_loss, LayerPosition::first, s.routing);
        } else if (l + 1 == L) {
            s.importance = importance_scores(s.recon_loss, LayerPosition::last, s.activation);
        } else {
            s.importance = importance_scores(s.recon_loss, LayerPosition::interior);
        }
    }
    for (std::size_t l = 0; l + 1 < L; ++l) {
        g.transitions.push_back(transition_intensity(g.layers[l].activation, g.layers[l + 1].routing));
    }
    g.refresh_logs();
    return g;
}

std::vector<SampleGraph> score_all(const MoEModel& model, const std::vector<SampleBatch>& samples,
                                   std::size_t jobs) {
    std::vector<SampleGraph> out(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t n) { out[n] = score_sample(model, samples[n]); });
    return out;
}

}  // namespace moepath
