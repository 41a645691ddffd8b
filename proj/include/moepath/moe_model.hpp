#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moepath/matrix.hpp"

namespace moepath {

enum class Nonlinearity { none, tanh };

std::string to_string(Nonlinearity n);
Nonlinearity parse_nonlinearity(const std::string& s);

struct MoEConfig {
    std::size_t num_layers = 2;
    /// Expert count of the unpruned model.
    std::size_t experts_per_layer = 2;
    std::size_t hidden_dim = 1;
    std::size_t top_k = 1;
    Nonlinearity nonlinearity = Nonlinearity::tanh;
    /// Per-layer expert counts after pruning; empty means uniform.
    std::vector<std::size_t> layer_experts;

    std::size_t experts_at(std::size_t layer) const {
        return layer_experts.empty() ? experts_per_layer : layer_experts[layer];
    }
    std::size_t top_k_at(std::size_t layer) const;

    /// Throws ArgumentError describing the first violated constraint.
    void validate() const;

    friend bool operator==(const MoEConfig&, const MoEConfig&) = default;
};

struct MoELayer {
    std::vector<Matrix> experts;  // each d x d
    Matrix router;                // experts x d

    friend bool operator==(const MoELayer&, const MoELayer&) = default;
};

struct MoEModel {
    MoEConfig config;
    std::vector<MoELayer> layers;

    /// Checks layer count and every tensor shape against the config.
    void validate() const;

    friend bool operator==(const MoEModel&, const MoEModel&) = default;
};

/// L x N_e retention matrix over the experts of an unpruned model.
struct PruneMask {
    std::vector<std::vector<bool>> keep;

    static PruneMask all(std::size_t layers, std::size_t experts, bool value = true);

    std::size_t num_layers() const { return keep.size(); }
    std::size_t num_experts() const { return keep.empty() ? 0 : keep.front().size(); }
    std::size_t retained_in_layer(std::size_t layer) const;
    std::size_t retained_total() const;
    std::vector<std::size_t> retained_indices(std::size_t layer) const;

    friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

/// One calibration or evaluation sample: N_x token vectors of width d.
struct SampleBatch {
    Matrix tokens;
};

struct ForwardTrace {
    std::vector<Matrix> hidden_states;    // L+1, H^(0) = input tokens
    std::vector<Matrix> layer_outputs;    // L, before the nonlinearity
    std::vector<Matrix> routing_probs;    // L, N_x x N_e softmax over (retained) experts
    /// [layer][token] -> selected expert indices, highest probability first.
    std::vector<std::vector<std::vector<std::size_t>>> selected_experts;
};

struct LayerOutput {
    Matrix y;
    Matrix probs;
    std::vector<std::vector<std::size_t>> selected;
};

/// Row-wise softmax of h * router^T.
Matrix route(const MoELayer& layer, const Matrix& h);

/// Indices of the k largest probabilities; ties go to the lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> probs, std::size_t k);

/// Sparse top-k mixture. Non-retained experts are masked to -inf before the
/// softmax, k is clamped to the retained count, and gates are the selected
/// probabilities renormalized to sum to one.
LayerOutput layer_forward(const MoELayer& layer, const Matrix& h, std::size_t top_k,
                          const std::vector<bool>* retained = nullptr);

ForwardTrace model_forward(const MoEModel& model, const SampleBatch& x,
                           const PruneMask* mask = nullptr);

/// Weights i.i.d. uniform[-1/sqrt(d), 1/sqrt(d)) from one SplitMix64 stream,
/// drawn layer by layer: router row-major, then experts 0..N_e-1 row-major.
MoEModel gen_model(const MoEConfig& config, std::uint64_t seed);

/// Token entries i.i.d. uniform[-1, 1), sample by sample, row-major.
std::vector<SampleBatch> gen_data(std::size_t hidden_dim, std::size_t n_samples,
                                  std::size_t tokens_per_sample, std::uint64_t seed);

}  // namespace moepath
