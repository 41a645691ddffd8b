#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "moepath/matrix.hpp"
#include "moepath/moe_model.hpp"

namespace moepath {

/// Floor applied before taking logs so zero weights stay finite.
inline constexpr double kLogFloor = 1e-300;

double clamped_log(double v);

struct LayerScore {
    std::vector<double> activation;   // a: mean expert output norm over tokens
    std::vector<double> routing;      // r: this layer's router, averaged over tokens
    std::vector<double> recon_loss;   // mean squared gap to the traced layer output
    std::vector<double> importance;   // e, boundary-corrected at the first and last layer
};

enum class LayerPosition { first, interior, last };

/// Layered expert graph for one sample. Layer l's edges go to layer l+1.
struct SampleGraph {
    std::size_t num_layers = 0;
    std::size_t num_experts = 0;
    std::vector<LayerScore> layers;
    std::vector<Matrix> transitions;               // L-1 of N_e x N_e
    std::vector<std::vector<double>> log_node;     // L x N_e
    std::vector<Matrix> log_edge;                  // L-1 of N_e x N_e

    /// Recomputes log_node/log_edge from importance/transitions.
    void refresh_logs();

    /// Throws FormatError on inconsistent counts or shapes.
    void validate() const;
};

/// Output of every expert of a layer for every token: [expert] -> N_x x d.
std::vector<Matrix> expert_outputs(const MoELayer& layer, const Matrix& h);

/// a_i = mean_k ||h_k W_i^T||.
std::vector<double> activation_strength(const MoELayer& layer, const Matrix& h);
std::vector<double> activation_strength(std::span<const Matrix> outputs);

/// r_j = mean_k softmax(h_k R^T)_j.
std::vector<double> routing_preference(const MoELayer& layer, const Matrix& h);
std::vector<double> mean_rows(const Matrix& probs);

/// t[i][j] = a[i] * r_next[j].
Matrix transition_intensity(std::span<const double> a, std::span<const double> r_next);

/// L_i = mean_k ||y_k - h_k W_i^T||^2 (unit gate).
std::vector<double> reconstruction_loss(const MoELayer& layer, const Matrix& h, const Matrix& y);
std::vector<double> reconstruction_loss(std::span<const Matrix> outputs, const Matrix& y);

/// softmax(-losses), multiplied elementwise by `correction` at boundary layers:
/// the first layer's own routing preference, or the last layer's activation strength.
std::vector<double> importance_scores(std::span<const double> losses, LayerPosition position,
                                      std::span<const double> correction = {});

/// One forward pass, then every per-layer statistic and transition matrix.
SampleGraph score_sample(const MoEModel& model, const SampleBatch& x);

/// score_sample over every sample, `jobs` at a time. Output order follows input order.
std::vector<SampleGraph> score_all(const MoEModel& model, const std::vector<SampleBatch>& samples,
                                   std::size_t jobs = 1);

}  // namespace moepath
