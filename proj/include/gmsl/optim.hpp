#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gmsl/diffcore.hpp"
#include "gmsl/errors.hpp"
#include "gmsl/loss.hpp"
#include "gmsl/similarity.hpp"

namespace gmsl {

enum class TrainLevel : std::uint8_t { Graph = 0, Node = 1, Bilevel = 2 };

inline std::string train_level_name(TrainLevel l) {
    switch (l) {
        case TrainLevel::Graph: return "graph";
        case TrainLevel::Node: return "node";
        case TrainLevel::Bilevel: return "bilevel";
    }
    return "?";
}

struct TrainConfig {
    double learning_rate = 0.001;
    std::uint32_t epochs = 200;
    std::uint32_t batch_size = 256;
    TrainLevel level = TrainLevel::Graph;
    FusionWeights fusion{0.0, 0.0, 0.0, 1.0};  // fingerprint-only needs no external inputs
    std::uint64_t seed = 0;
    LatentSimilarityConfig latent{};
    double tau1 = 1.0;
    double tau2 = 1.0;
    // Fail fast on molecules missing a weighted modality; permissive mode
    // renormalizes weights over the modalities available per pair instead.
    bool permissive_modalities = false;

    void validate() const {
        if (!(learning_rate > 0.0)) throw DataError("learning_rate must be positive");
        if (batch_size < 2) throw DataError("batch_size must be >= 2 (a similarity pool "
                                            "needs at least 2 members)");
        validate_fusion_weights(fusion);
        validate_latent_config(latent);
        if (!(tau1 > 0.0) || !(tau2 > 0.0))
            throw NonPositiveTemperatureError("tau1 and tau2 must be positive");
    }
};

struct AdamState {
    std::vector<Matrix> m;  // first moments, one per parameter tensor
    std::vector<Matrix> v;  // second moments
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Standard bias-corrected Adam over a fixed-order list of parameter tensors.
// Moment buffers are created lazily on the first step.
inline void adam_step(std::vector<Matrix*> params, const std::vector<const Matrix*>& grads,
                      AdamState& state, double lr) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads count differ");
    if (state.m.empty()) {
        for (const Matrix* p : params) {
            state.m.emplace_back(p->rows, p->cols);
            state.v.emplace_back(p->rows, p->cols);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state/params count differ");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        Matrix& p = *params[t];
        const Matrix& g = *grads[t];
        Matrix& m = state.m[t];
        Matrix& v = state.v[t];
        if (g.rows != p.rows || g.cols != p.cols || m.rows != p.rows || m.cols != p.cols)
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(t));
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            double gi = g.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace gmsl
