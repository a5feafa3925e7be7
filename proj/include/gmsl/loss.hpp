#pragma once

#include <cmath>
#include <string>

#include "gmsl/diffcore.hpp"
#include "gmsl/errors.hpp"
#include "gmsl/similarity.hpp"

namespace gmsl {

enum class LatentMode : std::uint8_t { Dot = 0, ScaledCosine = 1 };

// Dot mode is unbounded (softmax(d) = t is exactly reachable, which the
// theorem harness needs); scaled cosine is bounded and scale-stable, which
// suits encoder training.
struct LatentSimilarityConfig {
    LatentMode mode = LatentMode::ScaledCosine;
    double temperature = 0.1;
};

inline void validate_latent_config(const LatentSimilarityConfig& cfg) {
    if (cfg.mode == LatentMode::ScaledCosine && !(cfg.temperature > 0.0))
        throw NonPositiveTemperatureError("latent similarity temperature must be positive");
}

// Differentiable similarity between two embeddings (width-d vectors on a tape).
inline Tensor latent_similarity(const Tensor& ei, const Tensor& ej,
                                const LatentSimilarityConfig& cfg) {
    validate_latent_config(cfg);
    if (ei.shape.cols != ej.shape.cols || ei.shape.rows != 1 || ej.shape.rows != 1)
        throw ShapeError("latent_similarity expects two width-matched vectors");
    if (cfg.mode == LatentMode::Dot) return sum_all(mul(ei, ej));
    return sum_all(scalar_mul(cosine_rows(ei, ej), 1.0 / cfg.temperature));
}

// Full pairwise latent similarity matrix over the rows of an embedding matrix.
inline Tensor latent_similarity_matrix(const Tensor& embeddings,
                                       const LatentSimilarityConfig& cfg) {
    validate_latent_config(cfg);
    if (cfg.mode == LatentMode::Dot) return matmul(embeddings, transpose(embeddings));
    return scalar_mul(cosine_rows(embeddings, embeddings), 1.0 / cfg.temperature);
}

namespace detail {

inline Tensor soft_cross_entropy(Tape& tape, const Matrix& targets, const Tensor& latent,
                                 const char* what) {
    const std::size_t n = targets.rows;
    if (targets.cols != n) throw ShapeError(std::string(what) + ": target matrix not square");
    if (latent.shape.rows != n || latent.shape.cols != n)
        throw ShapeError(std::string(what) + ": latent matrix is " + latent.shape.str() +
                         ", target is " + std::to_string(n) + "x" + std::to_string(n));
    for (double v : targets.data)
        if (!(v >= 0.0) || !std::isfinite(v))
            throw DataError(std::string(what) + ": target entries must be non-negative finite");
    check_row_stochastic(targets, 1e-9, what);

    Tensor t = tape.constant(targets);
    Tensor weighted = mul(t, log_row_softmax(latent));
    return scalar_mul(sum_all(weighted), -1.0 / static_cast<double>(n));
}

}  // namespace detail

// L = -(1/n) sum_i sum_j T[i][j] log softmax_row(D)[i][j]; the gradient w.r.t.
// D is (softmax_row(D) - T)/n. Mean over anchors of the per-anchor soft
// cross-entropy.
inline Tensor graph_loss(Tape& tape, const TargetSimilarityMatrix& targets,
                         const Tensor& latent) {
    return detail::soft_cross_entropy(tape, targets.values, latent, "graph_loss");
}

// Same contract as graph_loss with n = |node pool|.
inline Tensor node_loss(Tape& tape, const TargetSimilarityMatrix& targets,
                        const Tensor& latent) {
    return detail::soft_cross_entropy(tape, targets.values, latent, "node_loss");
}

inline Tensor bilevel_loss(const Tensor& graph, const Tensor& node) {
    if (graph.shape.size() != 1 || node.shape.size() != 1)
        throw ShapeError("bilevel_loss expects two scalars");
    return add(graph, node);
}

// Reference gradient of the soft cross-entropy w.r.t. the latent matrix:
// (softmax_row(D) - T) / n, computed without the tape. Used as the algebraic
// second route against the reverse-mode pass.
inline Matrix soft_cross_entropy_grad(const Matrix& targets, const Matrix& latent) {
    const std::size_t n = targets.rows;
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = latent.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, latent.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += std::exp(latent.at(i, j) - mx);
        for (std::size_t j = 0; j < n; ++j) {
            double s = std::exp(latent.at(i, j) - mx) / sum;
            g.at(i, j) = (s - targets.at(i, j)) / static_cast<double>(n);
        }
    }
    return g;
}

// Mean Shannon row entropy of a row-stochastic matrix, in nats. This is the
// attainable minimum of the soft cross-entropy (Gibbs' inequality).
inline double mean_row_entropy(const Matrix& t) {
    double total = 0.0;
    for (std::size_t i = 0; i < t.rows; ++i)
        for (std::size_t j = 0; j < t.cols; ++j) {
            double v = t.at(i, j);
            if (v > 0.0) total -= v * std::log(v);
        }
    return total / static_cast<double>(t.rows);
}

}  // namespace gmsl
