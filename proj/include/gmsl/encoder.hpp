#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gmsl/diffcore.hpp"
#include "gmsl/errors.hpp"
#include "gmsl/molgraph.hpp"
#include "gmsl/rng.hpp"

namespace gmsl {

enum class Readout : std::uint8_t { Sum = 0, Mean = 1 };

struct EncoderConfig {
    std::size_t hidden_dim = 300;
    std::size_t depth = 3;  // message passing steps T
    Readout readout = Readout::Mean;
    std::uint64_t seed = 0;
};

struct EncoderParams {
    Matrix w_in;    // (F_A + F_B) x hidden
    Matrix w_msg;   // hidden x hidden
    Matrix w_node;  // (F_A + hidden) x hidden
};

// Xavier-uniform init, filled in a fixed order so a seed pins every entry.
inline EncoderParams init_params(const EncoderConfig& cfg) {
    if (cfg.hidden_dim < 1 || cfg.depth < 1)
        throw DataError("encoder config: hidden_dim and depth must be >= 1");
    Rng rng(cfg.seed);
    auto fill = [&](std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (double& v : m.data) v = rng.uniform(-a, a);
        return m;
    };
    EncoderParams p;
    p.w_in = fill(kAtomFeatureDim + kBondFeatureDim, cfg.hidden_dim);
    p.w_msg = fill(cfg.hidden_dim, cfg.hidden_dim);
    p.w_node = fill(kAtomFeatureDim + cfg.hidden_dim, cfg.hidden_dim);
    return p;
}

// Encoder weights lifted onto a tape. One set is shared by every molecule
// encoded on that tape, so a batch backward accumulates into a single set of
// gradients.
struct EncoderTapeParams {
    Tensor w_in;
    Tensor w_msg;
    Tensor w_node;
};

inline EncoderTapeParams lift_params(Tape& tape, const EncoderParams& p,
                                     bool requires_grad = true) {
    EncoderTapeParams tp;
    tp.w_in = tape.leaf(Shape::mat(p.w_in.rows, p.w_in.cols), p.w_in.data, requires_grad);
    tp.w_msg = tape.leaf(Shape::mat(p.w_msg.rows, p.w_msg.cols), p.w_msg.data, requires_grad);
    tp.w_node =
        tape.leaf(Shape::mat(p.w_node.rows, p.w_node.cols), p.w_node.data, requires_grad);
    return tp;
}

struct GraphEncoding {
    Tensor node_embeddings;  // |atoms| x hidden
    Tensor graph_embedding;  // width-hidden vector
    // Edge-state tensors per message passing step (h^0 .. h^(T-1)), plus the
    // aggregation lists, kept for structural assertions in tests.
    std::vector<Tensor> edge_states;
    std::shared_ptr<const IndexLists> message_sources;
};

// Directed-edge message passing:
//   h^0_vw      = relu(W_in [x_v || e_vw])
//   h^t_vw      = relu(h^0_vw + (sum_{k in N(v) \ w} h^(t-1)_kv) W_msg)
//   node h_v    = relu([x_v || sum_{k in N(v)} h^(T-1)_kv] W_node)
//   graph       = readout over node embeddings
// The reverse edge w->v is excluded from every aggregation into v->w.
inline GraphEncoding encode(Tape& tape, const FeaturizedGraph& g, const EncoderTapeParams& p,
                            const EncoderConfig& cfg) {
    const std::size_t n_atoms = g.n_atoms;
    const std::size_t n_edges = g.directed_edges.size();
    const std::size_t hidden = cfg.hidden_dim;
    if (p.w_in.shape.rows != kAtomFeatureDim + kBondFeatureDim ||
        p.w_in.shape.cols != hidden)
        throw ShapeError("encode: W_in shape does not match featurization scheme");
    if (n_atoms == 0) throw ShapeError("encode: empty graph");

    GraphEncoding out;

    // Aggregation lists. For edge e = (v -> w): incoming edges of v minus the
    // reverse edge w -> v (totter exclusion).
    auto message_sources = std::make_shared<IndexLists>();
    message_sources->resize(n_edges);
    for (std::size_t e = 0; e < n_edges; ++e) {
        const DirectedEdge& de = g.directed_edges[e];
        for (int in_edge : g.incoming[static_cast<std::size_t>(de.src)])
            if (in_edge != de.reverse) (*message_sources)[e].push_back(in_edge);
    }
    out.message_sources = message_sources;

    Tensor node_input_msg;  // |atoms| x hidden, sum of final edge states into each atom
    if (n_edges > 0) {
        // Constant per-edge input rows [x_src || e_bond].
        std::vector<double> edge_in(n_edges * (kAtomFeatureDim + kBondFeatureDim));
        for (std::size_t e = 0; e < n_edges; ++e) {
            const DirectedEdge& de = g.directed_edges[e];
            double* row = edge_in.data() + e * (kAtomFeatureDim + kBondFeatureDim);
            const double* atom_row =
                g.atom_features.data() + static_cast<std::size_t>(de.src) * kAtomFeatureDim;
            const double* bond_row =
                g.bond_features.data() + static_cast<std::size_t>(de.bond) * kBondFeatureDim;
            std::copy(atom_row, atom_row + kAtomFeatureDim, row);
            std::copy(bond_row, bond_row + kBondFeatureDim, row + kAtomFeatureDim);
        }
        Tensor edge_inputs = tape.constant(
            Shape::mat(n_edges, kAtomFeatureDim + kBondFeatureDim), std::move(edge_in));

        Tensor h = relu(matmul(edge_inputs, p.w_in));
        Tensor h0 = h;
        out.edge_states.push_back(h);
        for (std::size_t t = 1; t < cfg.depth; ++t) {
            Tensor agg = gather_sum(h, message_sources);
            h = relu(add(h0, matmul(agg, p.w_msg)));
            out.edge_states.push_back(h);
        }

        auto incoming = std::make_shared<IndexLists>(g.incoming);
        node_input_msg = gather_sum(h, incoming);
    } else {
        node_input_msg = tape.constant(Shape::mat(n_atoms, hidden),
                                       std::vector<double>(n_atoms * hidden, 0.0));
    }

    Tensor atom_feats = tape.constant(Shape::mat(n_atoms, kAtomFeatureDim), g.atom_features);
    Tensor node_in = concat(atom_feats, node_input_msg, 1);
    out.node_embeddings = relu(matmul(node_in, p.w_node));

    Tensor pooled = sum_rows(out.node_embeddings);
    if (cfg.readout == Readout::Mean)
        pooled = scalar_mul(pooled, 1.0 / static_cast<double>(n_atoms));
    out.graph_embedding = pooled;
    return out;
}

// Convenience forward pass on a throwaway tape; returns plain values.
struct EncodedValues {
    Matrix node_embeddings;
    std::vector<double> graph_embedding;
};

inline EncodedValues encode_values(const FeaturizedGraph& g, const EncoderParams& params,
                                   const EncoderConfig& cfg) {
    Tape tape;
    EncoderTapeParams tp = lift_params(tape, params, /*requires_grad=*/false);
    GraphEncoding enc = encode(tape, g, tp, cfg);
    EncodedValues out;
    out.node_embeddings = tape.matrix_value(enc.node_embeddings);
    out.graph_embedding = tape.value(enc.graph_embedding);
    return out;
}

}  // namespace gmsl
