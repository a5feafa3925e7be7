#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "gmsl/dataio.hpp"
#include "gmsl/diffcore.hpp"
#include "gmsl/encoder.hpp"
#include "gmsl/errors.hpp"
#include "gmsl/fingerprint.hpp"
#include "gmsl/loss.hpp"
#include "gmsl/optim.hpp"
#include "gmsl/rng.hpp"
#include "gmsl/similarity.hpp"

namespace gmsl {

// External modality data consumed by pre-training. Fingerprints are computed
// internally; the cosine modalities arrive as precomputed embedding tables.
struct ModalityInputs {
    const EmbeddingTable* smiles = nullptr;
    const EmbeddingTable* nmr = nullptr;
    const EmbeddingTable* image = nullptr;
    const PeakTable* peaks = nullptr;
    std::uint32_t fp_radius = 2;
    std::uint32_t fp_bits = 2048;
};

namespace detail {

struct BatchModalityData {
    std::vector<TargetSimilarityMatrix> mats;
    std::vector<double> weights;
};

// Graph-level target for one batch. Strict mode requires every weighted
// modality for every batch molecule. Permissive mode softmaxes each modality
// over the sub-pool that has it, fuses per pair over the modalities available
// to both members, and renormalizes rows.
inline TargetSimilarityMatrix assemble_graph_targets(
    const MoleculePool& pool, const std::vector<std::size_t>& batch,
    const std::vector<Fingerprint>& fps, const ModalityInputs& inputs,
    const FusionWeights& weights, bool permissive) {
    std::vector<std::string> ids;
    ids.reserve(batch.size());
    for (std::size_t idx : batch) ids.push_back(pool.molecules[idx].id);

    struct Source {
        double weight;
        Modality modality;
        const EmbeddingTable* table;  // null for fingerprint
    };
    std::vector<Source> sources;
    if (weights.smiles > 0) sources.push_back({weights.smiles, Modality::Smiles, inputs.smiles});
    if (weights.nmr > 0) sources.push_back({weights.nmr, Modality::Nmr, inputs.nmr});
    if (weights.image > 0) sources.push_back({weights.image, Modality::Image, inputs.image});
    if (weights.fingerprint > 0)
        sources.push_back({weights.fingerprint, Modality::Fingerprint, nullptr});

    const std::size_t n = batch.size();

    if (!permissive) {
        std::vector<TargetSimilarityMatrix> mats;
        std::vector<double> ws;
        for (const Source& src : sources) {
            if (src.modality == Modality::Fingerprint) {
                std::vector<Fingerprint> batch_fps;
                for (std::size_t idx : batch) batch_fps.push_back(fps[idx]);
                mats.push_back(pair_weight(fingerprint_self_similarity(batch_fps, ids)));
            } else {
                if (!src.table)
                    throw MissingModalityError("fusion weights require " +
                                               modality_name(src.modality) +
                                               " embeddings, but none were provided");
                std::vector<std::vector<double>> vecs;
                for (std::size_t idx : batch) {
                    const auto* v = src.table->find(pool.molecules[idx].id);
                    if (!v)
                        throw MissingModalityError("molecule '" + pool.molecules[idx].id +
                                                   "' has no " + modality_name(src.modality) +
                                                   " embedding");
                    vecs.push_back(*v);
                }
                mats.push_back(pair_weight(cosine_self_similarity(vecs, ids, src.modality)));
            }
            ws.push_back(src.weight);
        }
        return fuse(mats, ws);
    }

    // Permissive path.
    std::vector<std::vector<int>> member(sources.size());    // sub-pool position or -1
    std::vector<Matrix> sub_targets(sources.size());
    for (std::size_t s = 0; s < sources.size(); ++s) {
        const Source& src = sources[s];
        member[s].assign(n, -1);
        std::vector<std::size_t> sub;
        if (src.modality == Modality::Fingerprint) {
            for (std::size_t k = 0; k < n; ++k) {
                member[s][k] = static_cast<int>(sub.size());
                sub.push_back(batch[k]);
            }
        } else {
            if (!src.table) continue;
            for (std::size_t k = 0; k < n; ++k)
                if (src.table->find(pool.molecules[batch[k]].id)) {
                    member[s][k] = static_cast<int>(sub.size());
                    sub.push_back(batch[k]);
                }
        }
        if (sub.size() < 2) {
            member[s].assign(n, -1);
            continue;
        }
        std::vector<std::string> sub_ids;
        for (std::size_t idx : sub) sub_ids.push_back(pool.molecules[idx].id);
        if (src.modality == Modality::Fingerprint) {
            std::vector<Fingerprint> sub_fps;
            for (std::size_t idx : sub) sub_fps.push_back(fps[idx]);
            sub_targets[s] = pair_weight(fingerprint_self_similarity(sub_fps, sub_ids)).values;
        } else {
            std::vector<std::vector<double>> vecs;
            for (std::size_t idx : sub) vecs.push_back(*src.table->find(pool.molecules[idx].id));
            sub_targets[s] =
                pair_weight(cosine_self_similarity(vecs, sub_ids, src.modality)).values;
        }
    }

    TargetSimilarityMatrix out;
    out.ids = ids;
    out.values = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0, wsum = 0.0;
            for (std::size_t s = 0; s < sources.size(); ++s) {
                int mi = member[s][i], mj = member[s][j];
                if (mi < 0 || mj < 0) continue;
                acc += sources[s].weight * sub_targets[s].at(static_cast<std::size_t>(mi),
                                                             static_cast<std::size_t>(mj));
                wsum += sources[s].weight;
            }
            if (wsum == 0.0)
                throw MissingModalityError("no modality available for pair ('" + ids[i] +
                                           "', '" + ids[j] + "') even in permissive mode");
            out.values.at(i, j) = acc / wsum;
        }
        double row_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) row_sum += out.values.at(i, j);
        for (std::size_t j = 0; j < n; ++j) out.values.at(i, j) /= row_sum;
    }
    return out;
}

struct NodePoolEntry {
    std::size_t batch_pos;  // index into the batch
    int atom;
    double ppm;
    std::string id;  // "<molecule id>#<atom>"
};

inline std::vector<NodePoolEntry> collect_node_pool(const MoleculePool& pool,
                                                    const std::vector<std::size_t>& batch,
                                                    const PeakTable& peaks) {
    std::vector<NodePoolEntry> entries;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const MoleculeRecord& rec = pool.molecules[batch[k]];
        const std::vector<Peak>* mol_peaks = peaks.find(rec.id);
        if (!mol_peaks) continue;
        for (const Peak& p : *mol_peaks)
            entries.push_back({k, p.atom, p.ppm, rec.id + "#" + std::to_string(p.atom)});
    }
    return entries;
}

}  // namespace detail

// Pre-training loop: per epoch, molecules are shuffled with a seeded
// per-epoch RNG and chunked into batches; each batch builds the target
// matrix, encodes the pool, evaluates the level-appropriate loss and takes one
// Adam step. A trailing batch with fewer than 2 molecules is dropped. Resuming
// from a checkpoint replays the exact remaining trajectory because the epoch
// shuffle derives from (seed, epoch), not from serial RNG state.
inline ModelCheckpoint pretrain(const MoleculePool& pool, const ModalityInputs& inputs,
                                const TrainConfig& cfg, const EncoderConfig& encoder_cfg,
                                const std::optional<ModelCheckpoint>& resume = std::nullopt,
                                std::ostream* log = nullptr) {
    cfg.validate();
    if (pool.size() < 2) throw DataError("pretrain: need at least 2 molecules");

    ModelCheckpoint ckpt;
    if (resume) {
        ckpt = *resume;
        if (ckpt.encoder_config.hidden_dim != encoder_cfg.hidden_dim ||
            ckpt.encoder_config.depth != encoder_cfg.depth ||
            ckpt.encoder_config.readout != encoder_cfg.readout)
            throw DataError("pretrain: resume checkpoint encoder config does not match");
        ckpt.train_config = cfg;
    } else {
        ckpt.encoder_config = encoder_cfg;
        ckpt.params = init_params(encoder_cfg);
        ckpt.train_config = cfg;
        ckpt.completed_epochs = 0;
    }

    const bool need_graph = cfg.level == TrainLevel::Graph || cfg.level == TrainLevel::Bilevel;
    const bool need_node = cfg.level == TrainLevel::Node || cfg.level == TrainLevel::Bilevel;
    if (need_node && !inputs.peaks)
        throw MissingModalityError("node-level training requires a peak table");

    // Per-molecule precomputation shared across epochs.
    std::vector<FeaturizedGraph> feats;
    feats.reserve(pool.size());
    for (const MoleculeRecord& rec : pool.molecules) feats.push_back(featurize(rec.graph));

    std::vector<Fingerprint> fps;
    if (need_graph && cfg.fusion.fingerprint > 0.0) {
        fps.reserve(pool.size());
        for (const MoleculeRecord& rec : pool.molecules)
            fps.push_back(ecfp(rec.graph, inputs.fp_radius, inputs.fp_bits));
    } else {
        fps.resize(pool.size());
    }

    for (std::uint32_t epoch = ckpt.completed_epochs; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(pool.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng epoch_rng(mix_seed(cfg.seed, epoch));
        epoch_rng.shuffle(order);

        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (end - start < 2) break;  // degenerate trailing pool
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));

            Tape tape;
            EncoderTapeParams tp = lift_params(tape, ckpt.params, /*requires_grad=*/true);
            std::vector<GraphEncoding> encodings;
            encodings.reserve(batch.size());
            for (std::size_t idx : batch)
                encodings.push_back(encode(tape, feats[idx], tp, ckpt.encoder_config));

            std::optional<Tensor> loss;
            if (need_graph) {
                TargetSimilarityMatrix targets = detail::assemble_graph_targets(
                    pool, batch, fps, inputs, cfg.fusion, cfg.permissive_modalities);
                std::vector<Tensor> rows;
                rows.reserve(batch.size());
                for (const GraphEncoding& enc : encodings) rows.push_back(enc.graph_embedding);
                Tensor embeddings = stack_rows(rows);
                Tensor latent = latent_similarity_matrix(embeddings, cfg.latent);
                loss = graph_loss(tape, targets, latent);
            }
            if (need_node) {
                auto node_pool = detail::collect_node_pool(pool, batch, *inputs.peaks);
                if (node_pool.empty())
                    throw EmptyNodePoolError("batch starting at molecule " +
                                             std::to_string(start) +
                                             " has no annotated carbons");
                std::vector<double> ppms;
                std::vector<std::string> node_ids;
                std::vector<Tensor> rows;
                for (const auto& entry : node_pool) {
                    ppms.push_back(entry.ppm);
                    node_ids.push_back(entry.id);
                    rows.push_back(gather_sum(encodings[entry.batch_pos].node_embeddings,
                                              IndexLists{{entry.atom}}));
                }
                TargetSimilarityMatrix targets =
                    node_target_matrix(ppms, node_ids, cfg.tau1, cfg.tau2);
                Tensor embeddings = stack_rows(rows);
                Tensor latent = latent_similarity_matrix(embeddings, cfg.latent);
                Tensor ln = node_loss(tape, targets, latent);
                loss = loss ? bilevel_loss(*loss, ln) : ln;
            }

            tape.backward(*loss);
            Matrix g_in = tape.matrix_grad(tp.w_in);
            Matrix g_msg = tape.matrix_grad(tp.w_msg);
            Matrix g_node = tape.matrix_grad(tp.w_node);
            double sq = 0.0;
            for (const Matrix* g : {&g_in, &g_msg, &g_node})
                for (double v : g->data) sq += v * v;

            adam_step({&ckpt.params.w_in, &ckpt.params.w_msg, &ckpt.params.w_node},
                      {&g_in, &g_msg, &g_node}, ckpt.adam, cfg.learning_rate);

            ckpt.loss_history.push_back(tape.scalar_value(*loss));
            ckpt.grad_norm_history.push_back(std::sqrt(sq));
            if (log)
                *log << "epoch " << epoch << " batch " << batch_index << " loss "
                     << ckpt.loss_history.back() << " grad_norm "
                     << ckpt.grad_norm_history.back() << "\n";
            ++batch_index;
        }
        ckpt.completed_epochs = epoch + 1;
    }
    return ckpt;
}

// Loss history in the CSV layout: epoch, batch, loss, grad_norm.
inline std::string history_csv(const ModelCheckpoint& ckpt) {
    std::string out = "epoch,batch,loss,grad_norm\n";
    std::size_t per_epoch =
        ckpt.completed_epochs == 0 ? 0 : ckpt.loss_history.size() / ckpt.completed_epochs;
    char buf[64];
    for (std::size_t i = 0; i < ckpt.loss_history.size(); ++i) {
        std::size_t epoch = per_epoch == 0 ? 0 : i / per_epoch;
        std::size_t batch = per_epoch == 0 ? i : i % per_epoch;
        out += std::to_string(epoch) + "," + std::to_string(batch) + ",";
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", ckpt.loss_history[i],
                      ckpt.grad_norm_history[i]);
        out += buf;
    }
    return out;
}

// --- theorem verification harness ------------------------------------------------

struct TheoremOptions {
    std::size_t max_steps = 50000;
    double grad_tol = 1e-10;
    // Adam learning rate with geometric decay. Constant-rate Adam stalls in an
    // lr-sized oscillation band around the optimum and cannot reach a 1e-10
    // gradient norm; the decaying rate shrinks that band to nothing.
    double lr0 = 0.25;
    double lr_decay = 0.999;
    bool record_trace = false;
};

struct OptimizeResult {
    Matrix latent;    // converged free latent matrix D
    Matrix softmax;   // row softmax of D
    double max_deviation = 0.0;
    double final_grad_norm = 0.0;
    std::size_t steps = 0;
    std::vector<double> deviation_trace;
};

namespace detail {

inline Matrix row_softmax_values(const Matrix& d) {
    Matrix s(d.rows, d.cols);
    for (std::size_t i = 0; i < d.rows; ++i) {
        double mx = d.at(i, 0);
        for (std::size_t j = 1; j < d.cols; ++j) mx = std::max(mx, d.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < d.cols; ++j) sum += std::exp(d.at(i, j) - mx);
        for (std::size_t j = 0; j < d.cols; ++j) s.at(i, j) = std::exp(d.at(i, j) - mx) / sum;
    }
    return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double mx = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        mx = std::max(mx, std::fabs(a.data[i] - b.data[i]));
    return mx;
}

}  // namespace detail

// Minimizes the soft cross-entropy over a free latent matrix D (dot mode,
// unconstrained) against a fixed row-stochastic target, by Adam, until the
// gradient norm drops below grad_tol. Throws NonConvergenceError at the step
// cap.
inline OptimizeResult optimize_to_target(const TargetSimilarityMatrix& target,
                                         const TheoremOptions& opts = {}) {
    const std::size_t n = target.size();
    if (n < 2) throw DataError("optimize_to_target: pool size must be >= 2");
    check_row_stochastic(target.values, 1e-9, "optimize_to_target");

    OptimizeResult res;
    res.latent = Matrix(n, n, 0.0);
    AdamState adam;
    double lr = opts.lr0;
    for (std::size_t step = 0; step < opts.max_steps; ++step) {
        Tape tape;
        Tensor d = tape.variable(res.latent);
        Tensor loss = graph_loss(tape, target, d);
        tape.backward(loss);
        Matrix grad = tape.matrix_grad(d);
        double sq = 0.0;
        for (double v : grad.data) sq += v * v;
        res.final_grad_norm = std::sqrt(sq);
        res.steps = step;
        if (opts.record_trace) {
            res.deviation_trace.push_back(
                detail::max_abs_diff(detail::row_softmax_values(res.latent), target.values));
        }
        if (res.final_grad_norm < opts.grad_tol) break;
        adam_step({&res.latent}, {&grad}, adam, lr);
        lr *= opts.lr_decay;
        if (step + 1 == opts.max_steps) {
            double dev =
                detail::max_abs_diff(detail::row_softmax_values(res.latent), target.values);
            throw NonConvergenceError(
                "theorem optimization did not reach gradient norm " +
                    std::to_string(opts.grad_tol) + " in " + std::to_string(opts.max_steps) +
                    " steps (achieved deviation " + std::to_string(dev) + ")",
                dev, opts.max_steps);
        }
    }
    res.softmax = detail::row_softmax_values(res.latent);
    res.max_deviation = detail::max_abs_diff(res.softmax, target.values);
    return res;
}

struct TheoremReport {
    std::size_t n = 0;
    std::size_t trials = 0;
    double max_softmax_deviation = 0.0;
    std::size_t ordering_violations = 0;
    std::size_t total_steps = 0;
    std::vector<double> trial_deviations;
    std::vector<double> deviation_trace;  // last trial, when recorded
};

// Counts within-row pairs where the target says t_ij > t_ij' but the latent
// has d_ij <= d_ij'.
inline std::size_t count_ordering_violations(const Matrix& target, const Matrix& latent) {
    std::size_t violations = 0;
    for (std::size_t i = 0; i < target.rows; ++i)
        for (std::size_t j = 0; j < target.cols; ++j)
            for (std::size_t k = 0; k < target.cols; ++k) {
                if (target.at(i, j) > target.at(i, k) && !(latent.at(i, j) > latent.at(i, k)))
                    ++violations;
            }
    return violations;
}

// Numerical check of the convergent-similarity theorem: for random strictly
// positive row-stochastic targets, free-form optimization must reproduce the
// target through the row softmax and preserve within-row orderings.
inline TheoremReport verify_theorem(std::size_t n, std::size_t trials, std::uint64_t seed,
                                    const TheoremOptions& opts = {}) {
    if (n < 2) throw DataError("verify_theorem: n must be >= 2");
    if (trials < 1) throw DataError("verify_theorem: trials must be >= 1");
    Rng rng(seed);
    TheoremReport report;
    report.n = n;
    report.trials = trials;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        TargetSimilarityMatrix target;
        target.values = Matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) target.ids.push_back(std::to_string(i));
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                double u = 0.05 + rng.next_double();
                target.values.at(i, j) = u;
                sum += u;
            }
            for (std::size_t j = 0; j < n; ++j) target.values.at(i, j) /= sum;
        }
        OptimizeResult res = optimize_to_target(target, opts);
        report.max_softmax_deviation = std::max(report.max_softmax_deviation, res.max_deviation);
        report.ordering_violations += count_ordering_violations(target.values, res.latent);
        report.total_steps += res.steps;
        report.trial_deviations.push_back(res.max_deviation);
        if (opts.record_trace && trial + 1 == trials)
            report.deviation_trace = std::move(res.deviation_trace);
    }
    return report;
}

}  // namespace gmsl
