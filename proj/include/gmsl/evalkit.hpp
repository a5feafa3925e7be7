#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gmsl/diffcore.hpp"
#include "gmsl/errors.hpp"
#include "gmsl/fingerprint.hpp"
#include "gmsl/rng.hpp"

namespace gmsl {

// Exact ROC-AUC via Mann-Whitney rank sums, ties taking half credit. Computed
// from the complement when U < d/2 so that roc_auc(s) + roc_auc(-s) == 1 holds
// exactly in floating point.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw LengthMismatchError("roc_auc: scores/labels length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l != 0 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw DegenerateLabelsError("roc_auc needs at least one positive and one negative");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tie groups; rank sums are exact half-integers.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        i = j;
    }
    const double d = static_cast<double>(n_pos) * static_cast<double>(n_neg);
    const double u = rank_sum_pos - static_cast<double>(n_pos) *
                                        (static_cast<double>(n_pos) + 1.0) / 2.0;
    if (2.0 * u >= d) return u / d;
    return 1.0 - (d - u) / d;
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size())
        throw LengthMismatchError("rmse: length mismatch " + std::to_string(pred.size()) +
                                  " vs " + std::to_string(truth.size()));
    if (pred.empty()) throw LengthMismatchError("rmse: empty inputs");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double e = pred[i] - truth[i];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

enum class ProbeTask { Classification, Regression };

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct ProbeResult {
    ProbeTask task = ProbeTask::Classification;
    double metric = 0.0;  // test ROC-AUC or test RMSE
    std::uint64_t seed = 0;
    SplitRatios split;
    std::vector<double> head_weights;
    double head_bias = 0.0;
};

namespace detail {

// Gaussian elimination with partial pivoting; a tiny ridge is added when the
// system is near singular.
inline std::vector<double> solve_normal_equations(Matrix a, std::vector<double> b) {
    const std::size_t n = a.rows;
    for (int attempt = 0; attempt < 2; ++attempt) {
        Matrix m = a;
        std::vector<double> rhs = b;
        if (attempt == 1)
            for (std::size_t i = 0; i < n; ++i) m.at(i, i) += 1e-10;
        bool ok = true;
        std::vector<double> x(n, 0.0);
        for (std::size_t col = 0; col < n && ok; ++col) {
            std::size_t pivot = col;
            for (std::size_t r = col + 1; r < n; ++r)
                if (std::fabs(m.at(r, col)) > std::fabs(m.at(pivot, col))) pivot = r;
            if (std::fabs(m.at(pivot, col)) < 1e-12) {
                ok = false;
                break;
            }
            if (pivot != col) {
                for (std::size_t c = 0; c < n; ++c) std::swap(m.at(pivot, c), m.at(col, c));
                std::swap(rhs[pivot], rhs[col]);
            }
            for (std::size_t r = col + 1; r < n; ++r) {
                double f = m.at(r, col) / m.at(col, col);
                if (f == 0.0) continue;
                for (std::size_t c = col; c < n; ++c) m.at(r, c) -= f * m.at(col, c);
                rhs[r] -= f * rhs[col];
            }
        }
        if (!ok) continue;
        for (std::size_t ri = n; ri-- > 0;) {
            double acc = rhs[ri];
            for (std::size_t c = ri + 1; c < n; ++c) acc -= m.at(ri, c) * x[c];
            x[ri] = acc / m.at(ri, ri);
        }
        return x;
    }
    throw NumericalError("linear probe: normal equations are singular");
}

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const std::vector<std::vector<double>>& rows,
                            const std::vector<std::size_t>& idx) {
        const std::size_t d = rows[idx[0]].size();
        Standardizer s;
        s.mean.assign(d, 0.0);
        s.scale.assign(d, 0.0);
        for (std::size_t i : idx)
            for (std::size_t k = 0; k < d; ++k) s.mean[k] += rows[i][k];
        for (double& m : s.mean) m /= static_cast<double>(idx.size());
        for (std::size_t i : idx)
            for (std::size_t k = 0; k < d; ++k) {
                double c = rows[i][k] - s.mean[k];
                s.scale[k] += c * c;
            }
        for (double& v : s.scale) {
            v = std::sqrt(v / static_cast<double>(idx.size()));
            if (v < 1e-12) v = 1.0;
        }
        return s;
    }

    std::vector<double> apply(const std::vector<double>& row) const {
        std::vector<double> out(row.size());
        for (std::size_t k = 0; k < row.size(); ++k) out[k] = (row[k] - mean[k]) / scale[k];
        return out;
    }
};

}  // namespace detail

// Frozen-embedding linear probe. A single affine head is trained on the train
// split: logistic regression by gradient descent for classification (the
// iteration count is selected on the validation split), closed-form least
// squares for regression. The reported metric is on the test split.
inline ProbeResult linear_probe(const std::vector<std::vector<double>>& embeddings,
                                const std::vector<double>& labels, ProbeTask task,
                                SplitRatios split, std::uint64_t seed) {
    const std::size_t n = embeddings.size();
    if (labels.size() != n) throw LengthMismatchError("linear_probe: labels/embeddings size");
    if (n < 10) throw InsufficientDataError("linear_probe needs at least 10 labeled molecules");
    if (std::fabs(split.train + split.val + split.test - 1.0) > 1e-9 || split.train <= 0 ||
        split.val <= 0 || split.test <= 0)
        throw DataError("linear_probe: split ratios must be positive and sum to 1");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t n_train = static_cast<std::size_t>(split.train * static_cast<double>(n));
    const std::size_t n_val = static_cast<std::size_t>(split.val * static_cast<double>(n));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
        throw InsufficientDataError("linear_probe: split leaves an empty subset");
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                                  order.end());

    const std::size_t d = embeddings[0].size();
    auto std_fit = detail::Standardizer::fit(embeddings, train);
    auto features = [&](std::size_t i) { return std_fit.apply(embeddings[i]); };

    ProbeResult result;
    result.task = task;
    result.seed = seed;
    result.split = split;

    if (task == ProbeTask::Regression) {
        // Normal equations over [x || 1].
        Matrix a(d + 1, d + 1);
        std::vector<double> b(d + 1, 0.0);
        for (std::size_t i : train) {
            std::vector<double> x = features(i);
            x.push_back(1.0);
            for (std::size_t r = 0; r <= d; ++r) {
                for (std::size_t c = 0; c <= d; ++c) a.at(r, c) += x[r] * x[c];
                b[r] += x[r] * labels[i];
            }
        }
        std::vector<double> w = detail::solve_normal_equations(std::move(a), std::move(b));
        result.head_bias = w[d];
        w.pop_back();
        result.head_weights = w;
        std::vector<double> pred, truth;
        for (std::size_t i : test) {
            std::vector<double> x = features(i);
            double y = result.head_bias;
            for (std::size_t k = 0; k < d; ++k) y += w[k] * x[k];
            pred.push_back(y);
            truth.push_back(labels[i]);
        }
        result.metric = rmse(pred, truth);
        return result;
    }

    // Classification: logistic regression, full-batch gradient descent.
    auto has_both = [&](const std::vector<std::size_t>& idx) {
        bool pos = false, neg = false;
        for (std::size_t i : idx) (labels[i] > 0.5 ? pos : neg) = true;
        return pos && neg;
    };
    if (!has_both(train) || !has_both(val) || !has_both(test))
        throw DegenerateLabelsError("linear_probe: a split lacks one of the classes");

    std::vector<std::vector<double>> xs_train;
    for (std::size_t i : train) xs_train.push_back(features(i));
    std::vector<double> w(d, 0.0);
    double bias = 0.0;
    std::vector<double> best_w = w;
    double best_bias = bias;
    double best_val = -1.0;

    auto scores_of = [&](const std::vector<std::size_t>& idx, const std::vector<double>& wv,
                         double bv) {
        std::vector<double> s;
        s.reserve(idx.size());
        for (std::size_t i : idx) {
            std::vector<double> x = features(i);
            double z = bv;
            for (std::size_t k = 0; k < d; ++k) z += wv[k] * x[k];
            s.push_back(z);
        }
        return s;
    };
    std::vector<int> val_labels, test_labels;
    for (std::size_t i : val) val_labels.push_back(labels[i] > 0.5 ? 1 : 0);
    for (std::size_t i : test) test_labels.push_back(labels[i] > 0.5 ? 1 : 0);

    const double lr = 0.5;
    const std::size_t max_iters = 1500, eval_every = 25;
    for (std::size_t it = 1; it <= max_iters; ++it) {
        std::vector<double> gw(d, 0.0);
        double gb = 0.0;
        for (std::size_t r = 0; r < train.size(); ++r) {
            const std::vector<double>& x = xs_train[r];
            double z = bias;
            for (std::size_t k = 0; k < d; ++k) z += w[k] * x[k];
            double p = 1.0 / (1.0 + std::exp(-z));
            double err = p - (labels[train[r]] > 0.5 ? 1.0 : 0.0);
            for (std::size_t k = 0; k < d; ++k) gw[k] += err * x[k];
            gb += err;
        }
        const double inv = 1.0 / static_cast<double>(train.size());
        for (std::size_t k = 0; k < d; ++k) w[k] -= lr * gw[k] * inv;
        bias -= lr * gb * inv;
        if (it % eval_every == 0) {
            double auc = roc_auc(scores_of(val, w, bias), val_labels);
            if (auc > best_val) {
                best_val = auc;
                best_w = w;
                best_bias = bias;
            }
        }
    }
    result.head_weights = best_w;
    result.head_bias = best_bias;
    result.metric = roc_auc(scores_of(test, best_w, best_bias), test_labels);
    return result;
}

struct RetrievalReport {
    double mean_nn_tanimoto = 0.0;
    double mean_random_tanimoto = 0.0;
};

// Embedding-quality probe: for every molecule, compare the fingerprint
// Tanimoto of its latent-cosine nearest neighbor with that of a uniformly
// random non-self molecule.
inline RetrievalReport retrieval_check(const std::vector<std::vector<double>>& embeddings,
                                       const std::vector<Fingerprint>& fingerprints,
                                       std::uint64_t seed = 0) {
    const std::size_t n = embeddings.size();
    if (fingerprints.size() != n)
        throw LengthMismatchError("retrieval_check: embeddings/fingerprints size mismatch");
    if (n < 20)
        throw InsufficientDataError("retrieval_check needs at least 20 molecules");
    const std::size_t d = embeddings[0].size();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (embeddings[i].size() != d)
            throw DimensionMismatchError("retrieval_check: ragged embeddings");
        double s = 0.0;
        for (double v : embeddings[i]) s += v * v;
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) throw ZeroNormError("retrieval_check: zero-norm embedding");
    }

    Rng rng(seed);
    RetrievalReport report;
    for (std::size_t i = 0; i < n; ++i) {
        double best = -2.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += embeddings[i][k] * embeddings[j][k];
            double c = dot / (norms[i] * norms[j]);
            if (c > best) {
                best = c;
                best_j = j;
            }
        }
        std::size_t r = rng.below(n - 1);
        if (r >= i) ++r;
        report.mean_nn_tanimoto += tanimoto(fingerprints[i], fingerprints[best_j]);
        report.mean_random_tanimoto += tanimoto(fingerprints[i], fingerprints[r]);
    }
    report.mean_nn_tanimoto /= static_cast<double>(n);
    report.mean_random_tanimoto /= static_cast<double>(n);
    return report;
}

}  // namespace gmsl
