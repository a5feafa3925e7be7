#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "gmsl/diffcore.hpp"
#include "gmsl/errors.hpp"
#include "gmsl/fingerprint.hpp"
#include "gmsl/io_util.hpp"

namespace gmsl {

enum class Modality : std::uint8_t {
    Smiles = 0,
    Nmr = 1,
    Image = 2,
    Fingerprint = 3,
    Ppm = 4,
};

// Tag value used in the binary matrix format for fused / target matrices that
// no longer belong to a single modality.
inline constexpr std::uint8_t kFusedMatrixTag = 5;

inline std::string modality_name(Modality m) {
    switch (m) {
        case Modality::Smiles: return "smiles";
        case Modality::Nmr: return "nmr";
        case Modality::Image: return "image";
        case Modality::Fingerprint: return "fingerprint";
        case Modality::Ppm: return "ppm";
    }
    return "?";
}

// Symmetric matrix of pairwise self-similarities in one modality space.
struct SelfSimilarityMatrix {
    Matrix values;
    Modality modality = Modality::Smiles;
    std::vector<std::string> ids;

    std::size_t size() const { return values.rows; }
};

// Row-stochastic generalized multi-similarity matrix: every row is a softmax
// over one anchor's self-similarities, so entries are strictly positive and
// each row sums to 1.
struct TargetSimilarityMatrix {
    Matrix values;
    std::vector<std::string> ids;

    std::size_t size() const { return values.rows; }
};

struct FusionWeights {
    double smiles = 0.0;
    double nmr = 0.0;
    double image = 0.0;
    double fingerprint = 0.0;

    double sum() const { return smiles + nmr + image + fingerprint; }
    std::array<double, 4> as_array() const { return {smiles, nmr, image, fingerprint}; }
};

inline void validate_fusion_weights(const FusionWeights& w) {
    if (w.smiles < 0 || w.nmr < 0 || w.image < 0 || w.fingerprint < 0)
        throw WeightSumError("fusion weights must be non-negative");
    if (std::fabs(w.sum() - 1.0) > 1e-12)
        throw WeightSumError("fusion weights must sum to 1, got " + std::to_string(w.sum()));
}

// The named weight configurations for multimodal fusion.
inline std::optional<FusionWeights> fusion_preset(std::string_view name) {
    if (name == "smiles") return FusionWeights{1.00, 0.00, 0.00, 0.00};
    if (name == "nmr") return FusionWeights{0.00, 1.00, 0.00, 0.00};
    if (name == "image") return FusionWeights{0.00, 0.00, 1.00, 0.00};
    if (name == "fingerprint") return FusionWeights{0.00, 0.00, 0.00, 1.00};
    if (name == "fusion-smiles") return FusionWeights{0.70, 0.10, 0.10, 0.10};
    if (name == "fusion-nmr") return FusionWeights{0.10, 0.70, 0.10, 0.10};
    if (name == "fusion-image") return FusionWeights{0.10, 0.10, 0.70, 0.10};
    if (name == "fusion-fingerprint") return FusionWeights{0.10, 0.10, 0.10, 0.70};
    if (name == "fusion-average") return FusionWeights{0.25, 0.25, 0.25, 0.25};
    return std::nullopt;
}

inline const std::vector<std::string>& fusion_preset_names() {
    static const std::vector<std::string> names = {
        "smiles", "nmr", "image", "fingerprint", "fusion-smiles", "fusion-nmr",
        "fusion-image", "fusion-fingerprint", "fusion-average"};
    return names;
}

// One observed NMR peak: the carbon atom it annotates and its chemical shift.
struct Peak {
    int atom = 0;
    double ppm = 0.0;
};

struct PeakTable {
    // Molecule id -> peaks, kept in file order per molecule.
    std::vector<std::pair<std::string, std::vector<Peak>>> entries;

    const std::vector<Peak>* find(const std::string& id) const {
        for (const auto& [mid, peaks] : entries)
            if (mid == id) return &peaks;
        return nullptr;
    }
};

// --- self-similarities ----------------------------------------------------------

namespace detail {

// Row-parallel fill. Every cell is computed independently and written to a
// distinct location, so the result does not depend on the thread count.
template <typename CellFn>
inline void fill_rows(Matrix& m, std::size_t threads, CellFn&& cell) {
    const std::size_t n = m.rows;
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = cell(i, j);
        return;
    }
    std::vector<std::thread> pool;
    std::size_t n_threads = std::min(threads, n);
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += n_threads)
                for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = cell(i, j);
        });
    }
    for (std::thread& th : pool) th.join();
}

}  // namespace detail

inline SelfSimilarityMatrix cosine_self_similarity(
    const std::vector<std::vector<double>>& vectors, std::vector<std::string> ids,
    Modality modality, std::size_t threads = 1) {
    const std::size_t n = vectors.size();
    if (ids.size() != n) throw DimensionMismatchError("cosine_self_similarity: ids/vectors size");
    std::size_t dim = n == 0 ? 0 : vectors[0].size();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (vectors[i].size() != dim)
            throw DimensionMismatchError("embedding dimension mismatch at index " +
                                         std::to_string(i));
        double s = 0.0;
        for (double v : vectors[i]) s += v * v;
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0)
            throw ZeroNormError("zero-norm embedding for id '" + ids[i] + "'");
    }
    SelfSimilarityMatrix out;
    out.modality = modality;
    out.ids = std::move(ids);
    out.values = Matrix(n, n);
    detail::fill_rows(out.values, threads, [&](std::size_t i, std::size_t j) {
        if (i == j) return 1.0;
        double dot = 0.0;
        for (std::size_t k = 0; k < dim; ++k) dot += vectors[i][k] * vectors[j][k];
        return dot / (norms[i] * norms[j]);
    });
    return out;
}

inline SelfSimilarityMatrix fingerprint_self_similarity(const std::vector<Fingerprint>& fps,
                                                        std::vector<std::string> ids,
                                                        std::size_t threads = 1) {
    const std::size_t n = fps.size();
    if (ids.size() != n)
        throw DimensionMismatchError("fingerprint_self_similarity: ids/fps size");
    for (const Fingerprint& fp : fps)
        if (fp.n_bits != fps[0].n_bits)
            throw WidthMismatchError("fingerprint_self_similarity: mixed widths");
    SelfSimilarityMatrix out;
    out.modality = Modality::Fingerprint;
    out.ids = std::move(ids);
    out.values = Matrix(n, n);
    detail::fill_rows(out.values, threads, [&](std::size_t i, std::size_t j) {
        return tanimoto(fps[i], fps[j]);
    });
    return out;
}

// Peak-position self-similarity: tau2 / (|ppm_l - ppm_m| + tau1). Maximum
// tau2/tau1 at equal shifts, strictly decreasing in the distance.
inline double ppm_self_similarity(double ppm_l, double ppm_m, double tau1, double tau2) {
    if (!(tau1 > 0.0) || !(tau2 > 0.0))
        throw NonPositiveTemperatureError("ppm similarity temperatures must be positive");
    return tau2 / (std::fabs(ppm_l - ppm_m) + tau1);
}

inline SelfSimilarityMatrix ppm_self_similarity_matrix(const std::vector<double>& ppms,
                                                       std::vector<std::string> ids,
                                                       double tau1, double tau2) {
    const std::size_t n = ppms.size();
    if (ids.size() != n) throw DimensionMismatchError("ppm matrix: ids/ppms size");
    SelfSimilarityMatrix out;
    out.modality = Modality::Ppm;
    out.ids = std::move(ids);
    out.values = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.values.at(i, j) = ppm_self_similarity(ppms[i], ppms[j], tau1, tau2);
    return out;
}

// --- pair weighting ---------------------------------------------------------------

// Softmax pair weighting: t[i][j] = exp(S[i][j]) / sum_k exp(S[i][k]), with
// per-row max subtraction. The self pair k = i is included in the denominator
// by default; exclude_diagonal is an experimental switch that zeroes the
// diagonal and renormalizes over the remaining pairs.
inline TargetSimilarityMatrix pair_weight(const SelfSimilarityMatrix& s,
                                          bool exclude_diagonal = false) {
    const std::size_t n = s.values.rows;
    TargetSimilarityMatrix out;
    out.ids = s.ids;
    out.values = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
            if (exclude_diagonal && j == i) continue;
            if (!std::isfinite(s.values.at(i, j)))
                throw DataError("pair_weight: non-finite self-similarity");
            mx = std::max(mx, s.values.at(i, j));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (exclude_diagonal && j == i) continue;
            double e = std::exp(s.values.at(i, j) - mx);
            out.values.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (exclude_diagonal && j == i) {
                out.values.at(i, j) = 0.0;
                continue;
            }
            out.values.at(i, j) /= sum;
        }
    }
    return out;
}

// --- multimodal fusion -------------------------------------------------------------

inline void check_row_stochastic(const Matrix& m, double tol, const std::string& what) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) sum += m.at(i, j);
        if (std::fabs(sum - 1.0) > tol)
            throw DataError(what + ": row " + std::to_string(i) + " sums to " +
                            std::to_string(sum) + ", not 1");
    }
}

// Convex combination of row-stochastic matrices; the result is row-stochastic
// again because the weights sum to 1.
inline TargetSimilarityMatrix fuse(std::span<const TargetSimilarityMatrix> mats,
                                   std::span<const double> weights) {
    if (mats.empty()) throw DataError("fuse: no input matrices");
    if (mats.size() != weights.size())
        throw DataError("fuse: " + std::to_string(mats.size()) + " matrices but " +
                        std::to_string(weights.size()) + " weights");
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw WeightSumError("fuse: negative weight");
        wsum += w;
    }
    if (std::fabs(wsum - 1.0) > 1e-12)
        throw WeightSumError("fuse: weights sum to " + std::to_string(wsum) + ", not 1");

    const std::size_t n = mats[0].size();
    for (const TargetSimilarityMatrix& m : mats) {
        if (m.size() != n) throw IdMismatchError("fuse: matrices have different sizes");
        if (m.ids != mats[0].ids) throw IdMismatchError("fuse: matrices have different ids");
    }

    TargetSimilarityMatrix out;
    out.ids = mats[0].ids;
    out.values = Matrix(n, n);
    for (std::size_t k = 0; k < mats.size(); ++k) {
        if (weights[k] == 0.0) continue;
        for (std::size_t i = 0; i < n * n; ++i)
            out.values.data[i] += weights[k] * mats[k].values.data[i];
    }
    return out;
}

inline TargetSimilarityMatrix fuse(const std::vector<TargetSimilarityMatrix>& mats,
                                   const std::vector<double>& weights) {
    return fuse(std::span<const TargetSimilarityMatrix>(mats),
                std::span<const double>(weights));
}

// Four-modality convenience form in (smiles, nmr, image, fingerprint) order.
inline TargetSimilarityMatrix fuse(const std::vector<TargetSimilarityMatrix>& mats,
                                   const FusionWeights& w) {
    validate_fusion_weights(w);
    if (mats.size() != 4)
        throw DataError("fuse with FusionWeights expects 4 matrices (smiles, nmr, image, "
                        "fingerprint), got " + std::to_string(mats.size()));
    auto arr = w.as_array();
    return fuse(std::span<const TargetSimilarityMatrix>(mats),
                std::span<const double>(arr.data(), 4));
}

// --- node-level targets ---------------------------------------------------------------

// Composition of the ppm self-similarity and softmax pair weighting over one
// node pool.
inline TargetSimilarityMatrix node_target_matrix(const std::vector<double>& ppms,
                                                 std::vector<std::string> ids, double tau1,
                                                 double tau2) {
    if (ppms.empty()) throw EmptyPoolError("node_target_matrix: empty node pool");
    return pair_weight(ppm_self_similarity_matrix(ppms, std::move(ids), tau1, tau2));
}

// --- matrix import/export ----------------------------------------------------------------
// CSV: one header row of ids, then n rows of n values at 17 significant digits.
// Binary ("GMSM"): magic, version u32, n u32, modality tag u8, n^2 f64 LE,
// row-major. The binary format carries no ids.

inline constexpr std::uint32_t kMatrixFormatVersion = 1;

struct LoadedMatrix {
    Matrix values;
    std::vector<std::string> ids;  // empty for binary inputs
    std::uint8_t tag = kFusedMatrixTag;
};

inline std::string matrix_to_csv(const std::vector<std::string>& ids, const Matrix& m) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i].find_first_of(",\n\r") != std::string::npos)
            throw DataError("matrix csv: id '" + ids[i] + "' contains a delimiter");
        if (i) out += ',';
        out += ids[i];
    }
    out += '\n';
    char buf[40];
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out += ',';
            std::snprintf(buf, sizeof buf, "%.17g", m.at(i, j));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

inline void write_matrix_csv(const std::string& path, const std::vector<std::string>& ids,
                             const Matrix& m) {
    atomic_write_file(path, matrix_to_csv(ids, m));
}

inline void write_matrix_bin(const std::string& path, const Matrix& m, std::uint8_t tag) {
    if (m.rows != m.cols) throw ShapeError("matrix binary format requires a square matrix");
    std::string out;
    out += "GMSM";
    wire::put_u32(out, kMatrixFormatVersion);
    wire::put_u32(out, static_cast<std::uint32_t>(m.rows));
    wire::put_u8(out, tag);
    for (double v : m.data) wire::put_f64(out, v);
    atomic_write_file(path, out);
}

inline LoadedMatrix read_matrix_csv(const std::string& path) {
    std::string bytes = read_file(path);
    std::istringstream in(bytes);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty matrix file");
    LoadedMatrix out;
    {
        std::istringstream header(line);
        std::string tok;
        while (std::getline(header, tok, ',')) out.ids.push_back(tok);
    }
    const std::size_t n = out.ids.size();
    out.values = Matrix(n, n);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (row >= n) throw ParseError(path + ": more rows than header ids");
        std::istringstream ls(line);
        std::string tok;
        std::size_t col = 0;
        while (std::getline(ls, tok, ',')) {
            if (col >= n) throw ParseError(path + ": row " + std::to_string(row + 2) +
                                           " has too many columns");
            try {
                out.values.at(row, col) = std::stod(tok);
            } catch (const std::exception&) {
                throw ParseError(path + ": bad number '" + tok + "' at row " +
                                 std::to_string(row + 2));
            }
            ++col;
        }
        if (col != n)
            throw ParseError(path + ": row " + std::to_string(row + 2) + " has " +
                             std::to_string(col) + " columns, expected " + std::to_string(n));
        ++row;
    }
    if (row != n)
        throw ParseError(path + ": " + std::to_string(row) + " data rows, expected " +
                         std::to_string(n));
    return out;
}

inline LoadedMatrix read_matrix_bin(const std::string& path) {
    std::string bytes = read_file(path);
    wire::Reader r(bytes, path);
    if (r.str(4) != "GMSM") throw MagicError(path + ": not a similarity matrix (bad magic)");
    std::uint32_t version = r.u32();
    if (version != kMatrixFormatVersion)
        throw VersionError(path + ": unsupported matrix version " + std::to_string(version));
    std::uint32_t n = r.u32();
    LoadedMatrix out;
    out.tag = r.u8();
    // Validate the payload size before allocating n^2 doubles.
    if (r.remaining() != static_cast<std::size_t>(n) * n * 8)
        throw CorruptionError(path + ": payload is " + std::to_string(r.remaining()) +
                              " bytes, expected " + std::to_string(n) + "^2 doubles");
    out.values = Matrix(n, n);
    for (std::size_t i = 0; i < out.values.data.size(); ++i) out.values.data[i] = r.f64();
    return out;
}

// Sniffs the 4-byte magic to decide between the binary and CSV readers.
inline LoadedMatrix read_matrix_auto(const std::string& path) {
    std::string bytes = read_file(path);
    if (bytes.size() >= 4 && bytes.compare(0, 4, "GMSM") == 0) return read_matrix_bin(path);
    return read_matrix_csv(path);
}

}  // namespace gmsl
