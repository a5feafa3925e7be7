#pragma once

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "gmsl/encoder.hpp"
#include "gmsl/errors.hpp"
#include "gmsl/io_util.hpp"
#include "gmsl/molgraph.hpp"
#include "gmsl/optim.hpp"
#include "gmsl/similarity.hpp"

namespace gmsl {

struct MoleculeRecord {
    std::string id;
    std::string smiles;
    std::vector<std::optional<double>> labels;  // null = missing task value
    MolecularGraph graph;
};

struct MoleculePool {
    std::vector<MoleculeRecord> molecules;
    std::unordered_map<std::string, std::size_t> by_id;

    std::size_t size() const { return molecules.size(); }

    const MoleculeRecord* find(const std::string& id) const {
        auto it = by_id.find(id);
        return it == by_id.end() ? nullptr : &molecules[it->second];
    }
};

namespace detail {

// Dispatches one parsed JSON line; throws ParseError with file:line context.
template <typename Fn>
inline void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::string bytes = read_file(path);
    std::istringstream in(bytes);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        fn(obj, lineno);
    }
}

}  // namespace detail

// Molecule dataset: JSON Lines, one {"id", "smiles", "labels"?} per line.
inline MoleculePool load_molecules(const std::string& path, const SmilesOptions& opts = {}) {
    MoleculePool pool;
    detail::for_each_jsonl(path, [&](const nlohmann::json& obj, std::size_t lineno) {
        auto ctx = path + ":" + std::to_string(lineno);
        if (!obj.is_object() || !obj.contains("id") || !obj.contains("smiles"))
            throw ParseError(ctx + ": expected object with 'id' and 'smiles'");
        MoleculeRecord rec;
        try {
            rec.id = obj.at("id").get<std::string>();
            rec.smiles = obj.at("smiles").get<std::string>();
            if (obj.contains("labels")) {
                for (const auto& v : obj.at("labels")) {
                    if (v.is_null())
                        rec.labels.push_back(std::nullopt);
                    else
                        rec.labels.push_back(v.get<double>());
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(ctx + ": " + e.what());
        }
        if (pool.by_id.count(rec.id))
            throw DuplicateIdError(ctx + ": duplicate molecule id '" + rec.id + "'");
        try {
            rec.graph = parse_smiles(rec.smiles, opts);
        } catch (const DataError& e) {
            throw ParseError(ctx + ": bad SMILES '" + rec.smiles + "': " + e.what());
        }
        pool.by_id.emplace(rec.id, pool.molecules.size());
        pool.molecules.push_back(std::move(rec));
    });
    if (pool.molecules.empty()) throw EmptyDatasetError(path + ": no molecules");
    return pool;
}

// Precomputed modality vectors: JSON Lines of {"id", "vector"}.
struct EmbeddingTable {
    Modality modality = Modality::Smiles;
    std::size_t dim = 0;
    std::vector<std::string> ids;  // file order
    std::unordered_map<std::string, std::vector<double>> rows;

    const std::vector<double>* find(const std::string& id) const {
        auto it = rows.find(id);
        return it == rows.end() ? nullptr : &it->second;
    }
};

inline EmbeddingTable load_embeddings(const std::string& path, Modality modality) {
    EmbeddingTable table;
    table.modality = modality;
    detail::for_each_jsonl(path, [&](const nlohmann::json& obj, std::size_t lineno) {
        auto ctx = path + ":" + std::to_string(lineno);
        if (!obj.is_object() || !obj.contains("id") || !obj.contains("vector"))
            throw ParseError(ctx + ": expected object with 'id' and 'vector'");
        std::string id;
        std::vector<double> vec;
        try {
            id = obj.at("id").get<std::string>();
            vec = obj.at("vector").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(ctx + ": " + e.what());
        }
        if (table.rows.count(id))
            throw DuplicateIdError(ctx + ": duplicate embedding id '" + id + "'");
        if (table.ids.empty()) {
            table.dim = vec.size();
        } else if (vec.size() != table.dim) {
            throw DimensionMismatchError(ctx + ": vector has dimension " +
                                         std::to_string(vec.size()) + ", expected " +
                                         std::to_string(table.dim));
        }
        table.ids.push_back(id);
        table.rows.emplace(std::move(id), std::move(vec));
    });
    return table;
}

// NMR peak lists: JSON Lines of {"id", "peaks": [{"atom", "ppm"}]}. When a
// molecule pool is supplied, ids and atom indices are cross-checked and peaks
// must sit on carbon atoms. Shifts outside [-20, 250] only warn.
inline PeakTable load_peaks(const std::string& path, const MoleculePool* pool = nullptr,
                            std::ostream* warnings = &std::cerr) {
    PeakTable table;
    std::unordered_set<std::string> seen;
    detail::for_each_jsonl(path, [&](const nlohmann::json& obj, std::size_t lineno) {
        auto ctx = path + ":" + std::to_string(lineno);
        if (!obj.is_object() || !obj.contains("id") || !obj.contains("peaks"))
            throw ParseError(ctx + ": expected object with 'id' and 'peaks'");
        std::string id;
        std::vector<Peak> peaks;
        try {
            id = obj.at("id").get<std::string>();
            for (const auto& p : obj.at("peaks")) {
                Peak peak;
                peak.atom = p.at("atom").get<int>();
                peak.ppm = p.at("ppm").get<double>();
                peaks.push_back(peak);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(ctx + ": " + e.what());
        }
        if (seen.count(id)) throw DuplicateIdError(ctx + ": duplicate peak id '" + id + "'");
        seen.insert(id);
        if (pool) {
            const MoleculeRecord* rec = pool->find(id);
            if (!rec) throw UnknownMoleculeError(ctx + ": unknown molecule id '" + id + "'");
            for (const Peak& p : peaks) {
                if (p.atom < 0 || static_cast<std::size_t>(p.atom) >= rec->graph.atoms.size())
                    throw BadAtomIndexError(ctx + ": atom index " + std::to_string(p.atom) +
                                            " out of range for '" + id + "'");
                if (rec->graph.atoms[static_cast<std::size_t>(p.atom)].element != 6)
                    throw BadAtomIndexError(ctx + ": atom " + std::to_string(p.atom) + " of '" +
                                            id + "' is not a carbon");
            }
        }
        for (const Peak& p : peaks) {
            if ((p.ppm < -20.0 || p.ppm > 250.0) && warnings)
                *warnings << "warning: " << ctx << ": ppm " << p.ppm << " for '" << id
                          << "' outside the typical [-20, 250] range\n";
            if (!std::isfinite(p.ppm)) throw ParseError(ctx + ": non-finite ppm");
        }
        table.entries.emplace_back(std::move(id), std::move(peaks));
    });
    return table;
}

// --- model checkpoints ("GMSL") --------------------------------------------------
// magic "GMSL", version u32, encoder config block, train config block,
// training metadata, then length-prefixed f64 arrays (u64 count + payload):
// W_in, W_msg, W_node, Adam first moments x3, Adam second moments x3,
// per-batch loss history, per-batch gradient norm history.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ModelCheckpoint {
    std::uint32_t format_version = kCheckpointVersion;
    EncoderConfig encoder_config;
    EncoderParams params;
    AdamState adam;
    TrainConfig train_config;
    std::uint32_t completed_epochs = 0;
    std::vector<double> loss_history;       // one entry per batch, in step order
    std::vector<double> grad_norm_history;  // aligned with loss_history
};

namespace detail {

inline void put_array(std::string& out, const std::vector<double>& v) {
    wire::put_u64(out, v.size());
    for (double x : v) wire::put_f64(out, x);
}

inline std::vector<double> get_array(wire::Reader& r, std::size_t expected,
                                     const std::string& what) {
    std::uint64_t n = r.u64();
    if (expected != static_cast<std::size_t>(-1) && n != expected)
        throw CorruptionError(what + ": array length " + std::to_string(n) + ", expected " +
                              std::to_string(expected));
    if (n * 8 > r.remaining())
        throw CorruptionError(what + ": array length " + std::to_string(n) +
                              " exceeds the remaining payload");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = r.f64();
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
    std::string out;
    out += "GMSL";
    wire::put_u32(out, ckpt.format_version);

    wire::put_u32(out, static_cast<std::uint32_t>(ckpt.encoder_config.hidden_dim));
    wire::put_u32(out, static_cast<std::uint32_t>(ckpt.encoder_config.depth));
    wire::put_u8(out, static_cast<std::uint8_t>(ckpt.encoder_config.readout));
    wire::put_u64(out, ckpt.encoder_config.seed);
    wire::put_u32(out, kAtomFeatureDim);
    wire::put_u32(out, kBondFeatureDim);

    const TrainConfig& tc = ckpt.train_config;
    wire::put_f64(out, tc.learning_rate);
    wire::put_u32(out, tc.epochs);
    wire::put_u32(out, tc.batch_size);
    wire::put_u8(out, static_cast<std::uint8_t>(tc.level));
    wire::put_f64(out, tc.fusion.smiles);
    wire::put_f64(out, tc.fusion.nmr);
    wire::put_f64(out, tc.fusion.image);
    wire::put_f64(out, tc.fusion.fingerprint);
    wire::put_u64(out, tc.seed);
    wire::put_u8(out, static_cast<std::uint8_t>(tc.latent.mode));
    wire::put_f64(out, tc.latent.temperature);
    wire::put_f64(out, tc.tau1);
    wire::put_f64(out, tc.tau2);
    wire::put_u8(out, tc.permissive_modalities ? 1 : 0);

    wire::put_u32(out, ckpt.completed_epochs);
    wire::put_u64(out, ckpt.adam.step);

    detail::put_array(out, ckpt.params.w_in.data);
    detail::put_array(out, ckpt.params.w_msg.data);
    detail::put_array(out, ckpt.params.w_node.data);
    if (ckpt.adam.m.size() == 3) {
        for (const Matrix& m : ckpt.adam.m) detail::put_array(out, m.data);
        for (const Matrix& v : ckpt.adam.v) detail::put_array(out, v.data);
    } else {
        // Untrained checkpoint: zero moments.
        for (int k = 0; k < 3; ++k) detail::put_array(out, std::vector<double>());
        for (int k = 0; k < 3; ++k) detail::put_array(out, std::vector<double>());
    }
    detail::put_array(out, ckpt.loss_history);
    detail::put_array(out, ckpt.grad_norm_history);

    atomic_write_file(path, out);
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
    std::string bytes = read_file(path);
    wire::Reader r(bytes, path);
    if (r.remaining() < 4 || r.str(4) != "GMSL")
        throw MagicError(path + ": not a model checkpoint (bad magic)");
    ModelCheckpoint ckpt;
    ckpt.format_version = r.u32();
    if (ckpt.format_version != kCheckpointVersion)
        throw VersionError(path + ": unsupported checkpoint version " +
                           std::to_string(ckpt.format_version));

    ckpt.encoder_config.hidden_dim = r.u32();
    ckpt.encoder_config.depth = r.u32();
    std::uint8_t readout = r.u8();
    if (readout > 1) throw CorruptionError(path + ": bad readout tag");
    ckpt.encoder_config.readout = static_cast<Readout>(readout);
    ckpt.encoder_config.seed = r.u64();
    std::uint32_t fa = r.u32();
    std::uint32_t fb = r.u32();
    if (fa != kAtomFeatureDim || fb != kBondFeatureDim)
        throw VersionError(path + ": checkpoint built for a different featurization scheme");

    TrainConfig& tc = ckpt.train_config;
    tc.learning_rate = r.f64();
    tc.epochs = r.u32();
    tc.batch_size = r.u32();
    std::uint8_t level = r.u8();
    if (level > 2) throw CorruptionError(path + ": bad training level tag");
    tc.level = static_cast<TrainLevel>(level);
    tc.fusion.smiles = r.f64();
    tc.fusion.nmr = r.f64();
    tc.fusion.image = r.f64();
    tc.fusion.fingerprint = r.f64();
    tc.seed = r.u64();
    std::uint8_t latent_mode = r.u8();
    if (latent_mode > 1) throw CorruptionError(path + ": bad latent mode tag");
    tc.latent.mode = static_cast<LatentMode>(latent_mode);
    tc.latent.temperature = r.f64();
    tc.tau1 = r.f64();
    tc.tau2 = r.f64();
    tc.permissive_modalities = r.u8() != 0;

    ckpt.completed_epochs = r.u32();
    ckpt.adam.step = r.u64();

    const std::size_t hidden = ckpt.encoder_config.hidden_dim;
    auto read_matrix = [&](std::size_t rows, std::size_t cols, const char* what) {
        Matrix m(rows, cols);
        m.data = detail::get_array(r, rows * cols, path + ": " + what);
        return m;
    };
    ckpt.params.w_in = read_matrix(kAtomFeatureDim + kBondFeatureDim, hidden, "W_in");
    ckpt.params.w_msg = read_matrix(hidden, hidden, "W_msg");
    ckpt.params.w_node = read_matrix(kAtomFeatureDim + hidden, hidden, "W_node");

    std::vector<std::vector<double>> moments;
    for (int k = 0; k < 6; ++k)
        moments.push_back(detail::get_array(r, static_cast<std::size_t>(-1), path));
    bool have_moments = false;
    for (const auto& m : moments)
        if (!m.empty()) have_moments = true;
    if (have_moments) {
        auto as_matrix = [&](std::vector<double> data, const Matrix& like, const char* what) {
            if (data.size() != like.data.size())
                throw CorruptionError(path + ": " + what + " moment size mismatch");
            Matrix m(like.rows, like.cols);
            m.data = std::move(data);
            return m;
        };
        ckpt.adam.m = {as_matrix(std::move(moments[0]), ckpt.params.w_in, "W_in"),
                       as_matrix(std::move(moments[1]), ckpt.params.w_msg, "W_msg"),
                       as_matrix(std::move(moments[2]), ckpt.params.w_node, "W_node")};
        ckpt.adam.v = {as_matrix(std::move(moments[3]), ckpt.params.w_in, "W_in"),
                       as_matrix(std::move(moments[4]), ckpt.params.w_msg, "W_msg"),
                       as_matrix(std::move(moments[5]), ckpt.params.w_node, "W_node")};
    }

    ckpt.loss_history = detail::get_array(r, static_cast<std::size_t>(-1), path);
    ckpt.grad_norm_history = detail::get_array(r, static_cast<std::size_t>(-1), path);
    if (!r.at_end()) throw CorruptionError(path + ": trailing bytes after checkpoint");
    return ckpt;
}

}  // namespace gmsl
