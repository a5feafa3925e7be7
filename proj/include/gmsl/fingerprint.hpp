#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gmsl/errors.hpp"
#include "gmsl/io_util.hpp"
#include "gmsl/molgraph.hpp"

namespace gmsl {

struct Fingerprint {
    std::vector<std::uint64_t> words;
    std::uint32_t n_bits = 2048;
    std::uint32_t radius = 2;

    static Fingerprint empty(std::uint32_t n_bits, std::uint32_t radius) {
        Fingerprint fp;
        fp.n_bits = n_bits;
        fp.radius = radius;
        fp.words.assign(n_bits / 64, 0);
        return fp;
    }

    void set(std::uint32_t bit) { words[bit / 64] |= (std::uint64_t{1} << (bit % 64)); }

    bool test(std::uint32_t bit) const {
        return (words[bit / 64] >> (bit % 64)) & 1;
    }

    std::size_t popcount() const {
        std::size_t n = 0;
        for (std::uint64_t w : words) n += static_cast<std::size_t>(std::popcount(w));
        return n;
    }

    std::vector<std::uint32_t> set_bits() const {
        std::vector<std::uint32_t> out;
        for (std::uint32_t i = 0; i < n_bits; ++i)
            if (test(i)) out.push_back(i);
        return out;
    }
};

namespace detail {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = kFnvOffset;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace detail

// Circular substructure fingerprint. Per-atom environment identifiers start
// from input-order-invariant atom descriptors and are refined radius times by
// hashing the sorted (bond order, neighbor id) list, so the resulting bitset
// does not depend on the atom ordering of the parse.
inline Fingerprint ecfp(const MolecularGraph& g, std::uint32_t radius = 2,
                        std::uint32_t n_bits = 2048) {
    if (radius > 5) throw DataError("fingerprint radius must be in [0, 5]");
    if (n_bits != 512 && n_bits != 1024 && n_bits != 2048 && n_bits != 4096)
        throw DataError("fingerprint width must be one of 512, 1024, 2048, 4096");

    Fingerprint fp = Fingerprint::empty(n_bits, radius);
    const std::uint32_t mask = n_bits - 1;
    const std::size_t n = g.atoms.size();

    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Atom& a = g.atoms[i];
        std::string bytes;
        detail::append_u64(bytes, static_cast<std::uint64_t>(a.element));
        detail::append_u64(bytes, static_cast<std::uint64_t>(g.degree(static_cast<int>(i))));
        detail::append_u64(bytes, static_cast<std::uint64_t>(
                                      static_cast<std::int64_t>(a.formal_charge)));
        detail::append_u64(bytes, static_cast<std::uint64_t>(a.h_count));
        detail::append_u64(bytes, a.aromatic ? 1 : 0);
        ids[i] = detail::fnv1a(bytes);
        fp.set(static_cast<std::uint32_t>(ids[i]) & mask);
    }

    std::vector<std::vector<std::pair<std::uint8_t, std::size_t>>> neighbors(n);
    for (const Bond& b : g.bonds) {
        auto code = static_cast<std::uint8_t>(static_cast<std::uint8_t>(b.order) + 1);
        neighbors[static_cast<std::size_t>(b.a)].push_back({code, static_cast<std::size_t>(b.b)});
        neighbors[static_cast<std::size_t>(b.b)].push_back({code, static_cast<std::size_t>(b.a)});
    }

    for (std::uint32_t it = 1; it <= radius; ++it) {
        std::vector<std::uint64_t> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::pair<std::uint8_t, std::uint64_t>> env;
            env.reserve(neighbors[i].size());
            for (const auto& [code, j] : neighbors[i]) env.push_back({code, ids[j]});
            std::sort(env.begin(), env.end());
            std::string bytes;
            detail::append_u64(bytes, it);
            detail::append_u64(bytes, ids[i]);
            for (const auto& [code, id] : env) {
                bytes.push_back(static_cast<char>(code));
                detail::append_u64(bytes, id);
            }
            next[i] = detail::fnv1a(bytes);
            fp.set(static_cast<std::uint32_t>(next[i]) & mask);
        }
        ids = std::move(next);
    }
    return fp;
}

// |A n B| / |A u B| over set bits. Both-empty pairs return 1 by convention.
inline double tanimoto(const Fingerprint& a, const Fingerprint& b) {
    if (a.n_bits != b.n_bits)
        throw WidthMismatchError("fingerprint widths differ: " + std::to_string(a.n_bits) +
                                 " vs " + std::to_string(b.n_bits));
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.words.size(); ++i) {
        inter += static_cast<std::size_t>(std::popcount(a.words[i] & b.words[i]));
        uni += static_cast<std::size_t>(std::popcount(a.words[i] | b.words[i]));
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// --- fingerprint cache file ("GMFP") ------------------------------------------
// magic "GMFP", version u32, n_bits u32, radius u32, then per record:
// id length u16, UTF-8 id, n_bits/8 raw bytes (words little-endian).

inline constexpr std::uint32_t kFingerprintCacheVersion = 1;

inline void save_fingerprint_cache(const std::string& path,
                                   const std::vector<std::string>& ids,
                                   const std::vector<Fingerprint>& fps) {
    if (ids.size() != fps.size()) throw DataError("fingerprint cache: ids/fps size mismatch");
    std::string out;
    out += "GMFP";
    wire::put_u32(out, kFingerprintCacheVersion);
    std::uint32_t n_bits = fps.empty() ? 2048 : fps[0].n_bits;
    std::uint32_t radius = fps.empty() ? 2 : fps[0].radius;
    wire::put_u32(out, n_bits);
    wire::put_u32(out, radius);
    for (std::size_t i = 0; i < fps.size(); ++i) {
        if (fps[i].n_bits != n_bits)
            throw WidthMismatchError("fingerprint cache: mixed widths");
        if (ids[i].size() > 0xffff) throw DataError("fingerprint cache: id too long");
        wire::put_u16(out, static_cast<std::uint16_t>(ids[i].size()));
        out += ids[i];
        for (std::uint64_t w : fps[i].words) wire::put_u64(out, w);
    }
    atomic_write_file(path, out);
}

struct FingerprintCache {
    std::vector<std::string> ids;
    std::vector<Fingerprint> fps;
};

inline FingerprintCache load_fingerprint_cache(const std::string& path) {
    std::string bytes = read_file(path);
    wire::Reader r(bytes, path);
    if (r.str(4) != "GMFP") throw MagicError(path + ": not a fingerprint cache (bad magic)");
    std::uint32_t version = r.u32();
    if (version != kFingerprintCacheVersion)
        throw VersionError(path + ": unsupported fingerprint cache version " +
                           std::to_string(version));
    std::uint32_t n_bits = r.u32();
    std::uint32_t radius = r.u32();
    if (n_bits == 0 || n_bits % 64 != 0) throw CorruptionError(path + ": bad n_bits");
    FingerprintCache cache;
    while (!r.at_end()) {
        std::uint16_t len = r.u16();
        cache.ids.push_back(r.str(len));
        Fingerprint fp = Fingerprint::empty(n_bits, radius);
        for (std::size_t w = 0; w < fp.words.size(); ++w) fp.words[w] = r.u64();
        cache.fps.push_back(std::move(fp));
    }
    return cache;
}

}  // namespace gmsl
