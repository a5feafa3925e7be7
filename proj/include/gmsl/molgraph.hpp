#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gmsl/errors.hpp"

namespace gmsl {

enum class BondOrder : std::uint8_t { Single = 0, Double = 1, Triple = 2, Aromatic = 3 };

struct Atom {
    int element = 6;        // atomic number
    bool aromatic = false;
    int formal_charge = 0;
    int h_count = 0;        // attached hydrogens; counted, never materialized as atoms
};

struct Bond {
    int a = 0;
    int b = 0;
    BondOrder order = BondOrder::Single;
};

// Directed edges come in pairs: edge 2i runs bond[i].a -> bond[i].b and edge
// 2i+1 is its reverse, so reverse(e) == e ^ 1.
struct DirectedEdge {
    int src = 0;
    int dst = 0;
    int bond = 0;
    int reverse = 0;
};

struct MolecularGraph {
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;
    std::vector<DirectedEdge> directed_edges;
    bool multi_fragment = false;  // set only when a permissive parse dropped fragments

    std::size_t atom_count() const { return atoms.size(); }
    std::size_t bond_count() const { return bonds.size(); }

    int degree(int atom) const {
        int d = 0;
        for (const Bond& b : bonds)
            if (b.a == atom || b.b == atom) ++d;
        return d;
    }
};

namespace detail {

// The supported element set, in feature-vector order.
inline constexpr std::array<int, 10> kSupportedElements = {5, 6, 7, 8, 9, 15, 16, 17, 35, 53};

inline bool element_supported(int z) {
    return std::find(kSupportedElements.begin(), kSupportedElements.end(), z) !=
           kSupportedElements.end();
}

inline int element_from_symbol(std::string_view sym) {
    if (sym == "B") return 5;
    if (sym == "C") return 6;
    if (sym == "N") return 7;
    if (sym == "O") return 8;
    if (sym == "F") return 9;
    if (sym == "P") return 15;
    if (sym == "S") return 16;
    if (sym == "Cl") return 17;
    if (sym == "Br") return 35;
    if (sym == "I") return 53;
    return 0;
}

// Default valences used for implicit hydrogen counting. Multi-valent elements
// take the smallest valence that covers the existing bond order sum.
inline const std::vector<int>& valence_list(int element) {
    static const std::vector<int> vB = {3};
    static const std::vector<int> vC = {4};
    static const std::vector<int> vN = {3, 5};
    static const std::vector<int> vO = {2};
    static const std::vector<int> vHal = {1};
    static const std::vector<int> vP = {3, 5};
    static const std::vector<int> vS = {2, 4, 6};
    static const std::vector<int> vNone = {};
    switch (element) {
        case 5: return vB;
        case 6: return vC;
        case 7: return vN;
        case 8: return vO;
        case 9: case 17: case 35: case 53: return vHal;
        case 15: return vP;
        case 16: return vS;
        default: return vNone;
    }
}

inline double bond_order_value(BondOrder o) {
    switch (o) {
        case BondOrder::Single: return 1.0;
        case BondOrder::Double: return 2.0;
        case BondOrder::Triple: return 3.0;
        case BondOrder::Aromatic: return 1.5;
    }
    return 1.0;
}

}  // namespace detail

struct SmilesOptions {
    bool strict_valence = false;
    // "." is rejected by default; permissive mode keeps the largest fragment
    // and sets MolecularGraph::multi_fragment.
    bool permissive_fragments = false;
};

// Builds the paired directed-edge list and validates the bond invariants.
// Exposed so tests can reconstruct graphs (e.g. atom permutations) directly.
inline MolecularGraph make_graph(std::vector<Atom> atoms, std::vector<Bond> bonds,
                                 bool multi_fragment = false) {
    MolecularGraph g;
    g.atoms = std::move(atoms);
    g.bonds = std::move(bonds);
    g.multi_fragment = multi_fragment;
    const int n = static_cast<int>(g.atoms.size());
    std::vector<std::pair<int, int>> seen;
    for (const Bond& b : g.bonds) {
        if (b.a == b.b) throw DataError("bond connects an atom to itself");
        if (b.a < 0 || b.b < 0 || b.a >= n || b.b >= n)
            throw DataError("bond references atom out of range");
        auto key = std::minmax(b.a, b.b);
        if (std::find(seen.begin(), seen.end(), std::pair<int, int>(key.first, key.second)) !=
            seen.end())
            throw DataError("duplicate bond between the same atom pair");
        seen.emplace_back(key.first, key.second);
    }
    g.directed_edges.reserve(2 * g.bonds.size());
    for (int i = 0; i < static_cast<int>(g.bonds.size()); ++i) {
        const Bond& b = g.bonds[i];
        g.directed_edges.push_back({b.a, b.b, i, 2 * i + 1});
        g.directed_edges.push_back({b.b, b.a, i, 2 * i});
    }
    return g;
}

namespace detail {

struct ParsedAtom {
    Atom atom;
    bool bracket = false;   // bracket atoms carry their H count explicitly
    int fragment = 0;
};

class SmilesParser {
public:
    SmilesParser(std::string_view text, const SmilesOptions& opts) : s_(text), opts_(opts) {}

    MolecularGraph parse() {
        if (s_.empty()) throw SyntaxError("empty SMILES");
        while (pos_ < s_.size()) step();
        if (!ring_open_.empty())
            throw RingClosureError("unmatched ring closure digit " +
                                   std::to_string(ring_open_.begin()->first));
        if (!branch_stack_.empty()) throw SyntaxError("unbalanced '(' in SMILES");
        if (pending_bond_) throw SyntaxError("dangling bond symbol at end of SMILES");
        if (atoms_.empty()) throw SyntaxError("SMILES contains no atoms");
        return finish();
    }

private:
    void step() {
        char c = s_[pos_];
        switch (c) {
            case '(':
                if (prev_ < 0) throw SyntaxError("branch open before any atom");
                if (pending_bond_) throw SyntaxError("bond symbol before '('");
                branch_stack_.push_back(prev_);
                ++pos_;
                return;
            case ')':
                if (branch_stack_.empty()) throw SyntaxError("unbalanced ')' in SMILES");
                if (pending_bond_) throw SyntaxError("bond symbol before ')'");
                prev_ = branch_stack_.back();
                branch_stack_.pop_back();
                ++pos_;
                return;
            case '-': case '=': case '#': case ':':
                if (pending_bond_) throw SyntaxError("two consecutive bond symbols");
                if (prev_ < 0) throw SyntaxError("bond symbol before any atom");
                pending_bond_ = bond_from_symbol(c);
                ++pos_;
                return;
            case '/': case '\\':
                // Stereo bond markers are accepted and read as single bonds.
                if (pending_bond_) throw SyntaxError("two consecutive bond symbols");
                if (prev_ < 0) throw SyntaxError("bond symbol before any atom");
                pending_bond_ = BondOrder::Single;
                ++pos_;
                return;
            case '.':
                if (!opts_.permissive_fragments)
                    throw MultiFragmentError("multi-fragment SMILES ('.') rejected");
                if (pending_bond_) throw SyntaxError("bond symbol before '.'");
                if (!branch_stack_.empty()) throw SyntaxError("'.' inside a branch");
                prev_ = -1;
                ++fragment_;
                ++pos_;
                return;
            case '%': {
                if (pos_ + 2 >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_ + 1])) ||
                    !std::isdigit(static_cast<unsigned char>(s_[pos_ + 2])))
                    throw SyntaxError("'%' must be followed by two digits");
                int num = (s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0');
                pos_ += 3;
                ring_closure(num);
                return;
            }
            case '[':
                add_atom(parse_bracket_atom(), true);
                return;
            default:
                break;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            ++pos_;
            ring_closure(c - '0');
            return;
        }
        std::optional<Atom> a = parse_organic_atom();
        if (!a) throw SyntaxError(std::string("unexpected character '") + c + "' at position " +
                                  std::to_string(pos_));
        add_atom(*a, false);
    }

    static BondOrder bond_from_symbol(char c) {
        switch (c) {
            case '-': return BondOrder::Single;
            case '=': return BondOrder::Double;
            case '#': return BondOrder::Triple;
            case ':': return BondOrder::Aromatic;
        }
        return BondOrder::Single;
    }

    // Organic-subset atom: B C N O F P S Cl Br I and aromatic b c n o p s.
    std::optional<Atom> parse_organic_atom() {
        char c = s_[pos_];
        Atom a;
        if (c == 'C' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'l') {
            a.element = 17;
            pos_ += 2;
            return a;
        }
        if (c == 'B' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'r') {
            a.element = 35;
            pos_ += 2;
            return a;
        }
        switch (c) {
            case 'B': a.element = 5; break;
            case 'C': a.element = 6; break;
            case 'N': a.element = 7; break;
            case 'O': a.element = 8; break;
            case 'F': a.element = 9; break;
            case 'P': a.element = 15; break;
            case 'S': a.element = 16; break;
            case 'I': a.element = 53; break;
            case 'b': a.element = 5; a.aromatic = true; break;
            case 'c': a.element = 6; a.aromatic = true; break;
            case 'n': a.element = 7; a.aromatic = true; break;
            case 'o': a.element = 8; a.aromatic = true; break;
            case 'p': a.element = 15; a.aromatic = true; break;
            case 's': a.element = 16; a.aromatic = true; break;
            default: return std::nullopt;
        }
        ++pos_;
        return a;
    }

    // [isotope? symbol chirality? Hcount? charge? class?]
    Atom parse_bracket_atom() {
        std::size_t open = pos_;
        ++pos_;  // '['
        Atom a;
        // Isotope digits are parsed and ignored (irrelevant to every metric here).
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        if (pos_ >= s_.size()) throw SyntaxError("unterminated bracket atom");

        std::string sym;
        char c = s_[pos_];
        if (std::isupper(static_cast<unsigned char>(c))) {
            // In bracket content a lowercase letter directly after an uppercase
            // one can only be the tail of a two-letter element symbol.
            sym += c;
            ++pos_;
            if (pos_ < s_.size() && std::islower(static_cast<unsigned char>(s_[pos_]))) {
                sym += s_[pos_];
                ++pos_;
            }
            a.element = detail::element_from_symbol(sym);
            if (a.element == 0) throw UnknownElementError("unsupported element [" + sym + "]");
        } else if (std::islower(static_cast<unsigned char>(c))) {
            switch (c) {
                case 'b': a.element = 5; break;
                case 'c': a.element = 6; break;
                case 'n': a.element = 7; break;
                case 'o': a.element = 8; break;
                case 'p': a.element = 15; break;
                case 's': a.element = 16; break;
                default:
                    throw UnknownElementError(std::string("unsupported aromatic element [") + c +
                                              "]");
            }
            a.aromatic = true;
            ++pos_;
        } else {
            throw SyntaxError("expected element symbol in bracket at position " +
                              std::to_string(open));
        }

        // Chirality markers: ignored.
        while (pos_ < s_.size() && s_[pos_] == '@') ++pos_;

        if (pos_ < s_.size() && s_[pos_] == 'H') {
            ++pos_;
            int h = 1;
            if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                h = s_[pos_] - '0';
                ++pos_;
            }
            if (h > 8) throw SyntaxError("hydrogen count exceeds 8 in bracket atom");
            a.h_count = h;
        }

        if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
            char sign = s_[pos_];
            int mag = 0;
            while (pos_ < s_.size() && s_[pos_] == sign) {
                ++mag;
                ++pos_;
            }
            if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                if (mag != 1) throw SyntaxError("malformed charge in bracket atom");
                mag = s_[pos_] - '0';
                ++pos_;
            }
            a.formal_charge = (sign == '+') ? mag : -mag;
        }

        if (pos_ < s_.size() && s_[pos_] == ':') {
            ++pos_;
            if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_])))
                throw SyntaxError("atom class ':' without digits");
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        }

        if (pos_ >= s_.size() || s_[pos_] != ']') throw SyntaxError("unterminated bracket atom");
        ++pos_;
        return a;
    }

    void add_atom(const Atom& a, bool bracket) {
        int idx = static_cast<int>(atoms_.size());
        atoms_.push_back({a, bracket, fragment_});
        if (prev_ >= 0) add_bond(prev_, idx, pending_bond_);
        pending_bond_.reset();
        prev_ = idx;
    }

    void add_bond(int a, int b, std::optional<BondOrder> order) {
        BondOrder o;
        if (order) {
            o = *order;
        } else {
            o = (atoms_[a].atom.aromatic && atoms_[b].atom.aromatic) ? BondOrder::Aromatic
                                                                     : BondOrder::Single;
        }
        for (const Bond& existing : bonds_) {
            if ((existing.a == a && existing.b == b) || (existing.a == b && existing.b == a))
                throw RingClosureError("duplicate bond between atoms " + std::to_string(a) +
                                       " and " + std::to_string(b));
        }
        bonds_.push_back({a, b, o});
    }

    void ring_closure(int num) {
        if (prev_ < 0) throw SyntaxError("ring closure digit before any atom");
        auto it = ring_open_.end();
        for (auto i = ring_open_.begin(); i != ring_open_.end(); ++i)
            if (i->first == num) { it = i; break; }
        if (it == ring_open_.end()) {
            ring_open_.push_back({num, {prev_, pending_bond_}});
            pending_bond_.reset();
            return;
        }
        int other = it->second.first;
        std::optional<BondOrder> opener_order = it->second.second;
        ring_open_.erase(it);
        if (other == prev_) throw RingClosureError("ring closure bonds an atom to itself");
        if (opener_order && pending_bond_ && *opener_order != *pending_bond_)
            throw SyntaxError("conflicting bond orders on ring closure " + std::to_string(num));
        std::optional<BondOrder> order = opener_order ? opener_order : pending_bond_;
        add_bond(other, prev_, order);
        pending_bond_.reset();
    }

    MolecularGraph finish() {
        // Implicit hydrogens for non-bracket atoms from the valence tables.
        // An aromatic atom counts its explicit bonds plus one for the
        // delocalized system and draws on its lowest valence only, so e.g.
        // thiophene sulfur ends up with zero hydrogens. A non-aromatic atom
        // uses the rounded-up bond order sum against the smallest valence
        // that covers it.
        std::vector<double> order_sum(atoms_.size(), 0.0);
        std::vector<int> degree(atoms_.size(), 0);
        for (const Bond& b : bonds_) {
            double v = detail::bond_order_value(b.order);
            order_sum[static_cast<std::size_t>(b.a)] += v;
            order_sum[static_cast<std::size_t>(b.b)] += v;
            degree[static_cast<std::size_t>(b.a)]++;
            degree[static_cast<std::size_t>(b.b)]++;
        }
        for (std::size_t i = 0; i < atoms_.size(); ++i) {
            ParsedAtom& pa = atoms_[i];
            const auto& vl = detail::valence_list(pa.atom.element);
            int bonded;
            if (pa.atom.aromatic)
                bonded = degree[i] + 1;
            else
                bonded = static_cast<int>(std::ceil(order_sum[i] - 1e-9));
            if (!pa.bracket) {
                int h = 0;
                if (pa.atom.aromatic) {
                    if (!vl.empty()) h = std::max(0, vl.front() - bonded);
                } else {
                    for (int v : vl) {
                        if (v >= bonded) {
                            h = v - bonded;
                            break;
                        }
                    }
                }
                pa.atom.h_count = h;
            }
            if (opts_.strict_valence) {
                int max_v = vl.empty() ? 0 : vl.back();
                if (bonded + pa.atom.h_count > max_v + std::abs(pa.atom.formal_charge))
                    throw ValenceError("valence " + std::to_string(bonded + pa.atom.h_count) +
                                       " exceeds maximum for element " +
                                       std::to_string(pa.atom.element) + " at atom " +
                                       std::to_string(i));
            }
        }

        if (fragment_ == 0) {
            std::vector<Atom> atoms;
            atoms.reserve(atoms_.size());
            for (const ParsedAtom& pa : atoms_) atoms.push_back(pa.atom);
            return make_graph(std::move(atoms), std::move(bonds_));
        }

        // Permissive multi-fragment parse: keep the largest fragment (first on
        // ties) and remap atom indices.
        std::vector<int> frag_size(static_cast<std::size_t>(fragment_) + 1, 0);
        for (const ParsedAtom& pa : atoms_) frag_size[static_cast<std::size_t>(pa.fragment)]++;
        int keep = 0;
        for (int f = 1; f <= fragment_; ++f)
            if (frag_size[static_cast<std::size_t>(f)] > frag_size[static_cast<std::size_t>(keep)])
                keep = f;

        std::vector<int> remap(atoms_.size(), -1);
        std::vector<Atom> atoms;
        for (std::size_t i = 0; i < atoms_.size(); ++i) {
            if (atoms_[i].fragment == keep) {
                remap[i] = static_cast<int>(atoms.size());
                atoms.push_back(atoms_[i].atom);
            }
        }
        std::vector<Bond> bonds;
        for (const Bond& b : bonds_) {
            int a = remap[static_cast<std::size_t>(b.a)];
            int bb = remap[static_cast<std::size_t>(b.b)];
            if (a >= 0 && bb >= 0) bonds.push_back({a, bb, b.order});
        }
        return make_graph(std::move(atoms), std::move(bonds), /*multi_fragment=*/true);
    }

    std::string_view s_;
    SmilesOptions opts_;
    std::size_t pos_ = 0;
    int prev_ = -1;
    int fragment_ = 0;
    std::optional<BondOrder> pending_bond_;
    std::vector<int> branch_stack_;
    std::vector<ParsedAtom> atoms_;
    std::vector<Bond> bonds_;
    // (digit, (atom, bond order at opening)) pairs, small enough for a flat list
    std::vector<std::pair<int, std::pair<int, std::optional<BondOrder>>>> ring_open_;
};

}  // namespace detail

inline MolecularGraph parse_smiles(std::string_view text, const SmilesOptions& opts = {}) {
    for (char c : text)
        if (static_cast<unsigned char>(c) >= 128)
            throw SyntaxError("SMILES must be ASCII");
    return detail::SmilesParser(text, opts).parse();
}

inline std::size_t heavy_atom_count(const MolecularGraph& g) { return g.atoms.size(); }

// --- featurization -----------------------------------------------------------
//
// Feature scheme v1.
// Atom row (F_A = 28): element one-hot over {B,C,N,O,F,P,S,Cl,Br,I,other} (11),
// degree one-hot 0-5 (6, clamped), formal charge one-hot -2..+2 (5, clamped),
// aromatic flag (1), hydrogen count one-hot 0-4 (5, clamped).
// Bond row (F_B = 5): bond order one-hot (4), in-ring flag (1).

inline constexpr std::size_t kAtomFeatureDim = 28;
inline constexpr std::size_t kBondFeatureDim = 5;
inline constexpr std::uint32_t kFeatureSchemeVersion = 1;

struct FeaturizedGraph {
    std::size_t n_atoms = 0;
    std::size_t n_bonds = 0;
    std::vector<double> atom_features;  // n_atoms x kAtomFeatureDim, row-major
    std::vector<double> bond_features;  // n_bonds x kBondFeatureDim, row-major
    std::vector<std::vector<int>> incoming;  // per atom: incoming directed-edge ids
    std::vector<DirectedEdge> directed_edges;
};

namespace detail {

// A bond is in a ring iff it is not a bridge: with the bond removed, its
// endpoints must still be connected.
inline bool bond_in_ring(const MolecularGraph& g, int bond_idx) {
    const Bond& target = g.bonds[static_cast<std::size_t>(bond_idx)];
    std::vector<char> visited(g.atoms.size(), 0);
    std::vector<int> stack = {target.a};
    visited[static_cast<std::size_t>(target.a)] = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int bi = 0; bi < static_cast<int>(g.bonds.size()); ++bi) {
            if (bi == bond_idx) continue;
            const Bond& b = g.bonds[static_cast<std::size_t>(bi)];
            int next = -1;
            if (b.a == v) next = b.b;
            else if (b.b == v) next = b.a;
            if (next >= 0 && !visited[static_cast<std::size_t>(next)]) {
                if (next == target.b) return true;
                visited[static_cast<std::size_t>(next)] = 1;
                stack.push_back(next);
            }
        }
    }
    return false;
}

}  // namespace detail

inline FeaturizedGraph featurize(const MolecularGraph& g) {
    FeaturizedGraph f;
    f.n_atoms = g.atoms.size();
    f.n_bonds = g.bonds.size();
    f.atom_features.assign(f.n_atoms * kAtomFeatureDim, 0.0);
    f.bond_features.assign(f.n_bonds * kBondFeatureDim, 0.0);
    f.directed_edges = g.directed_edges;
    f.incoming.assign(f.n_atoms, {});

    for (std::size_t i = 0; i < g.atoms.size(); ++i) {
        const Atom& a = g.atoms[i];
        double* row = f.atom_features.data() + i * kAtomFeatureDim;
        std::size_t elem_slot = 10;  // "other"
        for (std::size_t k = 0; k < detail::kSupportedElements.size(); ++k)
            if (detail::kSupportedElements[k] == a.element) elem_slot = k;
        row[elem_slot] = 1.0;
        int deg = std::min(g.degree(static_cast<int>(i)), 5);
        row[11 + static_cast<std::size_t>(deg)] = 1.0;
        int charge = std::clamp(a.formal_charge, -2, 2);
        row[17 + static_cast<std::size_t>(charge + 2)] = 1.0;
        row[22] = a.aromatic ? 1.0 : 0.0;
        int h = std::min(a.h_count, 4);
        row[23 + static_cast<std::size_t>(h)] = 1.0;
    }

    for (std::size_t i = 0; i < g.bonds.size(); ++i) {
        double* row = f.bond_features.data() + i * kBondFeatureDim;
        row[static_cast<std::size_t>(g.bonds[i].order)] = 1.0;
        row[4] = detail::bond_in_ring(g, static_cast<int>(i)) ? 1.0 : 0.0;
    }

    for (std::size_t e = 0; e < g.directed_edges.size(); ++e)
        f.incoming[static_cast<std::size_t>(g.directed_edges[e].dst)].push_back(
            static_cast<int>(e));
    return f;
}

}  // namespace gmsl
