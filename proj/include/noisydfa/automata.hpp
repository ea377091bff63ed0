#pragma once

// Deterministic finite automata over a small indexed alphabet.
//
// Two flavours share one type:
//   * acceptor   - Moore machine; every state carries an output class
//                  (1 = accepting for the grammar problems). Running the
//                  machine emits the label of the state entered by each symbol.
//   * transducer - Mealy machine; every transition carries an output class.
//
// All operations are pure and operate on value types.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "noisydfa/error.hpp"

namespace noisydfa {

using StateId = std::uint32_t;
using SymbolId = std::uint32_t;
using ClassId = std::uint32_t;

enum class DfaKind { acceptor, transducer };

class Dfa {
public:
    Dfa() = default;

    Dfa(DfaKind kind, std::vector<std::string> alphabet, std::size_t n_states, StateId initial = 0)
        : kind_(kind),
          alphabet_(std::move(alphabet)),
          n_states_(n_states),
          initial_(initial),
          next_(n_states * alphabet_.size(), 0),
          state_labels_(kind == DfaKind::acceptor ? n_states : 0, 0),
          transition_labels_(kind == DfaKind::transducer ? n_states * alphabet_.size() : 0, 0) {
        require(!alphabet_.empty(), "Dfa: empty alphabet");
        require(n_states > 0, "Dfa: at least one state required");
        require(initial < n_states, "Dfa: initial state out of range");
    }

    DfaKind kind() const noexcept { return kind_; }
    bool is_transducer() const noexcept { return kind_ == DfaKind::transducer; }
    std::size_t n_states() const noexcept { return n_states_; }
    std::size_t n_symbols() const noexcept { return alphabet_.size(); }
    const std::vector<std::string>& alphabet() const noexcept { return alphabet_; }
    StateId initial() const noexcept { return initial_; }

    StateId next(StateId s, SymbolId a) const { return next_[index(s, a)]; }
    ClassId label(StateId s) const { return state_labels_.at(s); }
    ClassId output(StateId s, SymbolId a) const { return transition_labels_.at(index(s, a)); }

    // Output emitted when `a` is read in state `s`.
    ClassId emit(StateId s, SymbolId a) const {
        return is_transducer() ? output(s, a) : state_labels_[next(s, a)];
    }

    void set_initial(StateId s) {
        require(s < n_states_, "Dfa: initial state out of range");
        initial_ = s;
    }
    void set_next(StateId s, SymbolId a, StateId t) {
        require(t < n_states_, "Dfa: transition target out of range");
        next_[index(s, a)] = t;
    }
    void set_label(StateId s, ClassId c) {
        require(!is_transducer(), "Dfa: state labels only exist on acceptors");
        state_labels_.at(s) = c;
    }
    void set_output(StateId s, SymbolId a, ClassId c) {
        require(is_transducer(), "Dfa: transition outputs only exist on transducers");
        transition_labels_.at(index(s, a)) = c;
    }

    std::optional<SymbolId> symbol_index(std::string_view name) const {
        for (std::size_t i = 0; i < alphabet_.size(); ++i)
            if (alphabet_[i] == name) return static_cast<SymbolId>(i);
        return std::nullopt;
    }

    bool operator==(const Dfa&) const = default;

private:
    std::size_t index(StateId s, SymbolId a) const {
        require(s < n_states_ && a < alphabet_.size(), "Dfa: state/symbol out of range");
        return static_cast<std::size_t>(s) * alphabet_.size() + a;
    }

    DfaKind kind_ = DfaKind::acceptor;
    std::vector<std::string> alphabet_;
    std::size_t n_states_ = 0;
    StateId initial_ = 0;
    std::vector<StateId> next_;
    std::vector<ClassId> state_labels_;
    std::vector<ClassId> transition_labels_;
};

// Acceptor from a transition table: rows[s][a] = target, labels[s] = class.
inline Dfa make_acceptor(std::vector<std::string> alphabet, const std::vector<std::vector<StateId>>& rows,
                         const std::vector<ClassId>& labels, StateId initial) {
    require(rows.size() == labels.size(), "make_acceptor: rows/labels size mismatch");
    Dfa d(DfaKind::acceptor, std::move(alphabet), rows.size(), initial);
    for (std::size_t s = 0; s < rows.size(); ++s) {
        require(rows[s].size() == d.n_symbols(), "make_acceptor: row width mismatch");
        for (std::size_t a = 0; a < rows[s].size(); ++a)
            d.set_next(static_cast<StateId>(s), static_cast<SymbolId>(a), rows[s][a]);
        d.set_label(static_cast<StateId>(s), labels[s]);
    }
    return d;
}

inline std::vector<ClassId> run(const Dfa& d, std::span<const SymbolId> inputs, std::optional<StateId> start = {}) {
    std::vector<ClassId> out;
    out.reserve(inputs.size());
    StateId s = start.value_or(d.initial());
    for (SymbolId a : inputs) {
        out.push_back(d.emit(s, a));
        s = d.next(s, a);
    }
    return out;
}

// States reachable from the initial state, in BFS order (symbols in alphabet order).
inline std::vector<StateId> bfs_order(const Dfa& d) {
    std::vector<char> seen(d.n_states(), 0);
    std::vector<StateId> order{d.initial()};
    seen[d.initial()] = 1;
    for (std::size_t i = 0; i < order.size(); ++i) {
        for (SymbolId a = 0; a < d.n_symbols(); ++a) {
            StateId t = d.next(order[i], a);
            if (!seen[t]) {
                seen[t] = 1;
                order.push_back(t);
            }
        }
    }
    return order;
}

// Drops unreachable states and renumbers in BFS order.
inline Dfa canonicalize(const Dfa& d) {
    const auto order = bfs_order(d);
    std::vector<StateId> renum(d.n_states(), 0);
    for (std::size_t i = 0; i < order.size(); ++i) renum[order[i]] = static_cast<StateId>(i);
    Dfa out(d.kind(), d.alphabet(), order.size(), 0);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const StateId s = order[i];
        const auto ni = static_cast<StateId>(i);
        if (!d.is_transducer()) out.set_label(ni, d.label(s));
        for (SymbolId a = 0; a < d.n_symbols(); ++a) {
            out.set_next(ni, a, renum[d.next(s, a)]);
            if (d.is_transducer()) out.set_output(ni, a, d.output(s, a));
        }
    }
    return out;
}

// Moore-style partition refinement on the reachable part. For transducers the
// refinement signature pairs each transition's output with its target block.
// The result is canonically numbered.
inline Dfa minimize(const Dfa& input) {
    const Dfa d = canonicalize(input);
    const std::size_t n = d.n_states();
    const std::size_t k = d.n_symbols();

    std::vector<std::size_t> block(n, 0);
    if (!d.is_transducer()) {
        std::map<ClassId, std::size_t> ids;
        for (StateId s = 0; s < n; ++s) block[s] = ids.emplace(d.label(s), ids.size()).first->second;
    }
    std::size_t n_blocks = 0;
    for (auto b : block) n_blocks = std::max(n_blocks, b + 1);

    for (;;) {
        std::map<std::vector<std::size_t>, std::size_t> ids;
        std::vector<std::size_t> refined(n);
        for (StateId s = 0; s < n; ++s) {
            std::vector<std::size_t> sig;
            sig.reserve(1 + 2 * k);
            sig.push_back(block[s]);
            for (SymbolId a = 0; a < k; ++a) {
                if (d.is_transducer()) sig.push_back(d.output(s, a));
                sig.push_back(block[d.next(s, a)]);
            }
            refined[s] = ids.emplace(std::move(sig), ids.size()).first->second;
        }
        block = std::move(refined);
        if (ids.size() == n_blocks) break;
        n_blocks = ids.size();
    }

    Dfa q(d.kind(), d.alphabet(), n_blocks, static_cast<StateId>(block[d.initial()]));
    for (StateId s = 0; s < n; ++s) {
        const auto b = static_cast<StateId>(block[s]);
        if (!d.is_transducer()) q.set_label(b, d.label(s));
        for (SymbolId a = 0; a < k; ++a) {
            q.set_next(b, a, static_cast<StateId>(block[d.next(s, a)]));
            if (d.is_transducer()) q.set_output(b, a, d.output(s, a));
        }
    }
    return canonicalize(q);
}

// Block membership of each original state after minimization (original state ->
// minimized state id, or nullopt if unreachable). Used to report which raw
// states merged, e.g. "4* (2, 3, 4)".
inline std::vector<std::optional<StateId>> minimization_classes(const Dfa& d) {
    const Dfa m = minimize(d);
    std::vector<std::optional<StateId>> cls(d.n_states());
    // Walk both machines in lockstep; reachable raw states map to the state of m
    // reached by the same input.
    std::vector<char> seen(d.n_states(), 0);
    std::queue<std::pair<StateId, StateId>> work;
    work.emplace(d.initial(), m.initial());
    seen[d.initial()] = 1;
    cls[d.initial()] = m.initial();
    while (!work.empty()) {
        auto [s, t] = work.front();
        work.pop();
        for (SymbolId a = 0; a < d.n_symbols(); ++a) {
            StateId s2 = d.next(s, a);
            if (!seen[s2]) {
                seen[s2] = 1;
                cls[s2] = m.next(t, a);
                work.emplace(s2, m.next(t, a));
            }
        }
    }
    return cls;
}

struct Equivalence {
    bool equivalent = true;
    // Shortest input on which the two machines' outputs differ. For acceptors an
    // empty counterexample means the initial states disagree on the empty string.
    std::vector<SymbolId> counterexample;
};

inline Equivalence equivalent(const Dfa& d1, const Dfa& d2) {
    require(d1.kind() == d2.kind(), "equivalent: machines of different kind");
    require(d1.n_symbols() == d2.n_symbols(), "equivalent: alphabet size mismatch");
    const std::size_t n2 = d2.n_states();
    const std::size_t k = d1.n_symbols();
    auto key = [n2](StateId a, StateId b) { return static_cast<std::size_t>(a) * n2 + b; };

    constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::vector<std::size_t> parent(d1.n_states() * n2, none);
    std::vector<SymbolId> via(d1.n_states() * n2, 0);
    auto path_to = [&](std::size_t node) {
        std::vector<SymbolId> path;
        while (parent[node] != node) {
            path.push_back(via[node]);
            node = parent[node];
        }
        std::reverse(path.begin(), path.end());
        return path;
    };

    const std::size_t root = key(d1.initial(), d2.initial());
    parent[root] = root;
    if (!d1.is_transducer() && d1.label(d1.initial()) != d2.label(d2.initial())) return {false, {}};

    std::queue<std::pair<StateId, StateId>> work;
    work.emplace(d1.initial(), d2.initial());
    while (!work.empty()) {
        auto [p, q] = work.front();
        work.pop();
        const std::size_t here = key(p, q);
        for (SymbolId a = 0; a < k; ++a) {
            if (d1.emit(p, a) != d2.emit(q, a)) {
                auto cex = path_to(here);
                cex.push_back(a);
                return {false, std::move(cex)};
            }
            const StateId p2 = d1.next(p, a);
            const StateId q2 = d2.next(q, a);
            const std::size_t there = key(p2, q2);
            if (parent[there] == none) {
                parent[there] = here;
                via[there] = a;
                work.emplace(p2, q2);
            }
        }
    }
    return {};
}

// Label- and transition-preserving bijection between the reachable parts
// (initial state mapped to initial state).
inline bool isomorphic(const Dfa& d1, const Dfa& d2) {
    if (d1.kind() != d2.kind() || d1.n_symbols() != d2.n_symbols()) return false;
    const Dfa a = canonicalize(d1);
    const Dfa b = canonicalize(d2);
    if (a.n_states() != b.n_states()) return false;
    // Canonical BFS numbering is determined by structure alone, so an
    // isomorphism exists iff the canonical forms coincide.
    for (StateId s = 0; s < a.n_states(); ++s) {
        if (!a.is_transducer() && a.label(s) != b.label(s)) return false;
        for (SymbolId x = 0; x < a.n_symbols(); ++x) {
            if (a.next(s, x) != b.next(s, x)) return false;
            if (a.is_transducer() && a.output(s, x) != b.output(s, x)) return false;
        }
    }
    return true;
}

inline std::string symbols_to_string(const Dfa& d, std::span<const SymbolId> word) {
    std::string out;
    for (auto a : word) out += d.alphabet().at(a);
    return out;
}

// Graphviz rendering. Accepting states (label 1) are double circles, the
// initial state gets an incoming arrow, and parallel edges are merged.
inline std::string to_dot(const Dfa& d, std::string_view name = "dfa") {
    std::ostringstream os;
    os << "digraph " << name << " {\n";
    os << "  rankdir=LR;\n";
    os << "  __start [shape=point];\n";
    for (StateId s = 0; s < d.n_states(); ++s) {
        const bool accept = !d.is_transducer() && d.label(s) == 1;
        os << "  " << s << " [shape=" << (accept ? "doublecircle" : "circle") << "];\n";
    }
    os << "  __start -> " << d.initial() << ";\n";
    for (StateId s = 0; s < d.n_states(); ++s) {
        std::map<StateId, std::vector<std::string>> edges;
        for (SymbolId a = 0; a < d.n_symbols(); ++a) {
            std::string lbl = d.alphabet()[a];
            if (d.is_transducer()) lbl += "/" + std::to_string(d.output(s, a));
            edges[d.next(s, a)].push_back(std::move(lbl));
        }
        for (const auto& [t, lbls] : edges) {
            os << "  " << s << " -> " << t << " [label=\"";
            for (std::size_t i = 0; i < lbls.size(); ++i) os << (i ? "," : "") << lbls[i];
            os << "\"];\n";
        }
    }
    os << "}\n";
    return os.str();
}

// Transition table: state, one column per symbol, accept marker, initial marker.
// Transducer cells are written "target/output" and the accept column is empty.
inline std::string to_table_csv(const Dfa& d) {
    std::ostringstream os;
    os << "state";
    for (const auto& a : d.alphabet()) os << ',' << a;
    os << ",accept,initial\n";
    for (StateId s = 0; s < d.n_states(); ++s) {
        os << s;
        for (SymbolId a = 0; a < d.n_symbols(); ++a) {
            os << ',' << d.next(s, a);
            if (d.is_transducer()) os << '/' << d.output(s, a);
        }
        os << ',';
        if (!d.is_transducer()) os << (d.label(s) == 1 ? "*" : "");
        os << ',' << (s == d.initial() ? "->" : "") << '\n';
    }
    return os.str();
}

} // namespace noisydfa
