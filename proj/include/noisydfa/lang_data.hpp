#pragma once

// Problem definitions: nine regular languages over {a, b} and digit-by-digit
// addition in bases 2 and 4, each with an incremental labeler, a hand-coded
// minimal automaton and random stream generators.
//
// Streams are continuous symbol sequences in which `$` separates strings. For
// the grammars the target at every position is membership of the substring
// read since the last `$` (the `$` itself emits membership of the empty
// string). For addition the inputs are aligned digit pairs, least significant
// digit first; the target is the sum digit, and at `$` the final carry.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "noisydfa/automata.hpp"
#include "noisydfa/error.hpp"
#include "noisydfa/rng.hpp"

namespace noisydfa {

class Alphabet {
public:
    Alphabet() = default;
    explicit Alphabet(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
        std::size_t seps = 0;
        for (std::size_t i = 0; i < symbols_.size(); ++i) {
            for (std::size_t j = i + 1; j < symbols_.size(); ++j)
                require(symbols_[i] != symbols_[j], "Alphabet: duplicate symbol " + symbols_[i]);
            if (symbols_[i] == "$") {
                separator_ = static_cast<SymbolId>(i);
                ++seps;
            }
        }
        require(seps == 1, "Alphabet: exactly one `$` separator required");
    }

    std::size_t size() const noexcept { return symbols_.size(); }
    const std::vector<std::string>& symbols() const noexcept { return symbols_; }
    const std::string& token(SymbolId i) const { return symbols_.at(i); }
    SymbolId separator() const noexcept { return separator_; }

    SymbolId index(std::string_view token) const {
        for (std::size_t i = 0; i < symbols_.size(); ++i)
            if (symbols_[i] == token) return static_cast<SymbolId>(i);
        fail_argument("Alphabet: unknown symbol '" + std::string(token) + "'");
    }

    bool operator==(const Alphabet&) const = default;

private:
    std::vector<std::string> symbols_;
    SymbolId separator_ = 0;
};

struct SymbolStream {
    std::vector<SymbolId> inputs;
    std::vector<ClassId> targets;
    Alphabet alphabet;
    std::size_t output_classes = 0;

    std::size_t size() const noexcept { return inputs.size(); }

    SymbolStream slice(std::size_t begin, std::size_t count) const {
        SymbolStream s{{}, {}, alphabet, output_classes};
        const auto end = std::min(inputs.size(), begin + count);
        s.inputs.assign(inputs.begin() + begin, inputs.begin() + end);
        s.targets.assign(targets.begin() + begin, targets.begin() + end);
        return s;
    }
};

enum class Problem {
    parity,
    bxa,
    tomita1,
    tomita2,
    tomita3,
    tomita4,
    tomita5,
    tomita6,
    tomita7,
    add_base2,
    add_base4,
};

inline constexpr std::array<std::string_view, 11> problem_names = {
    "parity",  "bxa",     "tomita1", "tomita2", "tomita3",  "tomita4",
    "tomita5", "tomita6", "tomita7", "add-base2", "add-base4",
};

inline std::string_view to_string(Problem p) { return problem_names[static_cast<std::size_t>(p)]; }

inline Problem parse_problem(std::string_view name) {
    for (std::size_t i = 0; i < problem_names.size(); ++i)
        if (problem_names[i] == name) return static_cast<Problem>(i);
    fail_argument("unknown problem id '" + std::string(name) + "'");
}

inline bool is_addition(Problem p) { return p == Problem::add_base2 || p == Problem::add_base4; }

namespace detail {

// Incremental scanner shared by all labelers. Holds just enough of the
// current segment to decide membership for every supported language.
struct Scan {
    std::uint64_t length = 0;
    std::uint64_t count_a = 0;
    std::uint64_t count_b = 0;
    char first = 0;
    char last = 0;
    std::uint64_t run = 0;          // length of the current run of `last`
    bool prev_a_run_odd = false;   // the a-run right before the current b-run was odd
    bool violated = false;         // sticky failure for prefix-closed conditions
    unsigned blocks = 0;            // number of maximal runs so far

    void push(char c, Problem p) {
        if (length == 0) first = c;
        if (c == last && length > 0) {
            ++run;
        } else {
            if (p == Problem::tomita3) {
                if (c == 'a' && last == 'b' && prev_a_run_odd && run % 2 == 1) violated = true;
                if (c == 'b') prev_a_run_odd = (last == 'a' && run % 2 == 1);
            }
            run = 1;
            ++blocks;
        }
        if (p == Problem::tomita2) {
            const char expected = (length % 2 == 0) ? 'a' : 'b';
            if (c != expected) violated = true;
        }
        if (p == Problem::tomita4 && c == 'b' && run >= 3) violated = true;
        last = c;
        ++length;
        if (c == 'a') ++count_a; else ++count_b;
    }

    bool member(Problem p) const {
        switch (p) {
        case Problem::parity: return count_a % 2 == 0;
        case Problem::bxa: return length >= 2 && first == 'b' && last == 'a';
        case Problem::tomita1: return count_b == 0;
        case Problem::tomita2: return !violated && length % 2 == 0;
        case Problem::tomita3:
            return !violated && !(last == 'b' && prev_a_run_odd && run % 2 == 1);
        case Problem::tomita4: return !violated;
        case Problem::tomita5: return length % 2 == 0 && count_a % 2 == 0;
        case Problem::tomita6:
            return (static_cast<std::int64_t>(count_a) - static_cast<std::int64_t>(count_b)) % 3 == 0;
        case Problem::tomita7: return blocks + (first == 'a' ? 1u : 0u) <= 4;
        default: return false;
        }
    }
};

inline Dfa grammar_dfa(Problem p) {
    // Alphabet order a, b, $. `$` returns to the start state from everywhere.
    const std::vector<std::string> ab{"a", "b", "$"};
    std::vector<std::vector<StateId>> rows;
    std::vector<ClassId> labels;
    switch (p) {
    case Problem::parity: // even, odd
        rows = {{1, 0}, {0, 1}};
        labels = {1, 0};
        break;
    case Problem::bxa: // start, started-with-a (dead), b..b, b..a
        rows = {{1, 2}, {1, 1}, {3, 2}, {3, 2}};
        labels = {0, 0, 0, 1};
        break;
    case Problem::tomita1: // only a's so far, dead
        rows = {{0, 1}, {1, 1}};
        labels = {1, 0};
        break;
    case Problem::tomita2: // expect a, expect b, dead
        rows = {{1, 2}, {2, 0}, {2, 2}};
        labels = {1, 0, 0};
        break;
    case Problem::tomita3:
        // 0 even/clean, 1 odd a-run, 2 odd b-run after odd a-run,
        // 3 even b-run after odd a-run, 4 dead
        rows = {{1, 0}, {0, 2}, {4, 3}, {1, 2}, {4, 4}};
        labels = {1, 1, 0, 1, 0};
        break;
    case Problem::tomita4: // trailing b-run of length 0, 1, 2; dead
        rows = {{0, 1}, {0, 2}, {0, 3}, {3, 3}};
        labels = {1, 1, 1, 0};
        break;
    case Problem::tomita5: // (length parity, a parity): ee, oo, oe, eo
        // a flips both, b flips length only.
        rows = {{1, 2}, {0, 3}, {3, 0}, {2, 1}};
        labels = {1, 0, 0, 0};
        break;
    case Problem::tomita6: // (#a - #b) mod 3
        rows = {{1, 2}, {2, 0}, {0, 1}};
        labels = {1, 0, 0};
        break;
    case Problem::tomita7: // b* a* b* a* phases, dead
        rows = {{1, 0}, {1, 2}, {3, 2}, {3, 4}, {4, 4}};
        labels = {1, 1, 1, 1, 0};
        break;
    default: fail_argument("grammar_dfa: not a grammar problem");
    }
    for (auto& r : rows) r.push_back(0);
    return make_acceptor(ab, rows, labels, 0);
}

inline Dfa carry_machine(unsigned base, const std::vector<std::string>& symbols) {
    Dfa d(DfaKind::transducer, symbols, 2, 0);
    const SymbolId sep = base * base;
    for (StateId carry = 0; carry < 2; ++carry) {
        for (unsigned x = 0; x < base; ++x) {
            for (unsigned y = 0; y < base; ++y) {
                const unsigned sum = x + y + carry;
                const auto a = static_cast<SymbolId>(x * base + y);
                d.set_next(carry, a, sum / base);
                d.set_output(carry, a, sum % base);
            }
        }
        d.set_next(carry, sep, 0);
        d.set_output(carry, sep, carry);
    }
    return d;
}

} // namespace detail

class GroundTruth {
public:
    explicit GroundTruth(Problem p) : problem_(p) {
        if (is_addition(p)) {
            base_ = p == Problem::add_base2 ? 2 : 4;
            std::vector<std::string> symbols;
            for (unsigned x = 0; x < base_; ++x)
                for (unsigned y = 0; y < base_; ++y) symbols.push_back(std::to_string(x) + std::to_string(y));
            symbols.emplace_back("$");
            alphabet_ = Alphabet(symbols);
            output_classes_ = base_;
            dfa_ = detail::carry_machine(base_, symbols);
        } else {
            alphabet_ = Alphabet({"a", "b", "$"});
            output_classes_ = 2;
            dfa_ = detail::grammar_dfa(p);
        }
    }

    Problem problem() const noexcept { return problem_; }
    std::string_view name() const { return to_string(problem_); }
    bool addition() const noexcept { return base_ != 0; }
    unsigned base() const noexcept { return base_; }
    const Alphabet& alphabet() const noexcept { return alphabet_; }
    std::size_t output_classes() const noexcept { return output_classes_; }
    const Dfa& minimal_dfa() const noexcept { return dfa_; }

    // Per-symbol targets for an input sequence. Prefix-causal: out[t] depends
    // only on inputs[0..t]. Implemented with counters, independently of the
    // automaton, so the two can be cross-checked.
    std::vector<ClassId> label(std::span<const SymbolId> inputs) const {
        std::vector<ClassId> out;
        out.reserve(inputs.size());
        const SymbolId sep = alphabet_.separator();
        if (addition()) {
            unsigned carry = 0;
            for (SymbolId s : inputs) {
                require(s < alphabet_.size(), "label: symbol out of range");
                if (s == sep) {
                    out.push_back(carry);
                    carry = 0;
                    continue;
                }
                const unsigned sum = s / base_ + s % base_ + carry;
                out.push_back(sum % base_);
                carry = sum / base_;
            }
            return out;
        }
        detail::Scan scan;
        for (SymbolId s : inputs) {
            require(s < alphabet_.size(), "label: symbol out of range");
            if (s == sep) scan = {};
            else scan.push(s == 0 ? 'a' : 'b', problem_);
            out.push_back(scan.member(problem_) ? 1 : 0);
        }
        return out;
    }

    SymbolStream make_stream(std::vector<SymbolId> inputs) const {
        SymbolStream st{std::move(inputs), {}, alphabet_, output_classes_};
        st.targets = label(st.inputs);
        return st;
    }

private:
    Problem problem_;
    unsigned base_ = 0;
    Alphabet alphabet_;
    std::size_t output_classes_ = 0;
    Dfa dfa_;
};

inline GroundTruth make_problem(std::string_view name) { return GroundTruth(parse_problem(name)); }

// `$` is drawn with this probability at each position.
inline constexpr double separator_probability = 1.0 / 16.0;

inline SymbolStream generate_stream(const GroundTruth& gt, std::size_t n_symbols, std::size_t max_segment,
                                    std::uint64_t seed) {
    require(n_symbols >= 1, "generate_stream: n_symbols must be >= 1");
    require(max_segment >= 1, "generate_stream: max_segment must be >= 1");
    Rng rng(seed);
    const SymbolId sep = gt.alphabet().separator();
    const auto n_regular = static_cast<SymbolId>(gt.alphabet().size() - 1);
    std::bernoulli_distribution pick_sep(separator_probability);
    std::uniform_int_distribution<SymbolId> pick_sym(0, n_regular - 1);

    std::vector<SymbolId> inputs;
    inputs.reserve(n_symbols);
    inputs.push_back(sep);
    std::size_t segment = 0;
    while (inputs.size() < n_symbols) {
        if (segment >= max_segment || pick_sep(rng)) {
            inputs.push_back(sep);
            segment = 0;
        } else {
            SymbolId s = pick_sym(rng);
            if (s >= sep) ++s;
            inputs.push_back(s);
            ++segment;
        }
    }
    return gt.make_stream(std::move(inputs));
}

inline SymbolStream generate_long_string(const GroundTruth& gt, std::size_t n_symbols, std::uint64_t seed) {
    require(n_symbols >= 2, "generate_long_string: n_symbols must be >= 2");
    Rng rng(seed);
    const SymbolId sep = gt.alphabet().separator();
    std::uniform_int_distribution<SymbolId> pick_sym(0, static_cast<SymbolId>(gt.alphabet().size() - 2));
    std::vector<SymbolId> inputs;
    inputs.reserve(n_symbols);
    inputs.push_back(sep);
    while (inputs.size() < n_symbols) {
        SymbolId s = pick_sym(rng);
        if (s >= sep) ++s;
        inputs.push_back(s);
    }
    return gt.make_stream(std::move(inputs));
}

// ---- serialization -------------------------------------------------------

// One "token target" pair per line.
inline void write_two_column(std::ostream& os, const SymbolStream& st) {
    for (std::size_t i = 0; i < st.size(); ++i) os << st.alphabet.token(st.inputs[i]) << ' ' << st.targets[i] << '\n';
}

inline SymbolStream read_two_column(std::istream& is, const GroundTruth& gt) {
    SymbolStream st{{}, {}, gt.alphabet(), gt.output_classes()};
    std::string token;
    long long target = 0;
    while (is >> token) {
        if (!(is >> target)) throw FormatError("two-column stream: missing target after '" + token + "'");
        if (target < 0 || static_cast<std::size_t>(target) >= gt.output_classes())
            throw FormatError("two-column stream: target out of range");
        st.inputs.push_back(gt.alphabet().index(token));
        st.targets.push_back(static_cast<ClassId>(target));
    }
    return st;
}

// Compact single-row form. Grammars: "<inputs>\n<outputs>\n". Addition:
// "<first digits>\n<second digits>\n<outputs>\n", with `$` in both input rows.
inline std::string to_compact(const SymbolStream& st, bool addition) {
    std::string in1, in2, out;
    for (std::size_t i = 0; i < st.size(); ++i) {
        const auto& tok = st.alphabet.token(st.inputs[i]);
        if (addition && tok.size() == 2) {
            in1 += tok[0];
            in2 += tok[1];
        } else {
            in1 += tok;
            in2 += tok;
        }
        out += static_cast<char>('0' + st.targets[i]);
    }
    return addition ? in1 + "\n" + in2 + "\n" + out + "\n" : in1 + "\n" + out + "\n";
}

inline std::vector<SymbolId> parse_compact_inputs(const GroundTruth& gt, std::string_view row1,
                                                  std::string_view row2 = {}) {
    std::vector<SymbolId> inputs;
    if (!gt.addition()) {
        for (char c : row1) inputs.push_back(gt.alphabet().index(std::string(1, c)));
        return inputs;
    }
    require(row1.size() == row2.size(), "compact addition input: rows differ in length");
    for (std::size_t i = 0; i < row1.size(); ++i) {
        if (row1[i] == '$' || row2[i] == '$') {
            require(row1[i] == row2[i], "compact addition input: `$` must be aligned");
            inputs.push_back(gt.alphabet().separator());
        } else {
            inputs.push_back(gt.alphabet().index(std::string{row1[i], row2[i]}));
        }
    }
    return inputs;
}

inline std::string classes_to_string(std::span<const ClassId> classes) {
    std::string s;
    for (auto c : classes) s += static_cast<char>('0' + c);
    return s;
}

} // namespace noisydfa
