#pragma once

// Independent reference computations shared by the unit and acceptance suites.
// Nothing here calls the library routine it is used to check.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "noisydfa/automata.hpp"
#include "noisydfa/rng.hpp"
#include "noisydfa/rnn.hpp"

namespace oracle {

using namespace noisydfa;

inline const std::vector<std::string> abs_alphabet = {"a", "b", "$"};

inline Dfa random_dfa(Rng& rng, DfaKind kind, std::size_t max_states = 8, std::size_t n_classes = 2) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, max_states)(rng);
    std::uniform_int_distribution<StateId> pick_state(0, static_cast<StateId>(n - 1));
    std::uniform_int_distribution<ClassId> pick_class(0, static_cast<ClassId>(n_classes - 1));
    Dfa d(kind, abs_alphabet, n, pick_state(rng));
    for (StateId s = 0; s < n; ++s) {
        if (kind == DfaKind::acceptor) d.set_label(s, pick_class(rng));
        for (SymbolId a = 0; a < 3; ++a) {
            d.set_next(s, a, pick_state(rng));
            if (kind == DfaKind::transducer) d.set_output(s, a, pick_class(rng));
        }
    }
    return d;
}

// Walks the trie of all strings up to `depth` in both machines at once,
// comparing the emitted output at every node.
inline bool agree_up_to(const Dfa& x, const Dfa& y, std::size_t depth, StateId p, StateId q) {
    if (depth == 0) return true;
    for (SymbolId a = 0; a < x.n_symbols(); ++a) {
        if (x.emit(p, a) != y.emit(q, a)) return false;
        if (!agree_up_to(x, y, depth - 1, x.next(p, a), y.next(q, a))) return false;
    }
    return true;
}

inline bool agree_up_to(const Dfa& x, const Dfa& y, std::size_t depth) {
    if (!x.is_transducer() && x.label(x.initial()) != y.label(y.initial())) return false;
    return agree_up_to(x, y, depth, x.initial(), y.initial());
}

// Number of behaviourally distinct reachable states: pairs of states are
// compared on every string up to length n_states.
inline std::size_t minimal_size(const Dfa& d) {
    std::vector<char> seen(d.n_states(), 0);
    std::vector<StateId> stack{d.initial()}, reach;
    seen[d.initial()] = 1;
    while (!stack.empty()) {
        StateId s = stack.back();
        stack.pop_back();
        reach.push_back(s);
        for (SymbolId a = 0; a < d.n_symbols(); ++a)
            if (!seen[d.next(s, a)]) {
                seen[d.next(s, a)] = 1;
                stack.push_back(d.next(s, a));
            }
    }
    std::vector<StateId> reps;
    for (auto s : reach) {
        bool fresh = true;
        for (auto r : reps) {
            const bool same_label = d.is_transducer() || d.label(s) == d.label(r);
            if (same_label && agree_up_to(d, d, d.n_states(), s, r)) {
                fresh = false;
                break;
            }
        }
        if (fresh) reps.push_back(s);
    }
    return reps.size();
}

// The noisy recurrence and softmax output evaluated one scalar at a time.
struct ScalarStep {
    std::vector<double> h, y;
};

inline ScalarStep scalar_step(const RnnModel& m, const std::vector<double>& h_prev, SymbolId x,
                              const std::vector<double>* noise) {
    const auto n = m.n_hidden();
    ScalarStep s;
    s.h.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double z = m.W_xh(static_cast<Eigen::Index>(i), x) + m.b_h[static_cast<Eigen::Index>(i)];
        for (std::size_t j = 0; j < n; ++j)
            z += m.W_hh(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * h_prev[j];
        if (noise) z += h_prev[i] * (*noise)[i];
        s.h[i] = std::tanh(z);
    }
    const auto k = m.n_out();
    s.y.assign(k, 0.0);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        double o = m.b_y[static_cast<Eigen::Index>(c)];
        for (std::size_t i = 0; i < n; ++i) o += m.W_hy(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) * s.h[i];
        s.y[c] = std::exp(o);
        total += s.y[c];
    }
    for (auto& v : s.y) v /= total;
    return s;
}

// Mean cross-entropy plus L1 over a window, evaluated with scalar_step.
inline double scalar_loss(const RnnModel& m, const std::vector<SymbolId>& inputs, const std::vector<ClassId>& targets,
                          const std::vector<double>& h_in, const Matrix& noise) {
    std::vector<double> h = h_in;
    double ce = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        std::vector<double> nz;
        if (noise.size() > 0)
            for (Eigen::Index i = 0; i < noise.rows(); ++i) nz.push_back(noise(i, static_cast<Eigen::Index>(t)));
        auto s = scalar_step(m, h, inputs[t], noise.size() > 0 ? &nz : nullptr);
        ce -= std::log(s.y[targets[t]]);
        h = s.h;
    }
    double l1 = 0.0;
    for (const Matrix* w : {&m.W_xh, &m.W_hh, &m.W_hy})
        for (Eigen::Index i = 0; i < w->size(); ++i) l1 += std::abs(w->data()[i]);
    return ce / static_cast<double>(inputs.size()) + m.config.l1 * l1;
}

struct GradientCheck {
    double max_rel_error = 0.0;
    std::string worst; // "<group>[<index>]"
};

// Central differences of scalar_loss against the analytic gradients, over
// every parameter. Relative error is |a - n| / max(1e-8, |a| + |n|).
inline GradientCheck finite_difference_check(const RnnModel& m, const std::vector<SymbolId>& inputs,
                                             const std::vector<ClassId>& targets, const std::vector<double>& h_in,
                                             const Matrix& noise, const Gradients& analytic, double step = 1e-6) {
    GradientCheck out;
    RnnModel probe = m;
    auto visit = [&](const char* name, auto member, const auto& grad) {
        auto& w = probe.*member;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double keep = w.data()[i];
            w.data()[i] = keep + step;
            const double up = scalar_loss(probe, inputs, targets, h_in, noise);
            w.data()[i] = keep - step;
            const double down = scalar_loss(probe, inputs, targets, h_in, noise);
            w.data()[i] = keep;
            const double numeric = (up - down) / (2 * step);
            const double a = grad.data()[i];
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = std::string(name) + "[" + std::to_string(i) + "]";
            }
        }
    };
    visit("W_xh", &RnnModel::W_xh, analytic.W_xh);
    visit("W_hh", &RnnModel::W_hh, analytic.W_hh);
    visit("b_h", &RnnModel::b_h, analytic.b_h);
    visit("W_hy", &RnnModel::W_hy, analytic.W_hy);
    visit("b_y", &RnnModel::b_y, analytic.b_y);
    return out;
}

// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
// eigenvalues (descending) and eigenvectors as columns.
inline std::pair<std::vector<double>, std::vector<std::vector<double>>> jacobi_eigen(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return a[x][x] > a[y][y]; });
    std::vector<double> values;
    std::vector<std::vector<double>> vectors(n, std::vector<double>(n));
    for (std::size_t c = 0; c < n; ++c) {
        values.push_back(a[idx[c]][idx[c]]);
        for (std::size_t r = 0; r < n; ++r) vectors[r][c] = v[r][idx[c]];
    }
    return {values, vectors};
}

// Hand-built network realising an automaton: one unit per transition (q, x),
// on (+1) exactly when the last symbol read was x from state q. A unit can only
// fire on its own symbol, so from the zero state the network tracks a set of
// states that collapses to one after the symbol following a `$`. With a large
// gain every activation sits near +-1. Outputs follow the target state's label
// (acceptor) or the transition output (transducer).
inline RnnModel dfa_network(const Dfa& d, double gain = 8.0, double out_gain = 4.0) {
    const std::size_t k = d.n_symbols();
    const std::size_t n = d.n_states() * k;
    std::size_t n_classes = 0;
    auto out_of = [&](StateId q, SymbolId x) { return d.is_transducer() ? d.output(q, x) : d.label(d.next(q, x)); };
    for (StateId q = 0; q < d.n_states(); ++q)
        for (SymbolId x = 0; x < k; ++x) n_classes = std::max<std::size_t>(n_classes, out_of(q, x) + 1);
    n_classes = std::max<std::size_t>(n_classes, 2);
    RnnConfig c;
    c.n_hidden = n;
    auto m = RnnModel::zeros(k, n_classes, c);
    for (std::size_t u = 0; u < n; ++u) {
        const auto qu = static_cast<StateId>(u / k);
        const auto xu = static_cast<SymbolId>(u % k);
        const auto ui = static_cast<Eigen::Index>(u);
        double feeding = 0;
        for (std::size_t v = 0; v < n; ++v) {
            const auto qv = static_cast<StateId>(v / k);
            const auto xv = static_cast<SymbolId>(v % k);
            if (d.next(qv, xv) == qu) {
                m.W_hh(ui, static_cast<Eigen::Index>(v)) = gain / 2;
                feeding += 1;
            }
        }
        for (SymbolId x = 0; x < k; ++x) m.W_xh(ui, x) = x == xu ? 2 * gain : -gain * std::max(1.0, feeding);
        m.b_h[ui] = gain * (feeding / 2 - 2.5);
        const auto cls = static_cast<Eigen::Index>(out_of(qu, xu));
        m.W_hy(cls, ui) = out_gain / 2;
        m.b_y[cls] += out_gain / 2;
    }
    return m;
}

} // namespace oracle
