#pragma once

// Analysis of recorded hidden-state trajectories: active-unit detection,
// sign-pattern clustering, PCA projection, saturation and weight reports, and
// extraction of the transition table between clusters.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "noisydfa/automata.hpp"
#include "noisydfa/error.hpp"
#include "noisydfa/rnn.hpp"

namespace noisydfa {

struct ExtractThresholds {
    double act = 0.5;    // a unit is active if max |h| exceeds this somewhere
    double sat = 0.5;    // every active activation must exceed this in magnitude
    double tight = 0.05; // expected per-coordinate cluster spread
    double weight = 0.05;
    std::size_t transition_samples = 100; // member vectors tried per cluster
};

struct ActiveMask {
    std::vector<bool> active;
    double threshold = 0.5;

    std::size_t count() const { return static_cast<std::size_t>(std::count(active.begin(), active.end(), true)); }

    std::vector<std::size_t> indices() const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < active.size(); ++i)
            if (active[i]) idx.push_back(i);
        return idx;
    }
};

// Hidden states of a noise-free run over `inputs`, keeping only the steps from
// the second separator on. The steps before it descend from the zero vector,
// which is not a state of the trained dynamics.
struct AnalysisRecord {
    HiddenRecord states;                 // column j holds h at step offset + j
    std::size_t offset = 0;
    std::vector<ClassId> predictions;    // all steps, offset included
};

inline std::size_t settled_offset(std::span<const SymbolId> inputs, SymbolId separator) {
    std::size_t seen = 0;
    for (std::size_t t = 0; t < inputs.size(); ++t)
        if (inputs[t] == separator && ++seen == 2) return t;
    return 0;
}

inline AnalysisRecord record_analysis(const RnnModel& model, std::span<const SymbolId> inputs, SymbolId separator) {
    require(!inputs.empty(), "record_analysis: empty stream");
    auto run = forward_sequence(model, HiddenState::Zero(static_cast<Eigen::Index>(model.n_hidden())), inputs, {}, true);
    AnalysisRecord ar;
    ar.offset = settled_offset(inputs, separator);
    ar.states = run.record.rightCols(run.record.cols() - static_cast<Eigen::Index>(ar.offset));
    ar.predictions = std::move(run.predictions);
    return ar;
}

inline ActiveMask detect_active(const HiddenRecord& record, double tau_act = 0.5) {
    require(record.cols() > 0, "detect_active: empty record");
    ActiveMask mask;
    mask.threshold = tau_act;
    mask.active.resize(static_cast<std::size_t>(record.rows()));
    for (Eigen::Index i = 0; i < record.rows(); ++i)
        mask.active[static_cast<std::size_t>(i)] = record.row(i).cwiseAbs().maxCoeff() > tau_act;
    return mask;
}

// Sign pattern over active units: +1 / -1 per active unit, in unit order.
using SignPattern = std::vector<std::int8_t>;

template <class V>
SignPattern sign_pattern(const V& h, const std::vector<std::size_t>& active_units) {
    SignPattern p;
    p.reserve(active_units.size());
    for (auto i : active_units) p.push_back(h[static_cast<Eigen::Index>(i)] >= 0 ? 1 : -1);
    return p;
}

inline std::string pattern_string(const SignPattern& p) {
    std::string s;
    for (auto v : p) s += v > 0 ? '+' : '-';
    return s;
}

struct Cluster {
    SignPattern pattern;
    Vector center;
    std::size_t members = 0;
    double max_deviation = 0.0; // max over members and coordinates of |h - center|
    std::vector<std::size_t> member_steps;
};

struct StateClustering {
    ActiveMask mask;
    std::vector<std::size_t> active_units;
    std::vector<Cluster> clusters;
    std::vector<std::uint32_t> assignment; // cluster id per recorded step

    std::optional<std::size_t> find(const SignPattern& p) const {
        auto it = index_.find(p);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    template <class V>
    std::optional<std::size_t> classify(const V& h) const {
        return find(sign_pattern(h, active_units));
    }

    double max_deviation() const {
        double d = 0;
        for (const auto& c : clusters) d = std::max(d, c.max_deviation);
        return d;
    }

    std::map<SignPattern, std::size_t> index_;
};

// Groups recorded vectors by the sign pattern of the active units. Clusters are
// numbered in order of first appearance. Throws NotClusterable when an active
// unit is not binarized (|h| < tau_sat) at some step.
inline StateClustering cluster_states(const HiddenRecord& record, const ActiveMask& mask, double tau_sat = 0.5) {
    require(record.cols() > 0, "cluster_states: empty record");
    require(mask.active.size() == static_cast<std::size_t>(record.rows()), "cluster_states: mask size mismatch");
    StateClustering sc;
    sc.mask = mask;
    sc.active_units = mask.indices();
    sc.assignment.resize(static_cast<std::size_t>(record.cols()));
    std::vector<Vector> sums;
    for (Eigen::Index t = 0; t < record.cols(); ++t) {
        auto h = record.col(t);
        for (auto i : sc.active_units) {
            const double v = h[static_cast<Eigen::Index>(i)];
            if (std::abs(v) < tau_sat) {
                std::ostringstream os;
                os << "not clusterable: unit " << i << " has |h| = " << std::abs(v) << " < " << tau_sat
                   << " at step " << t;
                throw NotClusterable(os.str());
            }
        }
        auto p = sign_pattern(h, sc.active_units);
        auto [it, fresh] = sc.index_.emplace(p, sc.clusters.size());
        if (fresh) {
            sc.clusters.push_back({std::move(p), Vector::Zero(record.rows()), 0, 0.0, {}});
            sums.push_back(Vector::Zero(record.rows()));
        }
        const auto id = it->second;
        sc.assignment[static_cast<std::size_t>(t)] = static_cast<std::uint32_t>(id);
        sums[id] += h;
        sc.clusters[id].members++;
        sc.clusters[id].member_steps.push_back(static_cast<std::size_t>(t));
    }
    for (std::size_t c = 0; c < sc.clusters.size(); ++c)
        sc.clusters[c].center = sums[c] / static_cast<double>(sc.clusters[c].members);
    for (Eigen::Index t = 0; t < record.cols(); ++t) {
        auto& cl = sc.clusters[sc.assignment[static_cast<std::size_t>(t)]];
        cl.max_deviation = std::max(cl.max_deviation, (record.col(t) - cl.center).cwiseAbs().maxCoeff());
    }
    return sc;
}

// ---- PCA -------------------------------------------------------------------

struct PcaBasis {
    Vector mean;
    Eigen::Matrix<double, Eigen::Dynamic, 2> components; // columns: PC1, PC2
    std::array<double, 2> explained_variance{};
    double total_variance = 0.0;

    Eigen::Matrix2Xd project(const Matrix& points) const {
        return components.transpose() * (points.colwise() - mean);
    }
    Eigen::Vector2d project_one(const Vector& h) const { return components.transpose() * (h - mean); }

    std::array<double, 2> explained_ratio() const {
        if (total_variance <= 0) return {0, 0};
        return {explained_variance[0] / total_variance, explained_variance[1] / total_variance};
    }
};

// Top-2 eigenvectors of the sample covariance. Sign convention: the
// largest-magnitude entry of each component is positive.
inline PcaBasis fit_pca(const HiddenRecord& record) {
    require(record.rows() >= 2, "pca: at least two dimensions required");
    require(record.cols() >= 2, "pca: at least two vectors required");
    PcaBasis b;
    b.mean = record.rowwise().mean();
    const Matrix centered = record.colwise() - b.mean;
    const Matrix cov = centered * centered.transpose() / static_cast<double>(record.cols() - 1);
    b.total_variance = cov.trace();
    if (!(b.total_variance > 0)) fail_argument("pca: record has rank 0 (all vectors identical)");
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    const auto n = cov.rows();
    b.components.resize(n, 2);
    for (int k = 0; k < 2; ++k) {
        Vector v = es.eigenvectors().col(n - 1 - k);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v[imax] < 0) v = -v;
        b.components.col(k) = v;
        b.explained_variance[static_cast<std::size_t>(k)] = std::max(0.0, es.eigenvalues()[n - 1 - k]);
    }
    return b;
}

struct PcaProjection {
    PcaBasis basis;
    Eigen::Matrix2Xd coords;
};

inline PcaProjection pca_project(const HiddenRecord& record) {
    PcaProjection p{fit_pca(record), {}};
    p.coords = p.basis.project(record);
    return p;
}

// ---- transition extraction ---------------------------------------------------

struct TransitionTable {
    Dfa dfa;                        // state i corresponds to cluster i
    bool separator_consistent = true; // every `$` transition led to the same cluster
    std::vector<StateId> separator_targets;
};

// Member steps used as transition sources: up to `cap` evenly spaced members.
inline std::vector<std::size_t> sample_members(const Cluster& c, std::size_t cap) {
    std::vector<std::size_t> out;
    const std::size_t n = c.member_steps.size();
    const std::size_t k = std::min(n, cap);
    for (std::size_t i = 0; i < k; ++i) out.push_back(c.member_steps[i * n / k]);
    return out;
}

// For every cluster and symbol, steps the noise-free network from the cluster
// center and from up to `transition_samples` member vectors. All of them must
// land in one known cluster and produce one output class. Acceptors label
// each state by the output layer at its center; transducers label each
// transition by the output after the step.
inline TransitionTable extract_transitions(const RnnModel& model, const StateClustering& sc,
                                           const HiddenRecord& record, DfaKind kind, SymbolId separator,
                                           const ExtractThresholds& th = {}) {
    require(!sc.clusters.empty(), "extract_transitions: empty clustering");
    const std::size_t n = sc.clusters.size();
    const std::size_t k = model.n_in();
    require(separator < k, "extract_transitions: separator out of range");
    std::vector<std::string> names(k);
    for (std::size_t a = 0; a < k; ++a) names[a] = std::to_string(a);
    TransitionTable tt{Dfa(kind, names, n, 0), true, {}};

    auto output_of = [&](const Vector& h) {
        Vector o = model.b_y;
        o.noalias() += model.W_hy * h;
        return static_cast<ClassId>(argmax(o));
    };
    if (kind == DfaKind::acceptor)
        for (std::size_t c = 0; c < n; ++c) tt.dfa.set_label(static_cast<StateId>(c), output_of(sc.clusters[c].center));

    for (std::size_t c = 0; c < n; ++c) {
        std::vector<Vector> sources{sc.clusters[c].center};
        for (auto t : sample_members(sc.clusters[c], th.transition_samples))
            sources.emplace_back(record.col(static_cast<Eigen::Index>(t)));
        for (SymbolId a = 0; a < k; ++a) {
            std::optional<std::size_t> dest;
            std::optional<ClassId> out;
            for (const auto& h : sources) {
                auto step = forward_step(model, h, a, nullptr);
                auto d = sc.classify(step.h);
                if (!d) {
                    std::ostringstream os;
                    os << "cluster " << c << " on symbol " << a << " reaches unknown pattern "
                       << pattern_string(sign_pattern(step.h, sc.active_units));
                    throw NondeterministicTransition(os.str());
                }
                const ClassId y = static_cast<ClassId>(argmax(step.y));
                if (dest && *dest != *d) {
                    std::ostringstream os;
                    os << "cluster " << c << " on symbol " << a << " reaches clusters " << *dest << " and " << *d;
                    throw NondeterministicTransition(os.str());
                }
                if (out && *out != y) {
                    std::ostringstream os;
                    os << "cluster " << c << " on symbol " << a << " emits classes " << *out << " and " << y;
                    throw NondeterministicTransition(os.str());
                }
                dest = d;
                out = y;
            }
            tt.dfa.set_next(static_cast<StateId>(c), a, static_cast<StateId>(*dest));
            if (kind == DfaKind::transducer) {
                tt.dfa.set_output(static_cast<StateId>(c), a, *out);
            } else if (*out != tt.dfa.label(static_cast<StateId>(*dest))) {
                std::ostringstream os;
                os << "cluster " << c << " on symbol " << a << " emits class " << *out << " but destination "
                   << *dest << " is labelled " << tt.dfa.label(static_cast<StateId>(*dest));
                throw NondeterministicTransition(os.str());
            }
        }
    }

    // Initial state: the common destination of `$`; if they differ, the most
    // frequent one (lowest id on ties) and the table is flagged.
    std::map<StateId, std::size_t> votes;
    for (std::size_t c = 0; c < n; ++c) {
        const StateId t = tt.dfa.next(static_cast<StateId>(c), separator);
        tt.separator_targets.push_back(t);
        votes[t]++;
    }
    StateId best = votes.begin()->first;
    for (auto [s, v] : votes)
        if (v > votes[best]) best = s;
    tt.separator_consistent = votes.size() == 1;
    tt.dfa.set_initial(best);
    return tt;
}

// Renames the table's alphabet to the problem's symbol tokens.
inline Dfa with_alphabet(const Dfa& d, const std::vector<std::string>& names) {
    require(names.size() == d.n_symbols(), "with_alphabet: size mismatch");
    Dfa out(d.kind(), names, d.n_states(), d.initial());
    for (StateId s = 0; s < d.n_states(); ++s) {
        if (!d.is_transducer()) out.set_label(s, d.label(s));
        for (SymbolId a = 0; a < d.n_symbols(); ++a) {
            out.set_next(s, a, d.next(s, a));
            if (d.is_transducer()) out.set_output(s, a, d.output(s, a));
        }
    }
    return out;
}

// Transducer view of an acceptor: each transition emits the label of its target.
inline Dfa as_transducer(const Dfa& d) {
    if (d.is_transducer()) return d;
    Dfa out(DfaKind::transducer, d.alphabet(), d.n_states(), d.initial());
    for (StateId s = 0; s < d.n_states(); ++s)
        for (SymbolId a = 0; a < d.n_symbols(); ++a) {
            out.set_next(s, a, d.next(s, a));
            out.set_output(s, a, d.label(d.next(s, a)));
        }
    return out;
}

// ---- reports ------------------------------------------------------------------

struct UnitSaturation {
    std::size_t unit = 0;
    std::vector<std::size_t> histogram; // equal-width bins over [-1, 1]
    double saturated_fraction = 0.0;    // share of steps with |h| > level
};

struct SaturationReport {
    std::vector<UnitSaturation> units;
    double overall_fraction = 0.0; // pooled over all active units
    double level = 0.9;
    std::size_t bins = 0;

    double min_unit_fraction() const {
        double m = 1.0;
        for (const auto& u : units) m = std::min(m, u.saturated_fraction);
        return m;
    }
};

inline SaturationReport saturation_report(const HiddenRecord& record, const ActiveMask& mask, std::size_t bins = 40,
                                          double level = 0.9) {
    require(bins >= 1, "saturation_report: bins must be >= 1");
    SaturationReport rep;
    rep.level = level;
    rep.bins = bins;
    std::size_t hits = 0, total = 0;
    for (auto i : mask.indices()) {
        UnitSaturation u;
        u.unit = i;
        u.histogram.assign(bins, 0);
        std::size_t sat = 0;
        auto row = record.row(static_cast<Eigen::Index>(i));
        for (Eigen::Index t = 0; t < row.size(); ++t) {
            const double v = row[t];
            auto b = static_cast<std::ptrdiff_t>(std::floor((v + 1.0) / 2.0 * static_cast<double>(bins)));
            b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
            u.histogram[static_cast<std::size_t>(b)]++;
            sat += std::abs(v) > level;
        }
        u.saturated_fraction = row.size() ? static_cast<double>(sat) / static_cast<double>(row.size()) : 0.0;
        hits += sat;
        total += static_cast<std::size_t>(row.size());
        rep.units.push_back(std::move(u));
    }
    rep.overall_fraction = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
    return rep;
}

struct WeightReport {
    Matrix input_weights;     // W_xh
    Matrix recurrent_weights; // W_hh
    // Units whose outgoing recurrent weights (column of W_hh) exceed tau_w in
    // L-infinity norm.
    std::vector<std::size_t> back_projecting;
};

inline WeightReport weight_report(const RnnModel& m, double tau_w = 0.05) {
    WeightReport r{m.W_xh, m.W_hh, {}};
    for (Eigen::Index j = 0; j < m.W_hh.cols(); ++j)
        if (m.W_hh.col(j).cwiseAbs().maxCoeff() > tau_w) r.back_projecting.push_back(static_cast<std::size_t>(j));
    return r;
}

// ---- CSV writers -----------------------------------------------------------

inline void write_pca_csv(std::ostream& os, const PcaProjection& p, const StateClustering* sc) {
    os << "x,y,cluster\n";
    for (Eigen::Index t = 0; t < p.coords.cols(); ++t) {
        os << detail::fmt_double(p.coords(0, t)) << ',' << detail::fmt_double(p.coords(1, t)) << ',';
        if (sc) os << sc->assignment[static_cast<std::size_t>(t)];
        os << '\n';
    }
}

// Activation heatmap of the first `steps` symbols: one row per step.
inline void write_heatmap_csv(std::ostream& os, const HiddenRecord& record, std::span<const SymbolId> inputs,
                              const Alphabet& alphabet, std::size_t steps = 60) {
    os << "step,symbol";
    for (Eigen::Index i = 0; i < record.rows(); ++i) os << ",h" << i;
    os << '\n';
    const auto n = std::min<std::size_t>(steps, static_cast<std::size_t>(record.cols()));
    for (std::size_t t = 0; t < n; ++t) {
        os << t << ',' << alphabet.token(inputs[t]);
        for (Eigen::Index i = 0; i < record.rows(); ++i)
            os << ',' << detail::fmt_double(record(i, static_cast<Eigen::Index>(t)));
        os << '\n';
    }
}

inline void write_saturation_csv(std::ostream& os, const SaturationReport& rep) {
    os << "unit,bin_lo,bin_hi,count,saturated_fraction\n";
    for (const auto& u : rep.units) {
        for (std::size_t b = 0; b < rep.bins; ++b) {
            const double lo = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(rep.bins);
            const double hi = -1.0 + 2.0 * static_cast<double>(b + 1) / static_cast<double>(rep.bins);
            os << u.unit << ',' << detail::fmt_double(lo) << ',' << detail::fmt_double(hi) << ',' << u.histogram[b]
               << ',' << detail::fmt_double(u.saturated_fraction) << '\n';
        }
    }
}

inline void write_clusters_csv(std::ostream& os, const StateClustering& sc) {
    os << "cluster,pattern,members,max_deviation";
    for (Eigen::Index i = 0; i < (sc.clusters.empty() ? 0 : sc.clusters[0].center.size()); ++i) os << ",c" << i;
    os << '\n';
    for (std::size_t c = 0; c < sc.clusters.size(); ++c) {
        const auto& cl = sc.clusters[c];
        os << c << ',' << pattern_string(cl.pattern) << ',' << cl.members << ',' << detail::fmt_double(cl.max_deviation);
        for (Eigen::Index i = 0; i < cl.center.size(); ++i) os << ',' << detail::fmt_double(cl.center[i]);
        os << '\n';
    }
}

inline void write_weights_csv(std::ostream& os, const WeightReport& w) {
    os << "matrix,row,col,value\n";
    auto dump = [&](const char* name, const Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                os << name << ',' << i << ',' << j << ',' << detail::fmt_double(m(i, j)) << '\n';
    };
    dump("W_xh", w.input_weights);
    dump("W_hh", w.recurrent_weights);
}

} // namespace noisydfa
