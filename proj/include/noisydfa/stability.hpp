#pragma once

// Stability experiments: accuracy along very long strings, recovery from
// perturbations of the cluster states, and transition sweeps in PCA space.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "noisydfa/automata.hpp"
#include "noisydfa/lang_data.hpp"
#include "noisydfa/rnn.hpp"
#include "noisydfa/state_extract.hpp"

namespace noisydfa {

// Anything that consumes one symbol at a time and emits a class.
template <class P>
concept Predictor = requires(P p, SymbolId s) {
    p.reset();
    { p.step(s) } -> std::convertible_to<ClassId>;
};

class RnnPredictor {
public:
    explicit RnnPredictor(const RnnModel& m)
        : stepper_(m), h_(HiddenState::Zero(static_cast<Eigen::Index>(m.n_hidden()))) {}

    void reset() { h_.setZero(); }
    ClassId step(SymbolId s) {
        const ClassId c = stepper_.step(h_, s);
        return c;
    }
    const HiddenState& state() const noexcept { return h_; }
    bool finite() const { return h_.allFinite(); }

private:
    InferenceStepper stepper_;
    HiddenState h_;
};

class DfaPredictor {
public:
    explicit DfaPredictor(const Dfa& d) : d_(&d), s_(d.initial()) {}
    void reset() { s_ = d_->initial(); }
    ClassId step(SymbolId a) {
        const ClassId c = d_->emit(s_, a);
        s_ = d_->next(s_, a);
        return c;
    }

private:
    const Dfa* d_;
    StateId s_;
};

static_assert(Predictor<RnnPredictor>);
static_assert(Predictor<DfaPredictor>);

// Runs `n` independent work items on up to `jobs` threads. Work items must be
// independent; callers aggregate per-item results afterwards.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(jobs);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < jobs; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n; i += jobs) body(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---- long strings -----------------------------------------------------------

struct AccuracyBin {
    std::size_t first = 0; // 1-based positions, inclusive
    std::size_t last = 0;
    double mean_accuracy = 0.0;
    double min_accuracy = 0.0;
};

struct LongStringResult {
    std::size_t n_models = 0;
    std::size_t n_strings = 0;
    std::size_t length = 0;
    std::vector<std::uint32_t> correct; // per position, out of n_models * n_strings
    std::vector<std::string> failures;  // numerical failures (counted as errors from then on)

    std::size_t runs() const { return n_models * n_strings; }
    double accuracy_at(std::size_t pos) const {
        return runs() ? static_cast<double>(correct.at(pos)) / static_cast<double>(runs()) : 1.0;
    }
    bool perfect() const {
        return std::all_of(correct.begin(), correct.end(), [&](auto c) { return c == runs(); });
    }
    std::optional<std::size_t> first_imperfect() const {
        for (std::size_t i = 0; i < correct.size(); ++i)
            if (correct[i] != runs()) return i;
        return std::nullopt;
    }
    double min_accuracy() const {
        double m = 1.0;
        for (std::size_t i = 0; i < correct.size(); ++i) m = std::min(m, accuracy_at(i));
        return m;
    }

    // Log-spaced bins, `per_decade` per power of ten.
    std::vector<AccuracyBin> log_bins(std::size_t per_decade = 10) const {
        std::vector<AccuracyBin> bins;
        std::size_t first = 1;
        for (std::size_t k = 1; first <= length; ++k) {
            auto edge = static_cast<std::size_t>(std::floor(std::pow(10.0, static_cast<double>(k) / per_decade)));
            const std::size_t last = std::min(length, std::max(edge, first));
            AccuracyBin b{first, last, 0.0, 1.0};
            std::uint64_t sum = 0;
            for (std::size_t p = first; p <= last; ++p) {
                sum += correct[p - 1];
                b.min_accuracy = std::min(b.min_accuracy, accuracy_at(p - 1));
            }
            const double denom = static_cast<double>(runs()) * static_cast<double>(last - first + 1);
            b.mean_accuracy = denom > 0 ? static_cast<double>(sum) / denom : 1.0;
            bins.push_back(b);
            first = last + 1;
        }
        return bins;
    }
};

inline std::uint64_t long_string_seed(std::uint64_t seed, std::size_t k) {
    return derive_seed(seed, {seed_tag::long_string, k});
}

// Evaluates every predictor on `n_strings` strings of `length` symbols whose
// only `$` is in the first position. Models run noise-free.
template <Predictor P>
LongStringResult long_string_test(std::vector<P>& models, const GroundTruth& gt, std::size_t n_strings,
                                  std::size_t length, std::uint64_t seed, std::size_t jobs = 1) {
    LongStringResult r;
    r.n_models = models.size();
    r.n_strings = n_strings;
    r.length = length;
    r.correct.assign(length, 0);
    std::vector<std::vector<std::uint32_t>> per_model(models.size(), std::vector<std::uint32_t>(length, 0));
    std::vector<std::string> failure(models.size());
    for (std::size_t k = 0; k < n_strings; ++k) {
        const SymbolStream s = generate_long_string(gt, length, long_string_seed(seed, k));
        parallel_for(models.size(), jobs, [&](std::size_t mi) {
            if (!failure[mi].empty()) return;
            P& p = models[mi];
            p.reset();
            auto& hits = per_model[mi];
            for (std::size_t t = 0; t < length; ++t) hits[t] += p.step(s.inputs[t]) == s.targets[t];
            if constexpr (requires { p.finite(); }) {
                if (!p.finite()) failure[mi] = "model " + std::to_string(mi) + ": non-finite state on string " + std::to_string(k);
            }
        });
    }
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
        if (!failure[mi].empty()) r.failures.push_back(failure[mi]);
        for (std::size_t t = 0; t < length; ++t) r.correct[t] += per_model[mi][t];
    }
    return r;
}

// First position where network and automaton disagree, if any.
template <Predictor A, Predictor B>
std::optional<std::size_t> divergence_position(A& a, B& b, std::span<const SymbolId> inputs) {
    a.reset();
    b.reset();
    for (std::size_t t = 0; t < inputs.size(); ++t)
        if (a.step(inputs[t]) != b.step(inputs[t])) return t;
    return std::nullopt;
}

inline void write_long_string_csv(std::ostream& os, const LongStringResult& r, std::size_t per_decade = 10) {
    os << "position_first,position_last,mean_accuracy,min_accuracy\n";
    for (const auto& b : r.log_bins(per_decade))
        os << b.first << ',' << b.last << ',' << detail::fmt_double(b.mean_accuracy) << ','
           << detail::fmt_double(b.min_accuracy) << '\n';
}

// ---- perturbations ----------------------------------------------------------

struct PerturbationConfig {
    std::size_t n_trials = 1000;       // per (cluster, string) combination
    std::size_t horizon = 5;
    std::size_t step_budget = 100000;  // forward steps per perturbation level
    std::uint64_t seed = 1;
    std::size_t jobs = 1;
};

struct PerturbationResult {
    double sigma = 0.0;
    std::vector<double> dispersion;     // t = 0..horizon
    std::size_t trials = 0;
    std::size_t matching_trials = 0;     // every step landed in the expected cluster
    bool enumerated = true;              // all (cluster, string) combinations covered
    std::size_t trials_per_combination = 0;
    // agreement[c * n_symbols + a]: all first steps from cluster c on symbol a
    // reached the tabulated destination.
    std::vector<bool> agreement;

    double match_rate() const { return trials ? static_cast<double>(matching_trials) / static_cast<double>(trials) : 1.0; }
};

namespace detail {

inline std::uint64_t double_bits(double v) {
    std::uint64_t u = 0;
    std::memcpy(&u, &v, sizeof u);
    return u;
}

inline double active_distance(const Vector& h, const Vector& c, const std::vector<std::size_t>& active) {
    double s = 0.0;
    for (auto i : active) {
        const double d = h[static_cast<Eigen::Index>(i)] - c[static_cast<Eigen::Index>(i)];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace detail

// Starts at each cluster center plus N(0, sigma²) on every component, feeds
// input strings of length `horizon`, and measures the distance (over active
// units) to the center of the cluster the transition table predicts. When
// every (cluster, string) pair fits the step budget they are enumerated,
// otherwise (cluster, string) pairs are sampled uniformly.
inline PerturbationResult perturb_and_track(const RnnModel& model, const StateClustering& sc, const Dfa& table,
                                            double sigma, const PerturbationConfig& cfg = {}) {
    require(!sc.clusters.empty(), "perturb_and_track: empty clustering");
    require(table.n_states() == sc.clusters.size(), "perturb_and_track: table/clustering size mismatch");
    require(cfg.horizon >= 1, "perturb_and_track: horizon must be >= 1");
    const std::size_t n_clusters = sc.clusters.size();
    const std::size_t k = table.n_symbols();
    const std::size_t H = cfg.horizon;

    double n_strings_d = std::pow(static_cast<double>(k), static_cast<double>(H));
    const double combos_d = n_strings_d * static_cast<double>(n_clusters);
    const double steps_per_trial = static_cast<double>(H);

    PerturbationResult res;
    res.sigma = sigma;
    std::size_t n_items = 0;
    std::size_t trials_per = 0;
    if (combos_d * steps_per_trial <= static_cast<double>(cfg.step_budget)) {
        n_items = static_cast<std::size_t>(combos_d);
        trials_per = std::clamp<std::size_t>(
            static_cast<std::size_t>(static_cast<double>(cfg.step_budget) / (combos_d * steps_per_trial)), 1,
            cfg.n_trials);
    } else {
        res.enumerated = false;
        n_items = std::max<std::size_t>(1, cfg.step_budget / H);
        trials_per = 1;
    }
    res.trials_per_combination = trials_per;
    const auto n_strings = static_cast<std::size_t>(n_strings_d);

    struct Partial {
        std::vector<double> dispersion;
        std::size_t trials = 0, matching = 0;
        std::vector<std::pair<std::size_t, bool>> first_steps; // (cluster*k+symbol, ok)
    };
    // Fixed chunking keeps the floating-point summation order independent of `jobs`.
    constexpr std::size_t n_chunks = 16;
    std::vector<Partial> parts(n_chunks);
    const std::uint64_t sigma_tag = detail::double_bits(sigma);

    parallel_for(n_chunks, cfg.jobs, [&](std::size_t chunk) {
        Partial& part = parts[chunk];
        part.dispersion.assign(H + 1, 0.0);
        InferenceStepper stepper(model);
        HiddenState h(static_cast<Eigen::Index>(model.n_hidden()));
        std::vector<SymbolId> word(H);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (std::size_t item = chunk; item < n_items; item += n_chunks) {
            Rng rng(derive_seed(cfg.seed, {seed_tag::perturbation, sigma_tag, item}));
            std::size_t cluster = 0;
            if (res.enumerated) {
                cluster = item / n_strings;
                std::size_t code = item % n_strings;
                for (std::size_t i = 0; i < H; ++i) {
                    word[i] = static_cast<SymbolId>(code % k);
                    code /= k;
                }
            } else {
                cluster = std::uniform_int_distribution<std::size_t>(0, n_clusters - 1)(rng);
                for (auto& w : word) w = std::uniform_int_distribution<SymbolId>(0, static_cast<SymbolId>(k - 1))(rng);
            }
            for (std::size_t trial = 0; trial < trials_per; ++trial) {
                const Vector& c0 = sc.clusters[cluster].center;
                for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = c0[i] + sigma * gauss(rng);
                part.dispersion[0] += detail::active_distance(h, c0, sc.active_units);
                StateId expected = static_cast<StateId>(cluster);
                bool ok = true;
                for (std::size_t t = 0; t < H; ++t) {
                    stepper.step(h, word[t]);
                    expected = table.next(expected, word[t]);
                    const Vector& ce = sc.clusters[expected].center;
                    part.dispersion[t + 1] += detail::active_distance(h, ce, sc.active_units);
                    const bool here = sign_pattern(h, sc.active_units) == sc.clusters[expected].pattern;
                    if (t == 0) part.first_steps.emplace_back(cluster * k + word[0], here);
                    ok = ok && here;
                }
                part.trials++;
                part.matching += ok;
            }
        }
    });

    res.dispersion.assign(H + 1, 0.0);
    res.agreement.assign(n_clusters * k, true);
    for (const auto& p : parts) {
        for (std::size_t t = 0; t <= H; ++t) res.dispersion[t] += p.dispersion.empty() ? 0.0 : p.dispersion[t];
        res.trials += p.trials;
        res.matching_trials += p.matching;
        for (auto [idx, ok] : p.first_steps)
            if (!ok) res.agreement[idx] = false;
    }
    if (res.trials)
        for (auto& d : res.dispersion) d /= static_cast<double>(res.trials);
    return res;
}

inline void write_dispersion_csv(std::ostream& os, const std::vector<PerturbationResult>& results) {
    os << "sigma_p,t,dispersion,match_rate\n";
    for (const auto& r : results)
        for (std::size_t t = 0; t < r.dispersion.size(); ++t)
            os << detail::fmt_double(r.sigma) << ',' << t << ',' << detail::fmt_double(r.dispersion[t]) << ','
               << detail::fmt_double(r.match_rate()) << '\n';
}

// ---- transition sweep ---------------------------------------------------------

struct SweepPoint {
    std::size_t cluster = 0;
    SymbolId symbol = 0;
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    std::optional<std::size_t> destination; // cluster of the destination, if any
    Vector end;                              // destination state (full vector)
};

// For every cluster and symbol, steps sampled member vectors once and reports
// start/destination in the 2-D PCA basis.
inline std::vector<SweepPoint> transition_sweep(const RnnModel& model, const StateClustering& sc,
                                                const HiddenRecord& record, const PcaBasis& basis,
                                                std::size_t samples_per_cluster = 100) {
    std::vector<SweepPoint> out;
    HiddenState h;
    InferenceStepper stepper(model);
    for (std::size_t c = 0; c < sc.clusters.size(); ++c) {
        const auto members = sample_members(sc.clusters[c], samples_per_cluster);
        for (SymbolId a = 0; a < model.n_in(); ++a) {
            for (auto t : members) {
                const Vector start = record.col(static_cast<Eigen::Index>(t));
                h = start;
                stepper.step(h, a);
                const auto p0 = basis.project_one(start);
                const auto p1 = basis.project_one(h);
                out.push_back({c, a, p0[0], p0[1], p1[0], p1[1], sc.classify(h), h});
            }
        }
    }
    return out;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& pts, const Alphabet& alphabet) {
    os << "cluster,symbol,x0,y0,x1,y1,destination\n";
    for (const auto& p : pts) {
        os << p.cluster << ',' << alphabet.token(p.symbol) << ',' << detail::fmt_double(p.x0) << ','
           << detail::fmt_double(p.y0) << ',' << detail::fmt_double(p.x1) << ',' << detail::fmt_double(p.y1) << ',';
        if (p.destination) os << *p.destination;
        os << '\n';
    }
}

} // namespace noisydfa
