#pragma once

// Experiment configuration and the batch pipeline: train an ensemble, extract
// automata, run stability tests, and summarize everything on disk.
//
// Output layout under <output_dir>/<problem>/:
//   config.txt                     effective configuration
//   seed-<s>/model.txt, trace.csv, train.csv
//   seed-<s>/extract.csv, clusters.csv, pca.csv, heatmap.csv, saturation.csv,
//            weights.csv, transitions.csv, raw.dot, minimal.dot, minimal.csv
//   long_string.csv, stability.csv, dispersion-<s>.csv, sweep-<s>.csv
//
// Randomness: ensemble member k uses seed s = seed + k; its weights, noise,
// streams and stability draws derive from s through derive_seed tags.

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "noisydfa/automata.hpp"
#include "noisydfa/lang_data.hpp"
#include "noisydfa/rnn.hpp"
#include "noisydfa/stability.hpp"
#include "noisydfa/state_extract.hpp"
#include "noisydfa/svg.hpp"

namespace noisydfa {

namespace fs = std::filesystem;

inline constexpr const char* output_env_var = "NOISYDFA_OUTPUT";

struct StabilityConfig {
    std::size_t long_strings = 10;
    std::size_t long_length = 1000000;
    std::vector<double> sigmas{0.05, 0.1, 0.2};
    std::size_t trials = 1000;
    std::size_t horizon = 5;
    std::size_t step_budget = 100000;
    std::size_t sweep_samples = 100;
};

struct ExperimentConfig {
    std::string problem = "tomita3";
    RnnConfig rnn;
    std::uint64_t seed = 1;
    std::size_t seeds = 1;
    std::size_t train_symbols = 100000;
    std::size_t val_symbols = 0; // 0: 100000 for grammars, 50000 for addition
    std::size_t max_segment = 100;
    ExtractThresholds thresholds;
    StabilityConfig stability;
    std::string output_dir; // empty: $NOISYDFA_OUTPUT, else ./runs
    std::size_t jobs = 1;
    bool svg = false;

    std::uint64_t member_seed(std::size_t k) const { return seed + k; }

    std::size_t validation_symbols(const GroundTruth& gt) const {
        if (val_symbols) return val_symbols;
        return gt.addition() ? 50000 : 100000;
    }

    fs::path output_root() const {
        if (!output_dir.empty()) return output_dir;
        if (const char* env = std::getenv(output_env_var); env && *env) return env;
        return "runs";
    }
    fs::path problem_dir() const { return output_root() / problem; }
    fs::path member_dir(std::uint64_t s) const { return problem_dir() / ("seed-" + std::to_string(s)); }

    void validate() const {
        (void)parse_problem(problem);
        rnn.validate();
        require(seeds >= 1, "config: seeds must be >= 1");
        require(train_symbols >= 2, "config: train_symbols must be >= 2");
        require(max_segment >= 1, "config: max_segment must be >= 1");
        require(stability.long_length >= 2, "config: long_length must be >= 2");
        require(stability.horizon >= 1, "config: horizon must be >= 1");
        require(jobs >= 1, "config: jobs must be >= 1");
        for (double s : stability.sigmas) require(s >= 0, "config: sigmas must be nonnegative");
    }
};

// ---- key=value parsing --------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        fail_argument("config: bad value '" + v + "' for " + key);
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    fail_argument("config: bad boolean '" + v + "' for " + key);
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
    return out;
}

} // namespace detail

struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
    using detail::fmt_double;
    using E = ExperimentConfig;
    auto size_key = [](std::string name, std::string help, auto member) {
        return ConfigKey{name, std::move(help),
                         [member, name](E& c, const std::string& v) { member(c) = detail::parse_number<std::size_t>(name, v); },
                         [member](const E& c) { return std::to_string(member(const_cast<E&>(c))); }};
    };
    auto real_key = [](std::string name, std::string help, auto member) {
        return ConfigKey{name, std::move(help),
                         [member, name](E& c, const std::string& v) { member(c) = detail::parse_number<double>(name, v); },
                         [member](const E& c) { return fmt_double(member(const_cast<E&>(c))); }};
    };
    static const std::vector<ConfigKey> keys = {
        {"problem", "parity, bxa, tomita1..tomita7, add-base2 or add-base4",
         [](E& c, const std::string& v) {
             (void)parse_problem(v);
             c.problem = v;
         },
         [](const E& c) { return c.problem; }},
        size_key("n_hidden", "recurrent units", [](E& c) -> std::size_t& { return c.rnn.n_hidden; }),
        real_key("nu", "noise standard deviation", [](E& c) -> double& { return c.rnn.nu; }),
        real_key("l1", "L1 penalty on weight matrices", [](E& c) -> double& { return c.rnn.l1; }),
        real_key("lr", "learning rate", [](E& c) -> double& { return c.rnn.lr; }),
        real_key("clip", "per-component gradient clamp", [](E& c) -> double& { return c.rnn.clip; }),
        size_key("bptt_steps", "truncated BPTT window", [](E& c) -> std::size_t& { return c.rnn.bptt_steps; }),
        size_key("epochs", "training epochs", [](E& c) -> std::size_t& { return c.rnn.epochs; }),
        size_key("min_epochs", "earliest epoch at which training may stop",
                 [](E& c) -> std::size_t& { return c.rnn.min_epochs; }),
        {"noise_ramp", "grow nu linearly from 0",
         [](E& c, const std::string& v) { c.rnn.noise_ramp = detail::parse_bool("noise_ramp", v); },
         [](const E& c) { return std::string(c.rnn.noise_ramp ? "1" : "0"); }},
        size_key("ramp_epochs", "ramp length in epochs (0: all epochs)",
                 [](E& c) -> std::size_t& { return c.rnn.ramp_epochs; }),
        real_key("init_scale", "initial weights ~ U(-s, s)", [](E& c) -> double& { return c.rnn.init_scale; }),
        {"seed", "seed of the first ensemble member",
         [](E& c, const std::string& v) { c.seed = detail::parse_number<std::uint64_t>("seed", v); },
         [](const E& c) { return std::to_string(c.seed); }},
        size_key("seeds", "ensemble size", [](E& c) -> std::size_t& { return c.seeds; }),
        size_key("train_symbols", "training stream length", [](E& c) -> std::size_t& { return c.train_symbols; }),
        size_key("val_symbols", "validation stream length (0: problem default)",
                 [](E& c) -> std::size_t& { return c.val_symbols; }),
        size_key("max_segment", "longest separator-free segment", [](E& c) -> std::size_t& { return c.max_segment; }),
        real_key("tau_act", "activity threshold", [](E& c) -> double& { return c.thresholds.act; }),
        real_key("tau_sat", "saturation threshold for clustering", [](E& c) -> double& { return c.thresholds.sat; }),
        real_key("tau_tight", "expected cluster spread", [](E& c) -> double& { return c.thresholds.tight; }),
        real_key("tau_w", "back-projection weight threshold", [](E& c) -> double& { return c.thresholds.weight; }),
        size_key("transition_samples", "member vectors tried per cluster and symbol",
                 [](E& c) -> std::size_t& { return c.thresholds.transition_samples; }),
        size_key("long_strings", "long strings per model", [](E& c) -> std::size_t& { return c.stability.long_strings; }),
        size_key("long_length", "long string length", [](E& c) -> std::size_t& { return c.stability.long_length; }),
        {"sigmas", "comma-separated perturbation levels",
         [](E& c, const std::string& v) { c.stability.sigmas = detail::parse_list("sigmas", v); },
         [](const E& c) {
             std::string s;
             for (double v : c.stability.sigmas) s += (s.empty() ? "" : ",") + fmt_double(v);
             return s;
         }},
        size_key("trials", "perturbation trials per cluster and string", [](E& c) -> std::size_t& { return c.stability.trials; }),
        size_key("horizon", "perturbation steps", [](E& c) -> std::size_t& { return c.stability.horizon; }),
        size_key("step_budget", "forward steps per perturbation level",
                 [](E& c) -> std::size_t& { return c.stability.step_budget; }),
        size_key("sweep_samples", "member vectors per cluster in the sweep",
                 [](E& c) -> std::size_t& { return c.stability.sweep_samples; }),
        {"output_dir", "output root (default $NOISYDFA_OUTPUT or ./runs)",
         [](E& c, const std::string& v) { c.output_dir = v; }, [](const E& c) { return c.output_dir; }},
        size_key("jobs", "worker threads", [](E& c) -> std::size_t& { return c.jobs; }),
        {"svg", "also render SVG plots", [](E& c, const std::string& v) { c.svg = detail::parse_bool("svg", v); },
         [](const E& c) { return std::string(c.svg ? "1" : "0"); }},
    };
    return keys;
}

inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
    for (const auto& k : config_keys())
        if (k.name == key) return k.set(c, value);
    fail_argument("config: unknown key '" + key + "'");
}

// Flat key=value lines; `#` starts a comment.
inline void parse_config(std::istream& is, ExperimentConfig& c, const std::string& source = "config") {
    std::string line;
    for (std::size_t n = 1; std::getline(is, line); ++n) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) fail_argument(source + ":" + std::to_string(n) + ": expected key = value");
        try {
            set_config_value(c, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
        } catch (const Error& e) {
            fail_argument(source + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

inline ExperimentConfig load_config(const fs::path& path, ExperimentConfig c = {}) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open config file " + path.string());
    parse_config(is, c, path.string());
    return c;
}

inline void write_config(std::ostream& os, const ExperimentConfig& c) {
    for (const auto& k : config_keys()) os << k.name << " = " << k.get(c) << '\n';
}

// ---- small CSV tables ----------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name, const std::string& source) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw FormatError(source + ": missing column '" + name + "'");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline CsvTable read_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(is, line) || line.empty()) throw FormatError(path.string() + ": missing header");
    t.header = split_csv_line(line);
    for (std::size_t n = 2; std::getline(is, line); ++n) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw FormatError(path.string() + ":" + std::to_string(n) + ": expected " +
                              std::to_string(t.header.size()) + " fields, found " + std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline double csv_number(const std::string& cell, const fs::path& path) {
    double v = 0;
    auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw FormatError(path.string() + ": bad number '" + cell + "'");
    return v;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path.string());
    os << text;
}

template <class F>
void write_file(const fs::path& path, F&& fill) {
    std::ostringstream os;
    fill(os);
    write_text(path, os.str());
}

// ---- training -------------------------------------------------------------------

struct Streams {
    SymbolStream train, val;
};

inline Streams member_streams(const ExperimentConfig& c, const GroundTruth& gt, std::uint64_t seed) {
    return {generate_stream(gt, c.train_symbols, c.max_segment, derive_seed(seed, {seed_tag::train_stream})),
            generate_stream(gt, c.validation_symbols(gt), c.max_segment, derive_seed(seed, {seed_tag::val_stream}))};
}

struct TrainResult {
    std::uint64_t seed = 0;
    RnnModel model;
    TrainingTrace trace;
};

inline TrainResult train_member(const ExperimentConfig& c, const GroundTruth& gt, std::uint64_t seed,
                                const Streams& streams, const TrainCallbacks& callbacks = {}) {
    RnnConfig rc = c.rnn;
    rc.rng_seed = seed;
    auto model = RnnModel::random(gt.alphabet().size(), gt.output_classes(), rc);
    auto trace = train(model, streams.train, streams.val, callbacks);
    return {seed, std::move(model), std::move(trace)};
}

inline void write_train_artifacts(const fs::path& dir, const TrainResult& r) {
    fs::create_directories(dir);
    save_model((dir / "model.txt").string(), r.model);
    write_file(dir / "trace.csv", [&](std::ostream& os) { write_trace_csv(os, r.trace); });
    const EpochRecord* sel = nullptr;
    for (const auto& e : r.trace.epochs)
        if (e.epoch == r.trace.selected_epoch) sel = &e;
    write_file(dir / "train.csv", [&](std::ostream& os) {
        os << "seed,converged,selected_epoch,epochs_run,train_acc,val_acc,failure\n";
        os << r.seed << ',' << (r.trace.converged ? 1 : 0) << ',' << r.trace.selected_epoch << ','
           << r.trace.epochs.size() << ',' << (sel ? detail::fmt_double(sel->train_acc) : "") << ','
           << (sel ? detail::fmt_double(sel->val_acc) : "") << ',' << (r.trace.failure ? "numerical" : "") << '\n';
    });
}

// ---- extraction -----------------------------------------------------------------

enum class Verdict { equivalent, inequivalent, not_clusterable, nondeterministic };

inline std::string_view to_string(Verdict v) {
    switch (v) {
    case Verdict::equivalent: return "equivalent";
    case Verdict::inequivalent: return "inequivalent";
    case Verdict::not_clusterable: return "not-clusterable";
    case Verdict::nondeterministic: return "nondeterministic";
    }
    return "?";
}

inline ErrorKind error_kind(Verdict v) {
    switch (v) {
    case Verdict::inequivalent: return ErrorKind::inequivalent;
    case Verdict::not_clusterable: return ErrorKind::not_clusterable;
    case Verdict::nondeterministic: return ErrorKind::nondeterministic_transition;
    default: return ErrorKind::invalid_argument;
    }
}

struct Extraction {
    Verdict verdict = Verdict::not_clusterable;
    std::string message;
    AnalysisRecord record;
    ActiveMask mask;
    SaturationReport saturation;
    WeightReport weights;
    std::optional<StateClustering> clustering;
    std::optional<TransitionTable> table;
    std::optional<Dfa> raw;     // table over the problem's alphabet
    std::optional<Dfa> minimal;
    std::optional<Equivalence> equivalence;
    // Fraction of scored validation steps where the table, run from its
    // initial state over the whole stream, emits the network's prediction.
    std::optional<double> replay_agreement;

    bool ok() const { return verdict == Verdict::equivalent; }
    std::size_t n_clusters() const { return clustering ? clustering->clusters.size() : 0; }
};

inline double replay_agreement(const Dfa& table, std::span<const SymbolId> inputs, std::span<const ClassId> predictions,
                               SymbolId separator) {
    const auto out = run(table, inputs);
    const std::size_t from = std::min(first_scored(inputs, separator), out.size());
    return accuracy(std::span<const ClassId>(out).subspan(from), predictions.subspan(from));
}

inline Extraction extract(const ExperimentConfig& c, const GroundTruth& gt, const RnnModel& model,
                          const SymbolStream& val) {
    const auto& th = c.thresholds;
    const SymbolId sep = gt.alphabet().separator();
    Extraction ex;
    ex.record = record_analysis(model, val.inputs, sep);
    ex.mask = detect_active(ex.record.states, th.act);
    ex.saturation = saturation_report(ex.record.states, ex.mask);
    ex.weights = weight_report(model, th.weight);
    try {
        ex.clustering = cluster_states(ex.record.states, ex.mask, th.sat);
    } catch (const NotClusterable& e) {
        ex.verdict = Verdict::not_clusterable;
        ex.message = e.what();
        return ex;
    }
    const auto kind = gt.addition() ? DfaKind::transducer : DfaKind::acceptor;
    try {
        ex.table = extract_transitions(model, *ex.clustering, ex.record.states, kind, sep, th);
    } catch (const NondeterministicTransition& e) {
        ex.verdict = Verdict::nondeterministic;
        ex.message = e.what();
        return ex;
    }
    ex.raw = with_alphabet(ex.table->dfa, gt.alphabet().symbols());
    ex.minimal = minimize(*ex.raw);
    ex.equivalence = equivalent(*ex.minimal, gt.minimal_dfa());
    ex.replay_agreement = replay_agreement(*ex.raw, val.inputs, ex.record.predictions, sep);
    if (ex.equivalence->equivalent) {
        ex.verdict = Verdict::equivalent;
        ex.message = "equivalent, minimal states = " + std::to_string(ex.minimal->n_states());
    } else {
        ex.verdict = Verdict::inequivalent;
        ex.message = "inequivalent, counterexample '" + symbols_to_string(*ex.minimal, ex.equivalence->counterexample) + "'";
    }
    if (!ex.table->separator_consistent) ex.message += " ($ transitions enter different clusters)";
    return ex;
}

inline void write_extract_artifacts(const fs::path& dir, const ExperimentConfig& c, const GroundTruth& gt,
                                    const SymbolStream& val, const Extraction& ex) {
    fs::create_directories(dir);
    const auto settled = std::span<const SymbolId>(val.inputs).subspan(ex.record.offset);
    write_file(dir / "heatmap.csv", [&](std::ostream& os) { write_heatmap_csv(os, ex.record.states, settled, gt.alphabet()); });
    write_file(dir / "saturation.csv", [&](std::ostream& os) { write_saturation_csv(os, ex.saturation); });
    write_file(dir / "weights.csv", [&](std::ostream& os) { write_weights_csv(os, ex.weights); });
    std::optional<PcaProjection> pca;
    try {
        pca = pca_project(ex.record.states);
    } catch (const Error&) {
    }
    if (pca) {
        write_file(dir / "pca.csv", [&](std::ostream& os) { write_pca_csv(os, *pca, ex.clustering ? &*ex.clustering : nullptr); });
        if (c.svg) {
            std::map<std::size_t, svg::Series> groups;
            const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(pca->coords.cols()), 5000);
            for (std::size_t t = 0; t < limit; ++t) {
                const std::size_t id = ex.clustering ? ex.clustering->assignment[t] : 0;
                auto& g = groups[id];
                g.name = ex.clustering ? "cluster " + std::to_string(id) : "states";
                g.x.push_back(pca->coords(0, static_cast<Eigen::Index>(t)));
                g.y.push_back(pca->coords(1, static_cast<Eigen::Index>(t)));
            }
            std::vector<svg::Series> series;
            for (auto& [id, g] : groups) series.push_back(std::move(g));
            write_file(dir / "pca.svg", [&](std::ostream& os) {
                svg::scatter_plot(os, series, {gt.name().data() + std::string(" hidden states"), "PC1", "PC2"});
            });
        }
    }
    if (ex.clustering) write_file(dir / "clusters.csv", [&](std::ostream& os) { write_clusters_csv(os, *ex.clustering); });
    if (ex.raw) {
        write_text(dir / "transitions.csv", to_table_csv(*ex.raw));
        write_text(dir / "raw.dot", to_dot(*ex.raw, "extracted"));
        write_text(dir / "minimal.dot", to_dot(*ex.minimal, "minimal"));
        write_text(dir / "minimal.csv", to_table_csv(*ex.minimal));
    }
    const auto back = ex.weights.back_projecting;
    std::string back_list;
    for (auto u : back) back_list += (back_list.empty() ? "" : " ") + std::to_string(u);
    write_file(dir / "extract.csv", [&](std::ostream& os) {
        os << "verdict,active_units,clusters,minimal_states,saturated_fraction,min_unit_saturation,"
              "max_deviation,replay_agreement,back_projecting\n";
        os << to_string(ex.verdict) << ',' << ex.mask.count() << ',' << ex.n_clusters() << ','
           << (ex.minimal ? std::to_string(ex.minimal->n_states()) : "") << ','
           << detail::fmt_double(ex.saturation.overall_fraction) << ','
           << detail::fmt_double(ex.saturation.min_unit_fraction()) << ','
           << (ex.clustering ? detail::fmt_double(ex.clustering->max_deviation()) : "") << ','
           << (ex.replay_agreement ? detail::fmt_double(*ex.replay_agreement) : "") << ',' << back_list << '\n';
    });
    write_text(dir / "extract.txt", ex.message + '\n');
}

// ---- stability ------------------------------------------------------------------

inline LongStringResult long_strings(const ExperimentConfig& c, const GroundTruth& gt,
                                     const std::vector<const RnnModel*>& models) {
    std::vector<RnnPredictor> preds;
    for (const auto* m : models) preds.emplace_back(*m);
    return long_string_test(preds, gt, c.stability.long_strings, c.stability.long_length, c.seed, c.jobs);
}

inline PerturbationConfig perturbation_config(const ExperimentConfig& c, std::uint64_t member_seed) {
    return {c.stability.trials, c.stability.horizon, c.stability.step_budget,
            derive_seed(member_seed, {seed_tag::perturbation}), c.jobs};
}

inline std::vector<PerturbationResult> perturbations(const ExperimentConfig& c, const RnnModel& model,
                                                     const Extraction& ex, std::uint64_t member_seed) {
    require(ex.clustering && ex.table, "perturbations: extraction incomplete");
    std::vector<PerturbationResult> out;
    for (double sigma : c.stability.sigmas)
        out.push_back(perturb_and_track(model, *ex.clustering, ex.table->dfa, sigma, perturbation_config(c, member_seed)));
    return out;
}

inline void write_long_string_artifacts(const fs::path& dir, const ExperimentConfig& c, const LongStringResult& r,
                                        const std::string& label) {
    fs::create_directories(dir);
    write_file(dir / "long_string.csv", [&](std::ostream& os) { write_long_string_csv(os, r); });
    if (!c.svg) return;
    svg::Series s{label, {}, {}};
    for (const auto& b : r.log_bins()) {
        s.x.push_back(static_cast<double>(b.last));
        s.y.push_back(b.mean_accuracy);
    }
    write_file(dir / "long_string.svg", [&](std::ostream& os) {
        svg::line_plot(os, {s}, {"accuracy versus position", "position", "accuracy", true});
    });
}

inline void write_perturbation_artifacts(const fs::path& dir, const ExperimentConfig& c, std::uint64_t seed,
                                         const std::vector<PerturbationResult>& results) {
    fs::create_directories(dir);
    write_file(dir / ("dispersion-" + std::to_string(seed) + ".csv"),
               [&](std::ostream& os) { write_dispersion_csv(os, results); });
    if (!c.svg) return;
    std::vector<svg::Series> series;
    for (const auto& r : results) {
        svg::Series s{"sigma " + detail::fmt_double(r.sigma), {}, {}};
        for (std::size_t t = 0; t < r.dispersion.size(); ++t) {
            s.x.push_back(static_cast<double>(t));
            s.y.push_back(r.dispersion[t]);
        }
        series.push_back(std::move(s));
    }
    write_file(dir / ("dispersion-" + std::to_string(seed) + ".svg"),
               [&](std::ostream& os) { svg::line_plot(os, series, {"dispersion after perturbation", "step", "dispersion"}); });
}

inline void write_sweep_artifacts(const fs::path& dir, const ExperimentConfig& c, const GroundTruth& gt,
                                  const RnnModel& model, const Extraction& ex, std::uint64_t seed) {
    if (!ex.clustering) return;
    PcaBasis basis;
    try {
        basis = fit_pca(ex.record.states);
    } catch (const Error&) {
        return;
    }
    auto pts = transition_sweep(model, *ex.clustering, ex.record.states, basis, c.stability.sweep_samples);
    write_file(dir / ("sweep-" + std::to_string(seed) + ".csv"),
               [&](std::ostream& os) { write_sweep_csv(os, pts, gt.alphabet()); });
}

// One row per (seed, sigma) plus the ensemble's long-string accuracy.
struct StabilityRow {
    std::uint64_t seed = 0;
    double sigma = 0;
    double dispersion_end = 0;
    double match_rate = 0;
};

inline void write_stability_summary(const fs::path& dir, const std::optional<LongStringResult>& ls,
                                    const std::vector<StabilityRow>& rows) {
    write_file(dir / "stability.csv", [&](std::ostream& os) {
        os << "seed,sigma,dispersion_end,match_rate,long_string_models,long_string_min_accuracy\n";
        const std::string models = ls ? std::to_string(ls->n_models) : "";
        const std::string acc = ls ? detail::fmt_double(ls->min_accuracy()) : "";
        if (rows.empty()) os << ",,,," << models << ',' << acc << '\n';
        for (const auto& r : rows)
            os << r.seed << ',' << detail::fmt_double(r.sigma) << ',' << detail::fmt_double(r.dispersion_end) << ','
               << detail::fmt_double(r.match_rate) << ',' << models << ',' << acc << '\n';
    });
}

// ---- report ---------------------------------------------------------------------

struct ReportRow {
    std::string problem;
    std::size_t seeds = 0, converged = 0, extracted = 0, equivalent = 0;
    std::string clusters;       // distinct raw cluster counts
    std::string minimal_states; // distinct minimized sizes
    std::optional<double> long_string_accuracy;
    std::optional<double> dispersion_end; // worst over seeds and sigmas
};

inline std::vector<ReportRow> collect_report(const fs::path& root) {
    std::vector<ReportRow> rows;
    if (!fs::exists(root)) return rows;
    std::vector<fs::path> problems;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) problems.push_back(e.path());
    std::sort(problems.begin(), problems.end());
    auto join = [](const std::set<std::string>& s) {
        std::string out;
        for (const auto& v : s) out += (out.empty() ? "" : "/") + v;
        return out;
    };
    for (const auto& pdir : problems) {
        ReportRow row;
        row.problem = pdir.filename().string();
        std::set<std::string> clusters, minimal;
        std::vector<fs::path> members;
        for (const auto& e : fs::directory_iterator(pdir))
            if (e.is_directory() && e.path().filename().string().rfind("seed-", 0) == 0) members.push_back(e.path());
        std::sort(members.begin(), members.end());
        for (const auto& m : members) {
            if (fs::exists(m / "train.csv")) {
                auto t = read_csv(m / "train.csv");
                const auto col = t.column("converged", (m / "train.csv").string());
                for (const auto& r : t.rows) {
                    row.seeds++;
                    row.converged += csv_number(r[col], m / "train.csv") != 0;
                }
            }
            if (fs::exists(m / "extract.csv")) {
                const auto path = m / "extract.csv";
                auto t = read_csv(path);
                const auto v = t.column("verdict", path.string());
                const auto cl = t.column("clusters", path.string());
                const auto ms = t.column("minimal_states", path.string());
                for (const auto& r : t.rows) {
                    if (r[v] == "equivalent") row.equivalent++;
                    if (r[v] == "equivalent" || r[v] == "inequivalent") {
                        row.extracted++;
                        clusters.insert(r[cl]);
                        minimal.insert(r[ms]);
                    }
                }
            }
        }
        const auto spath = pdir / "stability.csv";
        if (fs::exists(spath)) {
            auto t = read_csv(spath);
            const auto d = t.column("dispersion_end", spath.string());
            const auto a = t.column("long_string_min_accuracy", spath.string());
            for (const auto& r : t.rows) {
                if (!r[d].empty()) row.dispersion_end = std::max(row.dispersion_end.value_or(0.0), csv_number(r[d], spath));
                if (!r[a].empty()) row.long_string_accuracy = csv_number(r[a], spath);
            }
        }
        row.clusters = join(clusters);
        row.minimal_states = join(minimal);
        if (row.seeds || row.long_string_accuracy || row.dispersion_end) rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_report(std::ostream& os, const std::vector<ReportRow>& rows) {
    auto opt = [](const std::optional<double>& v) { return v ? detail::fmt_double(*v) : std::string("-"); };
    auto dash = [](const std::string& s) { return s.empty() ? std::string("-") : s; };
    os << std::left << std::setw(11) << "problem" << std::setw(11) << "converged" << std::setw(10) << "clusters"
       << std::setw(9) << "minimal" << std::setw(12) << "equivalent" << std::setw(13) << "long-string"
       << "dispersion(end)\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(11) << r.problem
           << std::setw(11) << (std::to_string(r.converged) + "/" + std::to_string(r.seeds))
           << std::setw(10) << dash(r.clusters) << std::setw(9) << dash(r.minimal_states)
           << std::setw(12) << (std::to_string(r.equivalent) + "/" + std::to_string(r.converged))
           << std::setw(13) << opt(r.long_string_accuracy) << opt(r.dispersion_end) << '\n';
    }
}

// ---- self checks ------------------------------------------------------------------

struct SelfCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Central differences of the library loss against its analytic gradients on
// a random 3-unit model, 10-symbol window, frozen noise.
inline SelfCheck selftest_gradients(std::uint64_t seed = 1, double tolerance = 1e-4) {
    RnnConfig rc;
    rc.n_hidden = 3;
    rc.init_scale = 0.5;
    rc.rng_seed = seed;
    auto m = RnnModel::random(3, 2, rc);
    Rng rng(derive_seed(seed, {seed_tag::noise}));
    std::uniform_int_distribution<SymbolId> sym(0, 2);
    std::uniform_int_distribution<ClassId> cls(0, 1);
    std::vector<SymbolId> in(10);
    std::vector<ClassId> tg(10);
    for (auto& x : in) x = sym(rng);
    for (auto& y : tg) y = cls(rng);
    Matrix noise(3, 10);
    for (Eigen::Index t = 0; t < noise.cols(); ++t) draw_noise(noise.col(t), 1.0, rng);
    HiddenState h_in(3);
    h_in << 0.3, -0.5, 0.8;
    auto [base, grads] = loss_and_gradients(m, in, tg, h_in, noise);
    (void)base;
    double worst = 0;
    std::string where;
    auto visit = [&](const char* name, auto& w, const auto& g) {
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double keep = w.data()[i];
            const double step = 1e-6;
            w.data()[i] = keep + step;
            const double up = loss_and_gradients(m, in, tg, h_in, noise).first.loss;
            w.data()[i] = keep - step;
            const double down = loss_and_gradients(m, in, tg, h_in, noise).first.loss;
            w.data()[i] = keep;
            const double num = (up - down) / (2 * step);
            const double ana = g.data()[i];
            const double rel = std::abs(num - ana) / std::max(1e-8, std::abs(num) + std::abs(ana));
            if (rel > worst) {
                worst = rel;
                where = std::string(name) + "[" + std::to_string(i) + "]";
            }
        }
    };
    visit("W_xh", m.W_xh, grads.W_xh);
    visit("W_hh", m.W_hh, grads.W_hh);
    visit("W_hy", m.W_hy, grads.W_hy);
    visit("b_h", m.b_h, grads.b_h);
    visit("b_y", m.b_y, grads.b_y);
    std::ostringstream os;
    os << "max relative error " << worst << (where.empty() ? "" : " at " + where);
    return {"gradient check", worst < tolerance, os.str()};
}

// Minimizes random DFAs and compares outputs with the original on every
// string up to `depth` symbols, then checks idempotence.
inline SelfCheck selftest_minimization(std::size_t n_dfas = 500, std::size_t depth = 12, std::uint64_t seed = 1) {
    Rng rng(seed);
    const std::vector<std::string> sigma{"a", "b", "$"};
    std::size_t failures = 0;
    for (std::size_t k = 0; k < n_dfas; ++k) {
        const auto kind = k % 2 ? DfaKind::transducer : DfaKind::acceptor;
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        std::uniform_int_distribution<StateId> st(0, static_cast<StateId>(n - 1));
        std::uniform_int_distribution<ClassId> cl(0, 1);
        Dfa d(kind, sigma, n, st(rng));
        for (StateId s = 0; s < n; ++s) {
            if (kind == DfaKind::acceptor) d.set_label(s, cl(rng));
            for (SymbolId a = 0; a < 3; ++a) {
                d.set_next(s, a, st(rng));
                if (kind == DfaKind::transducer) d.set_output(s, a, cl(rng));
            }
        }
        const Dfa m = minimize(d);
        bool ok = m.n_states() <= d.n_states() && minimize(m) == m;
        if (kind == DfaKind::acceptor && d.label(d.initial()) != m.label(m.initial())) ok = false;
        // Depth-first walk over all words, advancing both machines together.
        auto walk = [&](auto& self, StateId p, StateId q, std::size_t len) -> void {
            for (SymbolId a = 0; a < 3 && ok; ++a) {
                if (d.emit(p, a) != m.emit(q, a)) ok = false;
                if (len + 1 < depth) self(self, d.next(p, a), m.next(q, a), len + 1);
            }
        };
        if (depth > 0) walk(walk, d.initial(), m.initial(), 0);
        failures += !ok;
    }
    std::ostringstream os;
    os << failures << " of " << n_dfas << " automata misbehaved (strings up to length " << depth << ")";
    return {"minimization oracle", failures == 0, os.str()};
}

} // namespace noisydfa
