// noisydfa: train noisy recurrent networks, extract automata, test stability.
//
//   noisydfa train     --problem tomita3 --seeds 5
//   noisydfa extract   --problem tomita3            (all members on disk)
//   noisydfa extract   --model runs/tomita3/seed-1/model.txt
//   noisydfa stability --problem tomita3
//   noisydfa report    [--output-dir runs]
//   noisydfa selftest
//
// Exit codes: 0 success, 1 usage or I/O error, 2 no member converged,
// 3 not clusterable, 4 nondeterministic transition, 5 inequivalent automaton,
// 6 numerical failure.

#include <algorithm>
#include <iostream>
#include <map>
#include <mutex>

#include <CLI11.hpp>

#include "noisydfa/experiment.hpp"

namespace nd = noisydfa;
namespace fs = std::filesystem;

namespace {

int exit_code(nd::ErrorKind k) {
    switch (k) {
    case nd::ErrorKind::nonconvergence: return 2;
    case nd::ErrorKind::not_clusterable: return 3;
    case nd::ErrorKind::nondeterministic_transition: return 4;
    case nd::ErrorKind::inequivalent: return 5;
    case nd::ErrorKind::numerical_failure: return 6;
    default: return 1;
    }
}

std::string flag_name(const std::string& key) {
    std::string s = key;
    std::replace(s.begin(), s.end(), '_', '-');
    return "--" + s;
}

// Registers --config and one flag per configuration key on `cmd`.
struct ConfigFlags {
    std::string config_file;
    std::map<std::string, std::string> values;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
        for (const auto& k : nd::config_keys()) cmd->add_option(flag_name(k.name), values[k.name], k.help);
    }

    nd::ExperimentConfig resolve(CLI::App* cmd) const {
        nd::ExperimentConfig c;
        if (!config_file.empty()) c = nd::load_config(config_file);
        for (const auto& k : nd::config_keys())
            if (cmd->count(flag_name(k.name))) nd::set_config_value(c, k.name, values.at(k.name));
        c.validate();
        return c;
    }
};

std::mutex log_mutex;

void log(const std::string& line) {
    std::lock_guard lock(log_mutex);
    std::cerr << line << '\n';
}

struct Member {
    std::uint64_t seed = 0;
    fs::path dir;
    bool converged = false;
};

std::vector<Member> members_on_disk(const nd::ExperimentConfig& c) {
    std::vector<Member> out;
    for (std::size_t k = 0; k < c.seeds; ++k) {
        Member m{c.member_seed(k), c.member_dir(c.member_seed(k)), false};
        const auto summary = m.dir / "train.csv";
        if (!fs::exists(m.dir / "model.txt") || !fs::exists(summary)) continue;
        const auto t = nd::read_csv(summary);
        const auto col = t.column("converged", summary.string());
        m.converged = !t.rows.empty() && t.rows.front()[col] == "1";
        out.push_back(std::move(m));
    }
    if (out.empty()) throw nd::FormatError("no trained members under " + c.problem_dir().string());
    return out;
}

void save_config(const nd::ExperimentConfig& c) {
    fs::create_directories(c.problem_dir());
    nd::write_file(c.problem_dir() / "config.txt", [&](std::ostream& os) { nd::write_config(os, c); });
}

int cmd_train(const nd::ExperimentConfig& c) {
    const auto gt = nd::make_problem(c.problem);
    save_config(c);
    std::vector<int> converged(c.seeds, 0);
    nd::parallel_for(c.seeds, c.jobs, [&](std::size_t k) {
        const auto seed = c.member_seed(k);
        const auto streams = nd::member_streams(c, gt, seed);
        nd::TrainCallbacks cb;
        cb.on_epoch = [&](const nd::EpochRecord& e) {
            if (e.epoch % 50 == 0)
                log(c.problem + " seed " + std::to_string(seed) + " epoch " + std::to_string(e.epoch) +
                    " train " + nd::detail::fmt_double(e.train_acc) + " val " + nd::detail::fmt_double(e.val_acc));
        };
        const auto r = nd::train_member(c, gt, seed, streams, cb);
        nd::write_train_artifacts(c.member_dir(seed), r);
        converged[k] = r.trace.converged;
        log(c.problem + " seed " + std::to_string(seed) + (r.trace.converged ? " converged" : " did not converge") +
            " (epoch " + std::to_string(r.trace.selected_epoch) + ")" + (r.trace.failure ? ": " + *r.trace.failure : ""));
    });
    const auto n = std::count(converged.begin(), converged.end(), 1);
    std::cout << c.problem << ": " << n << " of " << c.seeds << " members converged\n";
    return n ? 0 : 2;
}

nd::Extraction extract_model(const nd::ExperimentConfig& c, const nd::GroundTruth& gt, const nd::RnnModel& model,
                             std::uint64_t seed, const fs::path& dir) {
    const auto streams = nd::member_streams(c, gt, seed);
    auto ex = nd::extract(c, gt, model, streams.val);
    nd::write_extract_artifacts(dir, c, gt, streams.val, ex);
    std::cout << c.problem << " seed " << seed << ": " << ex.message << '\n';
    return ex;
}

int cmd_extract(const nd::ExperimentConfig& c, const std::string& model_path) {
    const auto gt = nd::make_problem(c.problem);
    std::optional<nd::Verdict> worst;
    auto note = [&](nd::Verdict v) {
        if (v != nd::Verdict::equivalent && !worst) worst = v;
    };
    if (!model_path.empty()) {
        const auto model = nd::load_model(model_path);
        note(extract_model(c, gt, model, model.config.rng_seed, fs::path(model_path).parent_path()).verdict);
    } else {
        std::size_t n = 0;
        for (const auto& m : members_on_disk(c)) {
            if (!m.converged) continue;
            ++n;
            note(extract_model(c, gt, nd::load_model((m.dir / "model.txt").string()), m.seed, m.dir).verdict);
        }
        if (!n) {
            std::cout << c.problem << ": no converged members to extract\n";
            return 2;
        }
    }
    return worst ? exit_code(nd::error_kind(*worst)) : 0;
}

int cmd_stability(const nd::ExperimentConfig& c) {
    const auto gt = nd::make_problem(c.problem);
    std::vector<nd::RnnModel> models;
    std::vector<std::uint64_t> seeds;
    for (const auto& m : members_on_disk(c)) {
        if (!m.converged) continue;
        models.push_back(nd::load_model((m.dir / "model.txt").string()));
        seeds.push_back(m.seed);
    }
    if (models.empty()) {
        std::cout << c.problem << ": no converged members\n";
        return 2;
    }
    std::vector<const nd::RnnModel*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    const auto ls = nd::long_strings(c, gt, ptrs);
    nd::write_long_string_artifacts(c.problem_dir(), c, ls, c.problem);
    std::cout << c.problem << ": long strings " << ls.n_models << " models x " << ls.n_strings << " x " << ls.length
              << ", minimum accuracy " << ls.min_accuracy() << ", numerical failures " << ls.failures.size() << '\n';

    std::vector<nd::StabilityRow> rows;
    bool extracted_all = true;
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto streams = nd::member_streams(c, gt, seeds[i]);
        const auto ex = nd::extract(c, gt, models[i], streams.val);
        if (!ex.clustering || !ex.table) {
            extracted_all = false;
            std::cout << c.problem << " seed " << seeds[i] << ": perturbation skipped, " << ex.message << '\n';
            continue;
        }
        const auto results = nd::perturbations(c, models[i], ex, seeds[i]);
        nd::write_perturbation_artifacts(c.problem_dir(), c, seeds[i], results);
        nd::write_sweep_artifacts(c.problem_dir(), c, gt, models[i], ex, seeds[i]);
        for (const auto& r : results) {
            rows.push_back({seeds[i], r.sigma, r.dispersion.back(), r.match_rate()});
            std::cout << c.problem << " seed " << seeds[i] << " sigma " << r.sigma << ": dispersion(" << c.stability.horizon
                      << ") = " << r.dispersion.back() << ", match rate " << r.match_rate() << '\n';
        }
    }
    nd::write_stability_summary(c.problem_dir(), ls, rows);
    if (!ls.failures.empty()) return 6;
    return extracted_all ? 0 : 3;
}

int cmd_report(const fs::path& root) {
    nd::write_report(std::cout, nd::collect_report(root));
    return 0;
}

int cmd_selftest(std::size_t dfas, std::size_t depth) {
    bool ok = true;
    for (const auto& r : {nd::selftest_gradients(), nd::selftest_minimization(dfas, depth)}) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Noisy recurrent networks distilled into finite automata"};
    app.require_subcommand(1);

    ConfigFlags train_flags, extract_flags, stability_flags;
    auto* train = app.add_subcommand("train", "train an ensemble and write models and traces");
    train_flags.attach(train);

    auto* extract = app.add_subcommand("extract", "cluster hidden states and extract automata");
    extract_flags.attach(extract);
    std::string model_path;
    extract->add_option("--model", model_path, "extract a single model file")->check(CLI::ExistingFile);

    auto* stability = app.add_subcommand("stability", "long-string and perturbation tests");
    stability_flags.attach(stability);

    auto* report = app.add_subcommand("report", "summarize an output directory");
    std::string report_dir;
    report->add_option("--output-dir", report_dir, "output root (default $NOISYDFA_OUTPUT or ./runs)");

    auto* selftest = app.add_subcommand("selftest", "gradient check and minimization oracle");
    std::size_t dfas = 500, depth = 12;
    selftest->add_option("--dfas", dfas, "random automata to minimize");
    selftest->add_option("--depth", depth, "length of the exhaustively compared strings");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(train_flags.resolve(train));
        if (*extract) return cmd_extract(extract_flags.resolve(extract), model_path);
        if (*stability) return cmd_stability(stability_flags.resolve(stability));
        if (*report) {
            nd::ExperimentConfig c;
            c.output_dir = report_dir;
            return cmd_report(c.output_root());
        }
        if (*selftest) return cmd_selftest(dfas, depth);
    } catch (const nd::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
