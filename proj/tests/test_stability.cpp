#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "noisydfa/stability.hpp"
#include "support/oracles.hpp"

using namespace noisydfa;

namespace {

struct Setup {
    GroundTruth gt;
    RnnModel model;
    AnalysisRecord record;
    StateClustering clustering;
    TransitionTable table;
};

Setup hand_built(const std::string& problem) {
    auto gt = make_problem(problem);
    auto model = oracle::dfa_network(gt.minimal_dfa());
    auto stream = generate_stream(gt, 10000, 100, 21);
    auto record = record_analysis(model, stream.inputs, gt.alphabet().separator());
    auto sc = cluster_states(record.states, detect_active(record.states));
    auto kind = gt.addition() ? DfaKind::transducer : DfaKind::acceptor;
    auto tt = extract_transitions(model, sc, record.states, kind, gt.alphabet().separator());
    return {std::move(gt), std::move(model), std::move(record), std::move(sc), std::move(tt)};
}

// Emits a fixed class regardless of input.
struct ConstantPredictor {
    ClassId c = 0;
    void reset() {}
    ClassId step(SymbolId) { return c; }
};

} // namespace

TEST(ParallelFor, VisitsEveryItemOnce) {
    for (std::size_t jobs : {1u, 3u, 8u}) {
        std::vector<int> hits(37, 0);
        parallel_for(hits.size(), jobs, [&](std::size_t i) { hits[i]++; });
        for (int h : hits) EXPECT_EQ(h, 1);
    }
    EXPECT_THROW(parallel_for(4, 2, [](std::size_t i) { if (i == 3) throw Error(ErrorKind::io, "x"); }), Error);
}

TEST(LongString, GroundTruthAutomatonIsPerfect) {
    auto gt = make_problem("tomita3");
    std::vector<DfaPredictor> models{DfaPredictor(gt.minimal_dfa())};
    auto r = long_string_test(models, gt, 3, 20000, 1);
    EXPECT_TRUE(r.perfect());
    EXPECT_EQ(r.runs(), 3u);
    EXPECT_DOUBLE_EQ(r.min_accuracy(), 1.0);
    EXPECT_FALSE(r.first_imperfect());
    EXPECT_TRUE(r.failures.empty());
}

TEST(LongString, HandBuiltNetworkIsPerfect) {
    for (const std::string name : {"tomita3", "add-base4"}) {
        SCOPED_TRACE(name);
        auto gt = make_problem(name);
        auto m = oracle::dfa_network(gt.minimal_dfa());
        std::vector<RnnPredictor> models{RnnPredictor(m), RnnPredictor(m)};
        auto r = long_string_test(models, gt, 2, 50000, 4, 2);
        EXPECT_TRUE(r.perfect()) << *r.first_imperfect();
    }
}

TEST(LongString, WrongPredictorIsDetected) {
    auto gt = make_problem("parity");
    std::vector<ConstantPredictor> models{{1}};
    auto r = long_string_test(models, gt, 4, 1000, 2);
    EXPECT_FALSE(r.perfect());
    ASSERT_TRUE(r.first_imperfect());
    EXPECT_LT(r.min_accuracy(), 1.0);
    for (std::size_t t = 0; t < r.length; ++t) {
        EXPECT_GE(r.accuracy_at(t), 0.0);
        EXPECT_LE(r.accuracy_at(t), 1.0);
    }
}

TEST(LongString, NumericalFailureIsRecordedNotThrown) {
    auto gt = make_problem("tomita1");
    RnnConfig c;
    c.n_hidden = 2;
    auto bad = RnnModel::zeros(3, 2, c);
    bad.b_h[0] = std::numeric_limits<double>::quiet_NaN();
    auto good = oracle::dfa_network(gt.minimal_dfa());
    std::vector<RnnPredictor> models{RnnPredictor(good), RnnPredictor(bad)};
    auto r = long_string_test(models, gt, 2, 100, 3);
    ASSERT_EQ(r.failures.size(), 1u);
    EXPECT_NE(r.failures[0].find("model 1"), std::string::npos);
    EXPECT_FALSE(r.perfect());
}

TEST(LongString, SeededAndIndependentOfJobs) {
    auto gt = make_problem("tomita2");
    auto m = oracle::dfa_network(gt.minimal_dfa());
    std::vector<RnnPredictor> a{RnnPredictor(m), RnnPredictor(m), RnnPredictor(m)};
    std::vector<RnnPredictor> b = a;
    auto ra = long_string_test(a, gt, 2, 5000, 9, 1);
    auto rb = long_string_test(b, gt, 2, 5000, 9, 3);
    EXPECT_EQ(ra.correct, rb.correct);
    EXPECT_NE(long_string_seed(9, 0), long_string_seed(9, 1));
}

TEST(LongString, LogBinsCoverEveryPosition) {
    LongStringResult r;
    r.n_models = 1;
    r.n_strings = 2;
    r.length = 12345;
    r.correct.assign(r.length, 2);
    r.correct[99] = 1;
    auto bins = r.log_bins(5);
    ASSERT_FALSE(bins.empty());
    EXPECT_EQ(bins.front().first, 1u);
    EXPECT_EQ(bins.back().last, r.length);
    for (std::size_t i = 0; i < bins.size(); ++i) {
        EXPECT_LE(bins[i].first, bins[i].last);
        if (i) {
            EXPECT_EQ(bins[i].first, bins[i - 1].last + 1);
        }
        EXPECT_LE(bins[i].min_accuracy, bins[i].mean_accuracy);
    }
    bool found = false;
    for (const auto& b : bins)
        if (b.first <= 100 && 100 <= b.last) {
            EXPECT_DOUBLE_EQ(b.min_accuracy, 0.5);
            found = true;
        }
    EXPECT_TRUE(found);
    std::ostringstream os;
    write_long_string_csv(os, r, 5);
    EXPECT_EQ(os.str().rfind("position_first,position_last,mean_accuracy,min_accuracy\n", 0), 0u);
}

TEST(LongString, DivergencePosition) {
    auto parity = make_problem("parity");
    auto tomita1 = make_problem("tomita1");
    auto m = oracle::dfa_network(parity.minimal_dfa());
    RnnPredictor net(m);
    DfaPredictor same(parity.minimal_dfa()), other(tomita1.minimal_dfa());
    auto s = generate_long_string(parity, 5000, 8);
    EXPECT_FALSE(divergence_position(net, same, s.inputs));
    auto pos = divergence_position(same, other, s.inputs);
    ASSERT_TRUE(pos);
    const std::span<const SymbolId> prefix(s.inputs.data(), *pos + 1);
    const auto a = run(parity.minimal_dfa(), prefix);
    const auto b = run(tomita1.minimal_dfa(), prefix);
    EXPECT_NE(a.back(), b.back());
    EXPECT_TRUE(std::equal(a.begin(), a.end() - 1, b.begin()));
}

TEST(Perturbation, ZeroNoiseStaysAtCenters) {
    auto s = hand_built("tomita3");
    PerturbationConfig cfg;
    auto r = perturb_and_track(s.model, s.clustering, s.table.dfa, 0.0, cfg);
    const double bound = 0.05 * std::sqrt(static_cast<double>(s.clustering.active_units.size()));
    ASSERT_EQ(r.dispersion.size(), cfg.horizon + 1);
    for (double d : r.dispersion) EXPECT_LT(d, bound);
    EXPECT_DOUBLE_EQ(r.dispersion[0], 0.0);
    EXPECT_DOUBLE_EQ(r.match_rate(), 1.0);
}

TEST(Perturbation, EnumeratesWithinBudget) {
    auto s = hand_built("tomita3");
    PerturbationConfig cfg;
    auto r = perturb_and_track(s.model, s.clustering, s.table.dfa, 0.1, cfg);
    const std::size_t combos = s.clustering.clusters.size() * 243;
    EXPECT_TRUE(r.enumerated);
    EXPECT_EQ(r.trials, combos * r.trials_per_combination);
    EXPECT_LE(r.trials * cfg.horizon, cfg.step_budget);
    EXPECT_EQ(r.agreement.size(), s.clustering.clusters.size() * 3);
}

TEST(Perturbation, SamplesWhenBudgetIsSmall) {
    auto s = hand_built("tomita3");
    PerturbationConfig cfg;
    cfg.step_budget = 500;
    auto r = perturb_and_track(s.model, s.clustering, s.table.dfa, 0.05, cfg);
    EXPECT_FALSE(r.enumerated);
    EXPECT_EQ(r.trials, 100u);
}

TEST(Perturbation, InitialDispersionScalesWithSigma) {
    auto s = hand_built("tomita2");
    const double n = static_cast<double>(s.clustering.active_units.size());
    for (double sigma : {0.05, 0.1, 0.2}) {
        auto r = perturb_and_track(s.model, s.clustering, s.table.dfa, sigma);
        const double expected = sigma * std::sqrt(n);
        EXPECT_GT(r.dispersion[0], expected / 2);
        EXPECT_LT(r.dispersion[0], expected * 2);
    }
}

TEST(Perturbation, RecoversAndFollowsTable) {
    // The one-hot encoding sums noise over several feeders, so its routing
    // margin is exceeded by some draws at sigma 0.2; dispersion still shrinks.
    for (const std::string name : {"tomita3", "add-base2"}) {
        SCOPED_TRACE(name);
        auto s = hand_built(name);
        for (double sigma : {0.05, 0.1, 0.2}) {
            auto r = perturb_and_track(s.model, s.clustering, s.table.dfa, sigma);
            for (std::size_t t = 2; t < r.dispersion.size(); ++t) EXPECT_LE(r.dispersion[t], r.dispersion[t - 1] + 1e-3);
            EXPECT_LT(r.dispersion.back(), 0.05);
            if (sigma > 0.1) continue;
            EXPECT_DOUBLE_EQ(r.match_rate(), 1.0);
            EXPECT_EQ(std::count(r.agreement.begin(), r.agreement.end(), false), 0);
        }
    }
}

TEST(Perturbation, IndependentOfJobsAndSeeded) {
    auto s = hand_built("tomita3");
    PerturbationConfig one, many;
    many.jobs = 4;
    auto a = perturb_and_track(s.model, s.clustering, s.table.dfa, 0.2, one);
    auto b = perturb_and_track(s.model, s.clustering, s.table.dfa, 0.2, many);
    EXPECT_EQ(a.dispersion, b.dispersion);
    EXPECT_EQ(a.matching_trials, b.matching_trials);
    one.seed = 2;
    auto c = perturb_and_track(s.model, s.clustering, s.table.dfa, 0.2, one);
    EXPECT_NE(a.dispersion, c.dispersion);
}

TEST(Perturbation, DispersionCsv) {
    PerturbationResult r;
    r.sigma = 0.1;
    r.dispersion = {0.4, 0.1, 0.0};
    r.trials = 4;
    r.matching_trials = 4;
    std::ostringstream os;
    write_dispersion_csv(os, {r});
    EXPECT_EQ(os.str(), "sigma_p,t,dispersion,match_rate\n0.1,0,0.4,1\n0.1,1,0.1,1\n0.1,2,0,1\n");
}

TEST(TransitionSweep, RowCountsAndDestinations) {
    auto s = hand_built("tomita3");
    auto basis = fit_pca(s.record.states);
    auto pts = transition_sweep(s.model, s.clustering, s.record.states, basis, 100);
    std::size_t expected = 0;
    for (const auto& c : s.clustering.clusters) expected += std::min<std::size_t>(c.members, 100) * 3;
    EXPECT_EQ(pts.size(), expected);
    for (const auto& p : pts) {
        ASSERT_TRUE(p.destination);
        EXPECT_EQ(*p.destination, s.table.dfa.next(static_cast<StateId>(p.cluster), p.symbol));
        const auto& center = s.clustering.clusters[*p.destination].center;
        EXPECT_LT((p.end - center).cwiseAbs().maxCoeff(), 0.05);
    }
    std::ostringstream os;
    write_sweep_csv(os, pts, s.gt.alphabet());
    const std::string csv = os.str();
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), pts.size() + 1);
}

TEST(TransitionSweep, SingleClusterLoops) {
    RnnConfig c;
    c.n_hidden = 2;
    auto m = RnnModel::zeros(3, 2, c);
    m.b_h << 3.0, -3.0;
    m.W_hh(0, 1) = 0.1;
    auto ar = record_analysis(m, std::vector<SymbolId>{2, 0, 2, 1, 0, 1, 2, 0}, 2);
    auto sc = cluster_states(ar.states, detect_active(ar.states));
    ASSERT_EQ(sc.clusters.size(), 1u);
    HiddenRecord spread = ar.states;
    spread(0, 0) += 0.01;
    auto pts = transition_sweep(m, sc, ar.states, fit_pca(spread), 10);
    EXPECT_EQ(pts.size(), 3 * std::min<std::size_t>(sc.clusters[0].members, 10));
    for (const auto& p : pts) EXPECT_EQ(p.destination, std::optional<std::size_t>(0));
}
