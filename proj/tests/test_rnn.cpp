#include <gtest/gtest.h>

#include <sstream>

#include "noisydfa/rnn.hpp"
#include "support/oracles.hpp"

using namespace noisydfa;

namespace {

RnnModel small_model(std::size_t n_in, std::size_t n_out, std::size_t n_hidden, std::uint64_t seed,
                     double scale = 0.5) {
    RnnConfig c;
    c.n_hidden = n_hidden;
    c.init_scale = scale;
    c.rng_seed = seed;
    auto m = RnnModel::random(n_in, n_out, c);
    Rng rng(seed + 100);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (Eigen::Index i = 0; i < m.b_h.size(); ++i) m.b_h[i] = u(rng);
    for (Eigen::Index i = 0; i < m.b_y.size(); ++i) m.b_y[i] = u(rng);
    return m;
}

Matrix noise_matrix(std::size_t rows, std::size_t cols, double nu, std::uint64_t seed) {
    Matrix n(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    Rng rng(seed);
    for (Eigen::Index t = 0; t < n.cols(); ++t) draw_noise(n.col(t), nu, rng);
    return n;
}

} // namespace

TEST(RnnConfig, Validation) {
    RnnConfig c;
    EXPECT_NO_THROW(c.validate());
    c.bptt_steps = 0;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.n_hidden = 0;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.lr = -1;
    EXPECT_THROW(c.validate(), Error);
}

TEST(RnnConfig, NoiseRamp) {
    RnnConfig c;
    c.epochs = 100;
    EXPECT_EQ(c.nu_at(1), 1.0);
    c.noise_ramp = true;
    EXPECT_DOUBLE_EQ(c.nu_at(25), 0.25);
    EXPECT_DOUBLE_EQ(c.nu_at(100), 1.0);
    c.ramp_epochs = 50;
    EXPECT_DOUBLE_EQ(c.nu_at(25), 0.5);
    EXPECT_DOUBLE_EQ(c.nu_at(80), 1.0);
}

TEST(ForwardStep, ZeroModelGivesZeroStateAndUniformOutput) {
    RnnConfig c;
    auto m = RnnModel::zeros(3, 2, c);
    for (SymbolId x = 0; x < 3; ++x) {
        auto s = forward_step(m, HiddenState::Zero(20), x, nullptr);
        EXPECT_EQ(s.h, HiddenState::Zero(20));
        EXPECT_DOUBLE_EQ(s.y[0], 0.5);
        EXPECT_DOUBLE_EQ(s.y[1], 0.5);
    }
}

TEST(ForwardStep, NoiseIgnoredFromZeroState) {
    auto m = small_model(3, 2, 5, 1);
    Vector noise = noise_matrix(5, 1, 3.0, 2).col(0);
    auto quiet = forward_step(m, HiddenState::Zero(5), 1, nullptr);
    auto noisy = forward_step(m, HiddenState::Zero(5), 1, &noise);
    EXPECT_EQ(quiet.h, noisy.h);
    EXPECT_EQ(quiet.y, noisy.y);
}

TEST(ForwardStep, MatchesScalarEvaluation) {
    auto m = small_model(3, 2, 3, 4);
    Vector h_prev(3);
    h_prev << 0.3, -0.7, 0.9;
    Vector noise(3);
    noise << 0.5, -1.2, 0.1;
    std::vector<double> hp(h_prev.data(), h_prev.data() + 3), nz(noise.data(), noise.data() + 3);
    for (SymbolId x = 0; x < 3; ++x) {
        auto got = forward_step(m, h_prev, x, &noise);
        auto want = oracle::scalar_step(m, hp, x, &nz);
        for (int i = 0; i < 3; ++i) EXPECT_NEAR(got.h[i], want.h[static_cast<std::size_t>(i)], 1e-14);
        for (int c = 0; c < 2; ++c) EXPECT_NEAR(got.y[c], want.y[static_cast<std::size_t>(c)], 1e-14);
        auto plain = forward_step(m, h_prev, x, nullptr);
        auto want_plain = oracle::scalar_step(m, hp, x, nullptr);
        for (int i = 0; i < 3; ++i) EXPECT_NEAR(plain.h[i], want_plain.h[static_cast<std::size_t>(i)], 1e-14);
    }
}

TEST(ForwardStep, RangeAndErrors) {
    auto m = small_model(3, 2, 6, 9, 3.0);
    Rng rng(1);
    HiddenState h = HiddenState::Zero(6);
    Vector noise(6);
    for (int t = 0; t < 1000; ++t) {
        draw_noise(noise, 2.0, rng);
        h = forward_step(m, h, static_cast<SymbolId>(t % 3), &noise).h;
        ASSERT_LE(h.cwiseAbs().maxCoeff(), 1.0);
    }
    EXPECT_THROW(forward_step(m, h, 3, nullptr), Error);
    EXPECT_THROW(forward_step(m, HiddenState::Zero(5), 0, nullptr), Error);
    m.W_xh(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(forward_step(m, h, 0, nullptr), NumericalFailure);
}

TEST(ForwardSequence, EmptyStreamReturnsInitialState) {
    auto m = small_model(3, 2, 4, 2);
    HiddenState h0 = HiddenState::Constant(4, 0.25);
    auto r = forward_sequence(m, h0, std::vector<SymbolId>{}, {}, true);
    EXPECT_TRUE(r.predictions.empty());
    EXPECT_EQ(r.h_final, h0);
    EXPECT_EQ(r.record.cols(), 0);
}

TEST(ForwardSequence, ZeroNoiseEqualsNoNoise) {
    auto m = small_model(3, 2, 6, 3);
    std::vector<SymbolId> in = {2, 0, 1, 1, 0, 2, 1, 0, 0};
    Rng rng(5);
    auto a = forward_sequence(m, HiddenState::Zero(6), in, {}, true);
    auto b = forward_sequence(m, HiddenState::Zero(6), in, NoiseSource{0.0, &rng}, true);
    EXPECT_EQ(a.predictions, b.predictions);
    EXPECT_EQ(a.record, b.record);
}

TEST(ForwardSequence, StepperAgrees) {
    auto m = small_model(3, 2, 8, 7, 1.0);
    std::vector<SymbolId> in;
    for (int i = 0; i < 300; ++i) in.push_back(static_cast<SymbolId>((i * 7 + i / 3) % 3));
    auto r = forward_sequence(m, HiddenState::Zero(8), in, {}, true);
    InferenceStepper st(m);
    HiddenState h = HiddenState::Zero(8);
    for (std::size_t t = 0; t < in.size(); ++t) {
        ASSERT_EQ(st.step(h, in[t]), r.predictions[t]);
        ASSERT_TRUE(h.isApprox(r.record.col(static_cast<Eigen::Index>(t)), 1e-15));
    }
}

TEST(Accuracy, Basics) {
    std::vector<ClassId> a = {0, 1, 1, 0}, b = {0, 1, 0, 0};
    EXPECT_DOUBLE_EQ(accuracy(a, b), 0.75);
    EXPECT_DOUBLE_EQ(accuracy(std::vector<ClassId>{}, std::vector<ClassId>{}), 1.0);
    EXPECT_THROW(accuracy(a, std::vector<ClassId>{0}), Error);
}

TEST(Accuracy, OpeningSeparatorIsNotScored) {
    auto gt = make_problem("add-base2");
    auto st = generate_stream(gt, 200, 100, 3);
    ASSERT_EQ(st.inputs[0], gt.alphabet().separator());
    auto preds = st.targets;
    preds[0] = 1 - preds[0];
    EXPECT_DOUBLE_EQ(stream_accuracy(preds, st), 1.0);
    preds[1] = preds[1] == 0 ? 1 : 0;
    EXPECT_DOUBLE_EQ(stream_accuracy(preds, st), 198.0 / 199.0);
    auto body = st.slice(1, 50);
    EXPECT_EQ(first_scored(body.inputs, gt.alphabet().separator()), body.inputs[0] == gt.alphabet().separator() ? 1u : 0u);
}

TEST(LossAndGradients, UniformOutputCrossEntropy) {
    RnnConfig c;
    c.l1 = 0;
    for (std::size_t k : {2u, 4u}) {
        auto m = RnnModel::zeros(5, k, c);
        std::vector<SymbolId> in = {0, 1, 2, 3};
        std::vector<ClassId> tg = {0, 1, 0, 1};
        auto [r, g] = loss_and_gradients(m, in, tg, HiddenState::Zero(20));
        EXPECT_NEAR(r.cross_entropy, std::log(static_cast<double>(k)), 1e-12);
    }
}

TEST(LossAndGradients, PenaltyIsLinear) {
    auto m = small_model(3, 2, 5, 11);
    std::vector<SymbolId> in = {2, 0, 1, 0, 0, 1};
    std::vector<ClassId> tg = {1, 0, 1, 1, 0, 0};
    m.config.l1 = 0;
    auto [r0, g0] = loss_and_gradients(m, in, tg, HiddenState::Zero(5));
    m.config.l1 = 0.0004;
    auto [r1, g1] = loss_and_gradients(m, in, tg, HiddenState::Zero(5));
    EXPECT_NEAR(r1.loss - r0.loss, 0.0004 * m.l1_norm(), 1e-15);
    // Biases are not penalised.
    EXPECT_EQ(g0.b_h, g1.b_h);
    EXPECT_EQ(g0.b_y, g1.b_y);
}

TEST(LossAndGradients, FiniteDifferencesWithFrozenNoise) {
    auto m = small_model(3, 2, 3, 21);
    m.config.l1 = 0.0004;
    std::vector<SymbolId> in = {2, 0, 1, 1, 0, 2, 0, 0, 1, 1};
    std::vector<ClassId> tg = {1, 0, 1, 0, 0, 1, 1, 0, 1, 0};
    Vector h_in(3);
    h_in << 0.2, -0.4, 0.6;
    const Matrix noise = noise_matrix(3, 10, 1.0, 8);
    auto [r, g] = loss_and_gradients(m, in, tg, h_in, noise);
    std::vector<double> h(h_in.data(), h_in.data() + 3);
    EXPECT_NEAR(r.loss, oracle::scalar_loss(m, in, tg, h, noise), 1e-13);
    auto check = oracle::finite_difference_check(m, in, tg, h, noise, g);
    EXPECT_LT(check.max_rel_error, 1e-4) << "worst at " << check.worst;
}

TEST(LossAndGradients, FiniteDifferencesWithoutNoise) {
    auto m = small_model(4, 3, 3, 22);
    m.config.l1 = 0.001;
    std::vector<SymbolId> in = {3, 0, 1, 2, 2, 0, 1, 3, 0, 1};
    std::vector<ClassId> tg = {2, 0, 1, 0, 2, 1, 1, 0, 2, 1};
    auto [r, g] = loss_and_gradients(m, in, tg, HiddenState::Zero(3));
    auto check = oracle::finite_difference_check(m, in, tg, {0, 0, 0}, Matrix{}, g);
    EXPECT_LT(check.max_rel_error, 1e-4) << "worst at " << check.worst;
}

TEST(LossAndGradients, WindowLimits) {
    auto m = small_model(3, 2, 3, 1);
    m.config.bptt_steps = 4;
    std::vector<SymbolId> in = {0, 1, 0, 1, 0};
    std::vector<ClassId> tg = {0, 1, 0, 1, 0};
    EXPECT_THROW(loss_and_gradients(m, in, tg, HiddenState::Zero(3)), Error);
    auto [r, g] = loss_and_gradients(m, std::span<const SymbolId>(in).first(4),
                                     std::span<const ClassId>(tg).first(4), HiddenState::Zero(3));
    auto seq = forward_sequence(m, HiddenState::Zero(3), std::span<const SymbolId>(in).first(4));
    EXPECT_TRUE(r.h_out.isApprox(seq.h_final, 1e-15));
}

// One update on a window holding the whole stream equals a single step of
// training with bptt_steps covering the stream.
TEST(Train, WholeStreamWindowMatchesSingleUpdate) {
    auto gt = make_problem("tomita4");
    auto st = generate_stream(gt, 10, 4, 3);
    RnnConfig c;
    c.n_hidden = 4;
    c.nu = 0;
    c.bptt_steps = 25;
    c.epochs = 1;
    c.lr = 0.7;
    c.clip = 1e9;
    auto m = RnnModel::random(3, 2, c);
    auto expected = m;
    auto [r, g] = loss_and_gradients(expected, st.inputs, st.targets, HiddenState::Zero(4));
    apply_update(expected, g);
    train(m, st, st);
    EXPECT_TRUE(m.W_hh.isApprox(expected.W_hh, 1e-15));
    EXPECT_TRUE(m.W_xh.isApprox(expected.W_xh, 1e-15));
    EXPECT_TRUE(m.b_y.isApprox(expected.b_y, 1e-15));
}

TEST(Train, ZeroLearningRateLeavesWeights) {
    auto gt = make_problem("parity");
    auto st = generate_stream(gt, 500, 20, 1);
    RnnConfig c;
    c.lr = 0;
    c.epochs = 1;
    auto m = RnnModel::random(3, 2, c);
    const auto before = m;
    train(m, st, st);
    EXPECT_EQ(m, before);
}

TEST(Train, ClipBoundsEveryUpdate) {
    auto gt = make_problem("tomita2");
    auto st = generate_stream(gt, 25, 10, 1);
    RnnConfig c;
    c.l1 = 0.5;
    auto m = RnnModel::random(3, 2, c);
    auto [r, g] = loss_and_gradients(m, st.inputs, st.targets, HiddenState::Zero(20));
    auto after = m;
    apply_update(after, g);
    EXPECT_LE((after.W_hh - m.W_hh).cwiseAbs().maxCoeff(), 2.5 * 0.002 + 1e-15);
    EXPECT_NEAR((after.W_hh - m.W_hh).cwiseAbs().maxCoeff(), 0.005, 1e-12);
    EXPECT_LE((after.b_h - m.b_h).cwiseAbs().maxCoeff(), 0.005 + 1e-15);
}

TEST(Train, DeterministicTrace) {
    auto gt = make_problem("tomita1");
    auto tr = generate_stream(gt, 2000, 50, 1);
    auto va = generate_stream(gt, 1000, 50, 2);
    RnnConfig c;
    c.epochs = 3;
    c.min_epochs = 10;
    auto a = RnnModel::random(3, 2, c), b = a;
    auto ta = train(a, tr, va), tb = train(b, tr, va);
    std::ostringstream sa, sb;
    write_trace_csv(sa, ta);
    write_trace_csv(sb, tb);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(a, b);
    EXPECT_EQ(ta.epochs.size(), 3u);
    EXPECT_TRUE(sa.str().starts_with("epoch,loss,train_acc,train_acc_noisy,val_acc,val_acc_noisy,nu\n"));
}

TEST(Train, RecordsRampedNoise) {
    auto gt = make_problem("tomita1");
    auto st = generate_stream(gt, 200, 20, 1);
    RnnConfig c;
    c.epochs = 4;
    c.noise_ramp = true;
    auto m = RnnModel::random(3, 2, c);
    auto trace = train(m, st, st);
    ASSERT_FALSE(trace.epochs.empty());
    EXPECT_DOUBLE_EQ(trace.epochs[0].nu, 0.25);
    for (const auto& e : trace.epochs) EXPECT_LE(e.nu, 1.0);
}

TEST(Train, StopsOnceTaskIsLearned) {
    auto gt = make_problem("tomita1");
    auto tr = generate_stream(gt, 20000, 100, 7);
    auto va = generate_stream(gt, 20000, 100, 8);
    RnnConfig c;
    c.epochs = 60;
    c.rng_seed = 3;
    auto m = RnnModel::random(3, 2, c);
    auto trace = train(m, tr, va);
    ASSERT_TRUE(trace.converged);
    EXPECT_LT(trace.epochs.size(), 60u);
    EXPECT_EQ(trace.selected_epoch, trace.epochs.size());
    EXPECT_EQ(trace.epochs.back().val_acc, 1.0);
    EXPECT_TRUE(trace.epochs.back().val_acc_noisy.has_value());
    EXPECT_EQ(accuracy(forward_sequence(m, HiddenState::Zero(20), va.inputs).predictions, va.targets), 1.0);
}

TEST(Train, RestoresLastPerfectEpoch) {
    auto gt = make_problem("tomita1");
    auto tr = generate_stream(gt, 20000, 100, 7);
    auto va = generate_stream(gt, 20000, 100, 8);
    RnnConfig c;
    c.epochs = 12;
    c.min_epochs = 1000;
    c.rng_seed = 3;
    auto m = RnnModel::random(3, 2, c);
    auto trace = train(m, tr, va);
    ASSERT_EQ(trace.epochs.size(), 12u);
    std::size_t last_perfect = 0;
    for (const auto& e : trace.epochs)
        if (e.train_acc == 1.0 && e.val_acc == 1.0) last_perfect = e.epoch;
    EXPECT_EQ(trace.converged, last_perfect > 0);
    if (last_perfect) {
        EXPECT_EQ(trace.selected_epoch, last_perfect);
    }
}

TEST(Train, RejectsMismatchedStreams) {
    auto m = RnnModel::random(3, 2, RnnConfig{});
    auto add = generate_stream(make_problem("add-base2"), 100, 10, 1);
    EXPECT_THROW(train(m, add, add), Error);
}

TEST(ModelFile, RoundTripIsExact) {
    RnnConfig c;
    c.nu = 0.3;
    c.noise_ramp = true;
    c.ramp_epochs = 17;
    c.rng_seed = 123456789012345ull;
    auto m = RnnModel::random(17, 4, c);
    m.b_h[3] = 1.0 / 3.0;
    m.b_y[1] = -2.5e-300;
    std::stringstream a;
    save_model(a, m);
    auto back = load_model(a);
    EXPECT_EQ(back, m);
    std::stringstream b;
    save_model(b, back);
    EXPECT_EQ(a.str(), b.str());
}

TEST(ModelFile, Errors) {
    auto m = RnnModel::random(3, 2, RnnConfig{});
    std::stringstream full;
    save_model(full, m);
    const std::string text = full.str();

    std::stringstream truncated(text.substr(0, text.size() / 2));
    EXPECT_THROW(load_model(truncated), FormatError);

    std::string bumped = text;
    bumped.replace(0, std::string("noisydfa-model 1").size(), "noisydfa-model 9");
    std::stringstream version(bumped);
    EXPECT_THROW(load_model(version), FormatError);

    std::stringstream garbage("hello world\n");
    EXPECT_THROW(load_model(garbage), FormatError);

    EXPECT_THROW(load_model(std::string("/nonexistent/model.txt")), FormatError);
}
