#pragma once

// Elman network with multiplicative pre-activation noise:
//
//   h_t = tanh(W_xh x_t + W_hh h_{t-1} + h_{t-1} ∘ n_t + b_h),  n_t ~ N(0, nu²)
//   y_t = softmax(W_hy h_t + b_y)
//
// x_t is one-hot, so W_xh x_t is a column pick. Matrices are stored in
// "to × from" orientation: W_xh is n_hidden × n_in, W_hh is n_hidden ×
// n_hidden, W_hy is n_out × n_hidden. Arithmetic is double throughout.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "noisydfa/error.hpp"
#include "noisydfa/lang_data.hpp"
#include "noisydfa/rng.hpp"

namespace noisydfa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using HiddenState = Vector;
// Column t holds h_t.
using HiddenRecord = Matrix;

struct RnnConfig {
    std::size_t n_hidden = 20;
    double nu = 1.0;             // noise standard deviation
    double l1 = 0.0004;          // L1 penalty on weight matrices (not biases)
    double lr = 2.5;
    double clip = 0.002;         // per-component gradient clamp
    std::size_t bptt_steps = 25;
    std::size_t epochs = 500;
    std::size_t min_epochs = 0;  // early stopping is not considered before this epoch
    bool noise_ramp = false;     // nu grows linearly from 0 over ramp_epochs
    std::size_t ramp_epochs = 0; // 0 means "all epochs"
    double init_scale = 0.1;     // weights ~ U(-init_scale, init_scale)
    std::uint64_t rng_seed = 1;

    void validate() const {
        require(n_hidden >= 1, "RnnConfig: n_hidden must be >= 1");
        require(bptt_steps >= 1, "RnnConfig: bptt_steps must be >= 1");
        require(nu >= 0 && l1 >= 0 && lr >= 0 && clip >= 0 && init_scale >= 0,
                "RnnConfig: scalar hyperparameters must be nonnegative");
    }

    double nu_at(std::size_t epoch) const {
        if (!noise_ramp) return nu;
        const std::size_t span = ramp_epochs ? ramp_epochs : epochs;
        if (span == 0) return nu;
        return nu * std::min<double>(1.0, static_cast<double>(epoch) / static_cast<double>(span));
    }

    bool operator==(const RnnConfig&) const = default;
};

struct RnnModel {
    Matrix W_xh;
    Matrix W_hh;
    Vector b_h;
    Matrix W_hy;
    Vector b_y;
    RnnConfig config;

    std::size_t n_in() const { return static_cast<std::size_t>(W_xh.cols()); }
    std::size_t n_hidden() const { return static_cast<std::size_t>(W_hh.rows()); }
    std::size_t n_out() const { return static_cast<std::size_t>(W_hy.rows()); }

    static RnnModel zeros(std::size_t n_in, std::size_t n_out, const RnnConfig& cfg) {
        cfg.validate();
        const auto h = static_cast<Eigen::Index>(cfg.n_hidden);
        RnnModel m;
        m.W_xh = Matrix::Zero(h, static_cast<Eigen::Index>(n_in));
        m.W_hh = Matrix::Zero(h, h);
        m.b_h = Vector::Zero(h);
        m.W_hy = Matrix::Zero(static_cast<Eigen::Index>(n_out), h);
        m.b_y = Vector::Zero(static_cast<Eigen::Index>(n_out));
        m.config = cfg;
        return m;
    }

    // Weights uniform in [-init_scale, init_scale], biases zero.
    static RnnModel random(std::size_t n_in, std::size_t n_out, const RnnConfig& cfg) {
        RnnModel m = zeros(n_in, n_out, cfg);
        Rng rng(derive_seed(cfg.rng_seed, {seed_tag::weights}));
        std::uniform_real_distribution<double> u(-cfg.init_scale, cfg.init_scale);
        for (Matrix* w : {&m.W_xh, &m.W_hh, &m.W_hy})
            for (Eigen::Index i = 0; i < w->size(); ++i) w->data()[i] = u(rng);
        return m;
    }

    double l1_norm() const { return W_xh.cwiseAbs().sum() + W_hh.cwiseAbs().sum() + W_hy.cwiseAbs().sum(); }

    bool all_finite() const {
        return W_xh.allFinite() && W_hh.allFinite() && b_h.allFinite() && W_hy.allFinite() && b_y.allFinite();
    }

    bool operator==(const RnnModel& o) const {
        return W_xh == o.W_xh && W_hh == o.W_hh && b_h == o.b_h && W_hy == o.W_hy && b_y == o.b_y &&
               config == o.config;
    }
};

inline void softmax_inplace(Vector& v) {
    const double mx = v.maxCoeff();
    v = (v.array() - mx).exp();
    v /= v.sum();
}

inline Eigen::Index argmax(const Vector& v) {
    Eigen::Index i = 0;
    v.maxCoeff(&i);
    return i;
}

struct StepOutput {
    HiddenState h;
    Vector y;
};

// One recurrence step. `noise` (length n_hidden) is the draw for this step;
// pass nullptr for noise-free inference.
inline StepOutput forward_step(const RnnModel& m, const HiddenState& h_prev, SymbolId x, const Vector* noise) {
    require(x < m.n_in(), "forward_step: input symbol out of range");
    require(static_cast<std::size_t>(h_prev.size()) == m.n_hidden(), "forward_step: hidden size mismatch");
    Vector z = m.W_xh.col(x) + m.b_h;
    z.noalias() += m.W_hh * h_prev;
    if (noise) z += h_prev.cwiseProduct(*noise);
    StepOutput out;
    out.h = z.array().tanh().matrix();
    out.y = m.b_y;
    out.y.noalias() += m.W_hy * out.h;
    softmax_inplace(out.y);
    if (!out.h.allFinite() || !out.y.allFinite()) throw NumericalFailure("forward_step: non-finite activation");
    return out;
}

// Draws a noise vector with standard deviation `nu`.
template <class V>
void draw_noise(V&& out, double nu, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = nu * n(rng);
}

struct SequenceResult {
    std::vector<ClassId> predictions;
    HiddenState h_final;
    HiddenRecord record; // empty unless requested
};

struct NoiseSource {
    double nu = 0.0;
    Rng* rng = nullptr;
};

inline SequenceResult forward_sequence(const RnnModel& m, const HiddenState& h0, std::span<const SymbolId> inputs,
                                       std::optional<NoiseSource> noise = {}, bool keep_record = false) {
    SequenceResult r;
    r.predictions.reserve(inputs.size());
    if (keep_record) r.record.resize(static_cast<Eigen::Index>(m.n_hidden()), static_cast<Eigen::Index>(inputs.size()));
    HiddenState h = h0;
    Vector nz(static_cast<Eigen::Index>(m.n_hidden()));
    Vector z(static_cast<Eigen::Index>(m.n_hidden()));
    Vector o(static_cast<Eigen::Index>(m.n_out()));
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        const SymbolId x = inputs[t];
        require(x < m.n_in(), "forward_sequence: input symbol out of range");
        z = m.W_xh.col(x) + m.b_h;
        z.noalias() += m.W_hh * h;
        if (noise && noise->rng) {
            draw_noise(nz, noise->nu, *noise->rng);
            z += h.cwiseProduct(nz);
        }
        h = z.array().tanh().matrix();
        o = m.b_y;
        o.noalias() += m.W_hy * h;
        // argmax of the logits equals argmax of the softmax
        r.predictions.push_back(static_cast<ClassId>(argmax(o)));
        if (keep_record) r.record.col(static_cast<Eigen::Index>(t)) = h;
    }
    if (!h.allFinite()) throw NumericalFailure("forward_sequence: non-finite hidden state");
    r.h_final = std::move(h);
    return r;
}

// Allocation-free noise-free stepping for long runs. Does not range-check.
class InferenceStepper {
public:
    explicit InferenceStepper(const RnnModel& m)
        : m_(&m), z_(static_cast<Eigen::Index>(m.n_hidden())), o_(static_cast<Eigen::Index>(m.n_out())) {}

    // h <- next state after reading x; returns the predicted class.
    ClassId step(HiddenState& h, SymbolId x) {
        z_ = m_->W_xh.col(x) + m_->b_h;
        z_.noalias() += m_->W_hh * h;
        h = z_.array().tanh().matrix();
        o_ = m_->b_y;
        o_.noalias() += m_->W_hy * h;
        return static_cast<ClassId>(argmax(o_));
    }

    const RnnModel& model() const noexcept { return *m_; }

private:
    const RnnModel* m_;
    Vector z_, o_;
};

inline double accuracy(std::span<const ClassId> predictions, std::span<const ClassId> targets) {
    require(predictions.size() == targets.size(), "accuracy: length mismatch");
    if (predictions.empty()) return 1.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) ok += predictions[i] == targets[i];
    return static_cast<double>(ok) / static_cast<double>(predictions.size());
}

// Steps of a stream that are scored. The opening separator is read from the
// zero state, which is not a state of the task (for addition its target would
// be the carry of a sum that never happened), so it is left out.
inline std::size_t first_scored(std::span<const SymbolId> inputs, SymbolId separator) {
    return !inputs.empty() && inputs[0] == separator ? 1 : 0;
}

inline double stream_accuracy(std::span<const ClassId> predictions, const SymbolStream& st) {
    const std::size_t from = std::min(first_scored(st.inputs, st.alphabet.separator()), predictions.size());
    return accuracy(predictions.subspan(from), std::span<const ClassId>(st.targets).subspan(from));
}

struct Gradients {
    Matrix W_xh, W_hh, W_hy;
    Vector b_h, b_y;

    explicit Gradients(const RnnModel& m)
        : W_xh(Matrix::Zero(m.W_xh.rows(), m.W_xh.cols())),
          W_hh(Matrix::Zero(m.W_hh.rows(), m.W_hh.cols())),
          W_hy(Matrix::Zero(m.W_hy.rows(), m.W_hy.cols())),
          b_h(Vector::Zero(m.b_h.size())),
          b_y(Vector::Zero(m.b_y.size())) {}

    void set_zero() {
        W_xh.setZero();
        W_hh.setZero();
        W_hy.setZero();
        b_h.setZero();
        b_y.setZero();
    }
};

struct WindowResult {
    double loss = 0.0;          // mean cross-entropy + L1 penalty
    double cross_entropy = 0.0; // mean over the window
    std::size_t correct = 0;    // argmax hits during the (noisy) forward pass
    HiddenState h_out;
};

// Reusable buffers for BPTT over windows of at most `capacity` steps.
class BpttWorkspace {
public:
    BpttWorkspace(const RnnModel& m, std::size_t capacity)
        : hs_(static_cast<Eigen::Index>(m.n_hidden()), static_cast<Eigen::Index>(capacity + 1)),
          ps_(static_cast<Eigen::Index>(m.n_out()), static_cast<Eigen::Index>(capacity)),
          dh_(static_cast<Eigen::Index>(m.n_hidden())),
          dz_(static_cast<Eigen::Index>(m.n_hidden())),
          dout_(static_cast<Eigen::Index>(m.n_out())),
          capacity_(capacity) {}

    std::size_t capacity() const noexcept { return capacity_; }

    // Loss and gradients for one window starting from h_in. noise.col(t) is the
    // draw used at step t (treated as a constant); pass an empty matrix for
    // the noise-free network. Gradients are written into `g` (overwritten).
    WindowResult loss_and_gradients(const RnnModel& m, std::span<const SymbolId> inputs,
                                    std::span<const ClassId> targets, const HiddenState& h_in,
                                    const Matrix& noise, Gradients& g) {
        const std::size_t T = inputs.size();
        require(T == targets.size(), "loss_and_gradients: inputs/targets length mismatch");
        require(T <= capacity_, "loss_and_gradients: window longer than workspace capacity");
        const bool noisy = noise.size() > 0;
        require(!noisy || static_cast<std::size_t>(noise.cols()) >= T, "loss_and_gradients: too few noise draws");
        g.set_zero();
        WindowResult r;
        if (T == 0) {
            r.h_out = h_in;
            r.loss = m.config.l1 * m.l1_norm();
            add_l1(m, g);
            return r;
        }

        hs_.col(0) = h_in;
        double ce = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const auto ti = static_cast<Eigen::Index>(t);
            auto h_prev = hs_.col(ti);
            dz_ = m.W_xh.col(inputs[t]) + m.b_h; // dz_ used as z scratch
            dz_.noalias() += m.W_hh * h_prev;
            if (noisy) dz_ += h_prev.cwiseProduct(noise.col(ti));
            hs_.col(ti + 1) = dz_.array().tanh().matrix();
            dout_ = m.b_y;
            dout_.noalias() += m.W_hy * hs_.col(ti + 1);
            Eigen::Index best = 0;
            const double mx = dout_.maxCoeff(&best);
            r.correct += static_cast<ClassId>(best) == targets[t];
            dout_ = (dout_.array() - mx).exp();
            const double sum = dout_.sum();
            dout_ /= sum;
            ps_.col(ti) = dout_;
            ce -= std::log(std::max(dout_[targets[t]], std::numeric_limits<double>::min()));
        }
        const double inv_t = 1.0 / static_cast<double>(T);
        r.cross_entropy = ce * inv_t;
        r.loss = r.cross_entropy + m.config.l1 * m.l1_norm();
        if (!std::isfinite(r.loss)) throw NumericalFailure("loss_and_gradients: non-finite loss");

        dh_.setZero();
        for (std::size_t tt = T; tt-- > 0;) {
            const auto ti = static_cast<Eigen::Index>(tt);
            auto h = hs_.col(ti + 1);
            auto h_prev = hs_.col(ti);
            dout_ = ps_.col(ti);
            dout_[targets[tt]] -= 1.0;
            dout_ *= inv_t;
            g.W_hy.noalias() += dout_ * h.transpose();
            g.b_y += dout_;
            dh_.noalias() += m.W_hy.transpose() * dout_;
            dz_ = dh_.cwiseProduct((1.0 - h.array().square()).matrix());
            g.W_xh.col(inputs[tt]) += dz_;
            g.b_h += dz_;
            g.W_hh.noalias() += dz_ * h_prev.transpose();
            dh_.noalias() = m.W_hh.transpose() * dz_;
            if (noisy) dh_ += noise.col(ti).cwiseProduct(dz_);
        }
        add_l1(m, g);
        r.h_out = hs_.col(static_cast<Eigen::Index>(T));
        return r;
    }

private:
    static void add_l1(const RnnModel& m, Gradients& g) {
        const double r = m.config.l1;
        if (r == 0.0) return;
        auto sgn = [](double v) { return static_cast<double>((v > 0) - (v < 0)); };
        g.W_xh += r * m.W_xh.unaryExpr(sgn);
        g.W_hh += r * m.W_hh.unaryExpr(sgn);
        g.W_hy += r * m.W_hy.unaryExpr(sgn);
    }

    Matrix hs_;
    Matrix ps_;
    Vector dh_, dz_, dout_;
    std::size_t capacity_;
};

// Convenience wrapper allocating its own workspace.
inline std::pair<WindowResult, Gradients> loss_and_gradients(const RnnModel& m, std::span<const SymbolId> inputs,
                                                             std::span<const ClassId> targets,
                                                             const HiddenState& h_in, const Matrix& noise = {}) {
    require(inputs.size() <= m.config.bptt_steps, "loss_and_gradients: window exceeds bptt_steps");
    BpttWorkspace ws(m, std::max<std::size_t>(inputs.size(), 1));
    Gradients g(m);
    auto r = ws.loss_and_gradients(m, inputs, targets, h_in, noise, g);
    return {std::move(r), std::move(g)};
}

// w <- w - lr * clamp(g, -clip, clip)
inline void apply_update(RnnModel& m, const Gradients& g) {
    const double lr = m.config.lr;
    const double c = m.config.clip;
    auto step = [&](auto& w, const auto& gw) { w.array() -= lr * gw.array().min(c).max(-c); };
    step(m.W_xh, g.W_xh);
    step(m.W_hh, g.W_hh);
    step(m.W_hy, g.W_hy);
    step(m.b_h, g.b_h);
    step(m.b_y, g.b_y);
}

// ---- training ---------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;                 // noise disabled, measured after the epoch
    double train_acc_noisy = 0.0;           // running accuracy of the noisy training pass
    double val_acc = 0.0;                   // noise disabled
    std::optional<double> val_acc_noisy;    // noise active; evaluated on the final epoch only
    double nu = 0.0;
};

struct TrainingTrace {
    std::vector<EpochRecord> epochs;
    bool converged = false;
    std::size_t selected_epoch = 0;     // epoch whose weights the model holds on return
    std::optional<std::string> failure; // set when training aborted on a numerical failure
};

struct TrainCallbacks {
    std::function<void(const EpochRecord&)> on_epoch;
};

inline void write_trace_csv(std::ostream& os, const TrainingTrace& trace) {
    os << "epoch,loss,train_acc,train_acc_noisy,val_acc,val_acc_noisy,nu\n";
    char buf[64];
    auto num = [&](double v) {
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    for (const auto& e : trace.epochs) {
        os << e.epoch << ',' << num(e.loss) << ',' << num(e.train_acc) << ',' << num(e.train_acc_noisy) << ','
           << num(e.val_acc) << ','
           << (e.val_acc_noisy ? num(*e.val_acc_noisy) : std::string()) << ',' << num(e.nu) << '\n';
    }
}

// Stateful truncated BPTT with plain SGD. Each epoch walks the training stream
// in consecutive windows of bptt_steps symbols; the hidden state is carried
// across windows (gradients are not) and reset to zero at the epoch start.
// An epoch is perfect when it reaches 100% noise-free train and validation
// accuracy at the full noise level. Training stops at the first perfect epoch
// from min_epochs on; if none occurs, the weights of the last perfect epoch
// are restored at the end.
inline TrainingTrace train(RnnModel& m, const SymbolStream& train_stream, const SymbolStream& val_stream,
                           const TrainCallbacks& callbacks = {}) {
    const RnnConfig& cfg = m.config;
    cfg.validate();
    require(train_stream.alphabet.size() == m.n_in() && val_stream.alphabet.size() == m.n_in(),
            "train: stream alphabet does not match model input size");
    require(train_stream.output_classes == m.n_out() && val_stream.output_classes == m.n_out(),
            "train: stream output classes do not match model output size");

    Rng noise_rng(derive_seed(cfg.rng_seed, {seed_tag::noise}));
    BpttWorkspace ws(m, cfg.bptt_steps);
    Gradients g(m);
    Matrix noise(static_cast<Eigen::Index>(m.n_hidden()), static_cast<Eigen::Index>(cfg.bptt_steps));
    const HiddenState h0 = HiddenState::Zero(static_cast<Eigen::Index>(m.n_hidden()));
    const std::span<const SymbolId> inputs(train_stream.inputs);
    const std::span<const ClassId> targets(train_stream.targets);

    TrainingTrace trace;
    std::optional<RnnModel> checkpoint; // last perfect epoch at full noise
    std::size_t checkpoint_epoch = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.nu = cfg.nu_at(epoch);
        HiddenState h = h0;
        double loss_sum = 0.0;
        std::size_t correct = 0;
        try {
            for (std::size_t start = 0; start < inputs.size(); start += cfg.bptt_steps) {
                const std::size_t len = std::min(cfg.bptt_steps, inputs.size() - start);
                const Matrix* nz = nullptr;
                if (rec.nu > 0) {
                    for (std::size_t t = 0; t < len; ++t)
                        draw_noise(noise.col(static_cast<Eigen::Index>(t)), rec.nu, noise_rng);
                    nz = &noise;
                }
                static const Matrix no_noise;
                auto w = ws.loss_and_gradients(m, inputs.subspan(start, len), targets.subspan(start, len), h,
                                               nz ? *nz : no_noise, g);
                loss_sum += w.cross_entropy * static_cast<double>(len);
                correct += w.correct;
                h = std::move(w.h_out);
                apply_update(m, g);
            }
            if (!m.all_finite()) throw NumericalFailure("train: non-finite weights");
            const double n = static_cast<double>(std::max<std::size_t>(inputs.size(), 1));
            rec.loss = loss_sum / n + cfg.l1 * m.l1_norm();
            rec.train_acc_noisy = inputs.empty() ? 1.0 : static_cast<double>(correct) / n;
            auto fit = forward_sequence(m, h0, train_stream.inputs);
            rec.train_acc = stream_accuracy(fit.predictions, train_stream);
            auto val = forward_sequence(m, h0, val_stream.inputs);
            rec.val_acc = stream_accuracy(val.predictions, val_stream);
        } catch (const NumericalFailure& e) {
            trace.failure = e.what();
            if (checkpoint) {
                m = std::move(*checkpoint);
                trace.converged = true;
                trace.selected_epoch = checkpoint_epoch;
            }
            return trace;
        }

        const bool perfect = rec.nu == cfg.nu && rec.train_acc == 1.0 && rec.val_acc == 1.0;
        const bool done = perfect && epoch >= cfg.min_epochs;
        if (perfect && !done) {
            checkpoint = m;
            checkpoint_epoch = epoch;
        }
        if (done || epoch == cfg.epochs) {
            Rng eval_rng(derive_seed(cfg.rng_seed, {seed_tag::noise, epoch}));
            auto noisy = forward_sequence(m, h0, val_stream.inputs, NoiseSource{rec.nu, &eval_rng});
            rec.val_acc_noisy = stream_accuracy(noisy.predictions, val_stream);
        }
        trace.epochs.push_back(rec);
        if (callbacks.on_epoch) callbacks.on_epoch(rec);
        if (done) {
            trace.converged = true;
            trace.selected_epoch = epoch;
            return trace;
        }
    }
    trace.selected_epoch = cfg.epochs;
    if (checkpoint) {
        m = std::move(*checkpoint);
        trace.converged = true;
        trace.selected_epoch = checkpoint_epoch;
    }
    return trace;
}

// ---- model file ------------------------------------------------------------
//
//   noisydfa-model 1
//   n_in <int>
//   n_out <int>
//   <config key> <value>      (one line per RnnConfig field)
//   W_xh <rows> <cols>
//   <row-major values, one row per line>
//   ... W_hh, b_h, W_hy, b_y likewise (vectors as <n> 1)
//   end
//
// Doubles are written in shortest round-trip form, so save/load is bit-exact.

inline constexpr int model_format_version = 1;

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("model file: bad number '" + std::string(s) + "'");
    return v;
}

inline std::uint64_t parse_uint(std::string_view s) {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("model file: bad integer '" + std::string(s) + "'");
    return v;
}

template <class M>
void write_matrix(std::ostream& os, std::string_view name, const M& w) {
    os << name << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) os << (j ? " " : "") << fmt_double(w(i, j));
        os << '\n';
    }
}

class Tokens {
public:
    explicit Tokens(std::istream& is) : is_(is) {}
    std::string next(std::string_view what) {
        std::string t;
        if (!(is_ >> t)) throw FormatError("model file: truncated while reading " + std::string(what));
        return t;
    }
    void expect(std::string_view tok) {
        auto t = next(tok);
        if (t != tok) throw FormatError("model file: expected '" + std::string(tok) + "', got '" + t + "'");
    }

private:
    std::istream& is_;
};

template <class M>
void read_matrix(Tokens& tk, std::string_view name, M& w, Eigen::Index rows, Eigen::Index cols) {
    tk.expect(name);
    const auto r = static_cast<Eigen::Index>(parse_uint(tk.next(name)));
    const auto c = static_cast<Eigen::Index>(parse_uint(tk.next(name)));
    if (r != rows || c != cols) throw FormatError("model file: shape mismatch for " + std::string(name));
    w.resize(rows, cols);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) w(i, j) = parse_double(tk.next(name));
}

} // namespace detail

inline void save_model(std::ostream& os, const RnnModel& m) {
    using detail::fmt_double;
    const auto& c = m.config;
    os << "noisydfa-model " << model_format_version << '\n';
    os << "n_in " << m.n_in() << '\n' << "n_out " << m.n_out() << '\n';
    os << "n_hidden " << c.n_hidden << '\n';
    os << "nu " << fmt_double(c.nu) << '\n';
    os << "l1 " << fmt_double(c.l1) << '\n';
    os << "lr " << fmt_double(c.lr) << '\n';
    os << "clip " << fmt_double(c.clip) << '\n';
    os << "bptt_steps " << c.bptt_steps << '\n';
    os << "epochs " << c.epochs << '\n';
    os << "min_epochs " << c.min_epochs << '\n';
    os << "noise_ramp " << (c.noise_ramp ? 1 : 0) << '\n';
    os << "ramp_epochs " << c.ramp_epochs << '\n';
    os << "init_scale " << fmt_double(c.init_scale) << '\n';
    os << "rng_seed " << c.rng_seed << '\n';
    detail::write_matrix(os, "W_xh", m.W_xh);
    detail::write_matrix(os, "W_hh", m.W_hh);
    detail::write_matrix(os, "b_h", m.b_h);
    detail::write_matrix(os, "W_hy", m.W_hy);
    detail::write_matrix(os, "b_y", m.b_y);
    os << "end\n";
}

inline RnnModel load_model(std::istream& is) {
    using detail::parse_double;
    using detail::parse_uint;
    detail::Tokens tk(is);
    if (tk.next("header") != "noisydfa-model") throw FormatError("model file: missing header");
    const auto version = parse_uint(tk.next("version"));
    if (version != model_format_version)
        throw FormatError("model file: unsupported version " + std::to_string(version));
    auto field = [&](std::string_view key) {
        tk.expect(key);
        return tk.next(key);
    };
    const auto n_in = parse_uint(field("n_in"));
    const auto n_out = parse_uint(field("n_out"));
    RnnConfig c;
    c.n_hidden = parse_uint(field("n_hidden"));
    c.nu = parse_double(field("nu"));
    c.l1 = parse_double(field("l1"));
    c.lr = parse_double(field("lr"));
    c.clip = parse_double(field("clip"));
    c.bptt_steps = parse_uint(field("bptt_steps"));
    c.epochs = parse_uint(field("epochs"));
    c.min_epochs = parse_uint(field("min_epochs"));
    c.noise_ramp = parse_uint(field("noise_ramp")) != 0;
    c.ramp_epochs = parse_uint(field("ramp_epochs"));
    c.init_scale = parse_double(field("init_scale"));
    c.rng_seed = parse_uint(field("rng_seed"));
    try {
        c.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("model file: ") + e.what());
    }
    RnnModel m = RnnModel::zeros(n_in, n_out, c);
    const auto h = static_cast<Eigen::Index>(c.n_hidden);
    detail::read_matrix(tk, "W_xh", m.W_xh, h, static_cast<Eigen::Index>(n_in));
    detail::read_matrix(tk, "W_hh", m.W_hh, h, h);
    detail::read_matrix(tk, "b_h", m.b_h, h, 1);
    detail::read_matrix(tk, "W_hy", m.W_hy, static_cast<Eigen::Index>(n_out), h);
    detail::read_matrix(tk, "b_y", m.b_y, static_cast<Eigen::Index>(n_out), 1);
    tk.expect("end");
    if (!m.all_finite()) throw FormatError("model file: non-finite weights");
    return m;
}

inline void save_model(const std::string& path, const RnnModel& m) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write model file " + path);
    save_model(os, m);
}

inline RnnModel load_model(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open model file " + path);
    return load_model(is);
}

} // namespace noisydfa
