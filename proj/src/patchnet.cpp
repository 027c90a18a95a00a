#include "dartlab/patchnet.hpp"

#include <cmath>
#include <random>

#include "dartlab/errors.hpp"

namespace dartlab {

namespace {

double softplus(double x) {
    // log(1 + e^x) without overflow
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// -L'(u) for the logistic loss, in (0, 1); equals 1/2 at u = 0.
double logistic_coef(double u) { return 1.0 / (1.0 + std::exp(u)); }

double phi_deriv(double z, double q) {
    double a = std::abs(z);
    return a >= 1.0 ? 1.0 : std::pow(a, q - 1.0);
}

}  // namespace

Eigen::VectorXd PatchModel::flat() const {
    return Eigen::Map<const Eigen::VectorXd>(W.data(), W.size());
}

void PatchModel::set_flat(const Eigen::VectorXd& v) {
    if (v.size() != W.size()) throw ShapeError("parameter vector length mismatch");
    W = Eigen::Map<const Eigen::MatrixXd>(v.data(), W.rows(), W.cols());
}

PatchModel init_model(int C, int d, double q, double sigma0, std::uint64_t seed) {
    if (C < 1) throw ConfigError("channel count must be >= 1");
    if (q < 3.0) throw ConfigError("activation exponent q must be >= 3");
    if (sigma0 < 0.0) throw ConfigError("sigma0 must be nonnegative");
    PatchModel m;
    m.C = C;
    m.d = d;
    m.q = q;
    m.sigma0 = sigma0;
    m.W = Eigen::MatrixXd::Zero(C, d);
    if (sigma0 > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, sigma0);
        for (int c = 0; c < C; ++c)
            for (int j = 0; j < d; ++j) m.W(c, j) = gauss(rng);
    }
    return m;
}

Activation activation(double z, double q) {
    if (q < 3.0) throw ConfigError("activation exponent q must be >= 3");
    Activation a;
    if (z >= 1.0) {
        a.value = z - (q - 1.0) / q;
        a.derivative = 1.0;
    } else if (z <= -1.0) {
        a.value = z + (q - 1.0) / q;
        a.derivative = 1.0;
    } else {
        double p = std::pow(std::abs(z), q - 1.0);
        a.value = (z >= 0 ? 1.0 : -1.0) * std::abs(z) * p / q;
        a.derivative = p;
    }
    return a;
}

double forward(const PatchModel& model, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
    if (x1.size() != model.d || x2.size() != model.d)
        throw ShapeError("patch dimension does not match model dimension");
    double F = 0.0;
    for (int c = 0; c < model.C; ++c) {
        F += activation(model.W.row(c).dot(x1), model.q).value;
        F += activation(model.W.row(c).dot(x2), model.q).value;
    }
    return F;
}

double forward(const PatchModel& model, const PatchDataset& ds, int i) {
    return forward(model, ds.feature_patch(i), ds.noise_patch(i));
}

namespace {

// Per-sample logits for a batch via the dot products with both patches.
// Feature dots reuse W V^T; noise patches go through a dense product.
struct BatchDots {
    Eigen::MatrixXd z1;  // C x b
    Eigen::MatrixXd z2;  // C x b
    Eigen::VectorXd F;   // b
};

BatchDots batch_dots(const PatchModel& model, const PatchDataset& ds,
                     std::span<const int> batch) {
    if (ds.d() != model.d) throw ShapeError("dataset dimension does not match model");
    const int b = static_cast<int>(batch.size());
    Eigen::MatrixXd WV = model.W * ds.bank->vectors.transpose();  // C x K
    Eigen::MatrixXd X2(b, model.d);
    for (int j = 0; j < b; ++j) X2.row(j) = ds.noise_pool->row(ds.samples[batch[j]].noise_id);

    BatchDots out;
    out.z1.resize(model.C, b);
    out.z2 = model.W * X2.transpose();
    out.F = Eigen::VectorXd::Zero(b);
    for (int j = 0; j < b; ++j) {
        const PatchSample& s = ds.samples[batch[j]];
        out.z1.col(j) = s.label * WV.col(s.feature_index - 1);
        for (int c = 0; c < model.C; ++c)
            out.F[j] += activation(out.z1(c, j), model.q).value +
                        activation(out.z2(c, j), model.q).value;
    }
    return out;
}

}  // namespace

double dataset_loss(const PatchModel& model, const PatchDataset& ds) {
    if (ds.n() == 0) throw DomainError("dataset_loss undefined for an empty dataset");
    std::vector<int> all(ds.n());
    for (int i = 0; i < ds.n(); ++i) all[i] = i;
    BatchDots dots = batch_dots(model, ds, all);
    double loss = 0.0;
    for (int i = 0; i < ds.n(); ++i) loss += softplus(-ds.samples[i].label * dots.F[i]);
    return loss / ds.n();
}

Eigen::MatrixXd loss_gradient(const PatchModel& model, const PatchDataset& ds, LossMode mode) {
    if (ds.n() == 0) throw DomainError("loss_gradient undefined for an empty dataset");
    const int n = ds.n();
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    BatchDots dots = batch_dots(model, ds, all);

    Eigen::MatrixXd coefV = Eigen::MatrixXd::Zero(model.C, ds.K());  // onto feature vectors
    Eigen::MatrixXd coefE = Eigen::MatrixXd::Zero(model.C, n);       // onto noise patches
    for (int i = 0; i < n; ++i) {
        const PatchSample& s = ds.samples[i];
        double coef = (mode == LossMode::half) ? 0.5 : logistic_coef(s.label * dots.F[i]);
        double scale = -coef / n;  // dL/dW contribution sign
        for (int c = 0; c < model.C; ++c) {
            coefV(c, s.feature_index - 1) += scale * phi_deriv(dots.z1(c, i), model.q);
            coefE(c, i) += scale * s.label * phi_deriv(dots.z2(c, i), model.q);
        }
    }
    Eigen::MatrixXd X2(n, model.d);
    for (int i = 0; i < n; ++i) X2.row(i) = ds.noise_pool->row(ds.samples[i].noise_id);
    return coefV * ds.bank->vectors + coefE * X2;
}

double dataset_accuracy(const PatchModel& model, const PatchDataset& ds) {
    if (ds.n() == 0) throw DomainError("accuracy undefined for an empty dataset");
    std::vector<int> all(ds.n());
    for (int i = 0; i < ds.n(); ++i) all[i] = i;
    BatchDots dots = batch_dots(model, ds, all);
    int hits = 0;
    for (int i = 0; i < ds.n(); ++i)
        if (ds.samples[i].label * dots.F[i] > 0.0) ++hits;
    return double(hits) / ds.n();
}

AlignmentSnapshot measure_alignment(const PatchModel& model, const FeatureBank& bank,
                                    const std::vector<NoiseTarget>& tracked, double theta_conv) {
    AlignmentSnapshot snap;
    Eigen::MatrixXd WV = model.W * bank.vectors.transpose();  // C x K
    snap.alphas = WV.colwise().maxCoeff();
    snap.noise_coeffs.resize(static_cast<int>(tracked.size()));
    for (std::size_t j = 0; j < tracked.size(); ++j) {
        Eigen::VectorXd dots = model.W * tracked[j].eps;
        snap.noise_coeffs[j] =
            tracked[j].label > 0 ? dots.maxCoeff() : -dots.minCoeff();
    }
    snap.k_cut = static_cast<int>((snap.alphas.array() >= theta_conv).count());
    return snap;
}

// --- FlowEngine ---------------------------------------------------------

FlowEngine::FlowEngine(const PatchModel& init, const PatchDataset& ds, LossMode mode)
    : ds_(ds), mode_(mode), q_(init.q), sigma0_(init.sigma0), C_(init.C), W0_(init.W) {
    if (ds_.n() == 0) throw DomainError("gradient flow undefined for an empty dataset");
    if (ds_.d() != init.d) throw ShapeError("dataset dimension does not match model");

    noise_col_.assign(ds_.noise_pool->rows(), -1);
    for (const PatchSample& s : ds_.samples) {
        if (noise_col_[s.noise_id] < 0) {
            noise_col_[s.noise_id] = static_cast<int>(col_rows_.size());
            col_rows_.push_back(s.noise_id);
            col_label_.push_back(s.label);
        }
    }
    const int u = static_cast<int>(col_rows_.size());
    const int K = ds_.K();

    Eigen::MatrixXd E(u, ds_.d());
    for (int r = 0; r < u; ++r) E.row(r) = ds_.noise_pool->row(col_rows_[r]);
    const Eigen::MatrixXd& V = ds_.bank->vectors;
    gram_ff_ = V * V.transpose();
    gram_fn_ = V * E.transpose();
    gram_nn_ = E * E.transpose();
    E_ = std::move(E);

    coeff_feat_ = Eigen::MatrixXd::Zero(C_, K);
    coeff_noise_ = Eigen::MatrixXd::Zero(C_, u);
    refresh_dots();
}

void FlowEngine::refresh_dots() {
    z_feat_ = W0_ * ds_.bank->vectors.transpose();
    z_noise_ = W0_ * E_.transpose();
}

void FlowEngine::step(double dt) {
    const int n = ds_.n();
    const int K = ds_.K();
    const int u = static_cast<int>(col_rows_.size());
    Eigen::MatrixXd dA = Eigen::MatrixXd::Zero(C_, K);
    Eigen::MatrixXd dB = Eigen::MatrixXd::Zero(C_, u);

    for (int i = 0; i < n; ++i) {
        const PatchSample& s = ds_.samples[i];
        const int k = s.feature_index - 1;
        const int col = noise_col_[s.noise_id];
        double coef = 0.5;
        if (mode_ == LossMode::exact) {
            double F = 0.0;
            for (int c = 0; c < C_; ++c)
                F += activation(s.label * z_feat_(c, k), q_).value +
                     activation(z_noise_(c, col), q_).value;
            coef = logistic_coef(s.label * F);
        }
        const double scale = dt * coef / n;
        for (int c = 0; c < C_; ++c) {
            dA(c, k) += scale * phi_deriv(z_feat_(c, k), q_);
            dB(c, col) += scale * s.label * phi_deriv(z_noise_(c, col), q_);
        }
    }

    coeff_feat_ += dA;
    coeff_noise_ += dB;
    z_feat_ += dA * gram_ff_ + dB * gram_fn_.transpose();
    z_noise_ += dA * gram_fn_ + dB * gram_nn_;
    t_ += dt;
    ++steps_;
    if (!z_feat_.allFinite() || !z_noise_.allFinite())
        throw DivergenceError("gradient flow diverged (NaN/Inf in weights) at t = " +
                                  std::to_string(t_),
                              t_ - dt);
}

Eigen::VectorXd FlowEngine::feature_alignments() const {
    return z_feat_.colwise().maxCoeff();
}

double FlowEngine::noise_alignment(int noise_id) const {
    if (noise_id < 0 || noise_id >= static_cast<int>(noise_col_.size()) ||
        noise_col_[noise_id] < 0)
        throw DomainError("noise id " + std::to_string(noise_id) + " not used by this dataset");
    const int col = noise_col_[noise_id];
    return col_label_[col] > 0 ? z_noise_.col(col).maxCoeff() : -z_noise_.col(col).minCoeff();
}

double FlowEngine::loss() const {
    double loss = 0.0;
    for (const PatchSample& s : ds_.samples) {
        const int k = s.feature_index - 1;
        const int col = noise_col_[s.noise_id];
        double F = 0.0;
        for (int c = 0; c < C_; ++c)
            F += activation(s.label * z_feat_(c, k), q_).value +
                 activation(z_noise_(c, col), q_).value;
        loss += softplus(-s.label * F);
    }
    return loss / ds_.n();
}

PatchModel FlowEngine::materialize() const {
    PatchModel m;
    m.C = C_;
    m.d = ds_.d();
    m.q = q_;
    m.sigma0 = sigma0_;
    m.W = W0_ + coeff_feat_ * ds_.bank->vectors + coeff_noise_ * E_;
    return m;
}

void FlowEngine::reset_weights(const Eigen::MatrixXd& W) {
    if (W.rows() != C_ || W.cols() != ds_.d()) throw ShapeError("weight matrix shape mismatch");
    W0_ = W;
    coeff_feat_.setZero();
    coeff_noise_.setZero();
    refresh_dots();
}

double FlowEngine::suggest_dt(double eta) const {
    // Two caps. (a) Initial-scale rule: largest per-step weight change at the
    // current state stays at eta * sigma0. (b) Tail cap: once phi' saturates
    // at 1 the fastest possible alignment rate is bounded by the Gram sums;
    // keep per-step alignment motion under eta so threshold crossings stay
    // resolved. (a) alone leaves the saturation phase under-integrated.
    double dt = std::numeric_limits<double>::infinity();

    if (sigma0_ > 0.0) {
        FlowEngine probe(*this);
        Eigen::MatrixXd before_A = probe.coeff_feat_, before_B = probe.coeff_noise_;
        probe.step(1.0);
        Eigen::MatrixXd dW = (probe.coeff_feat_ - before_A) * ds_.bank->vectors +
                             (probe.coeff_noise_ - before_B) * E_;
        double gmax = dW.cwiseAbs().maxCoeff();
        if (gmax > 0.0) dt = std::min(dt, eta * sigma0_ / gmax);
    }

    const int n = ds_.n();
    const int K = ds_.K();
    const int u = static_cast<int>(col_rows_.size());
    Eigen::VectorXd rate = Eigen::VectorXd::Zero(K + u);
    for (const PatchSample& s : ds_.samples) {
        const int k = s.feature_index - 1;
        const int col = noise_col_[s.noise_id];
        for (int j = 0; j < K; ++j)
            rate[j] += std::abs(gram_ff_(k, j)) + std::abs(gram_fn_(j, col));
        for (int j = 0; j < u; ++j)
            rate[K + j] += std::abs(gram_fn_(k, j)) + std::abs(gram_nn_(col, j));
    }
    double worst = rate.maxCoeff() / (2.0 * n);
    if (worst > 0.0) dt = std::min(dt, eta / worst);
    return std::isfinite(dt) ? dt : 0.0;
}

FlowEngine::Probe FlowEngine::make_probe(const Eigen::VectorXd& x) const {
    if (x.size() != ds_.d()) throw ShapeError("probe vector dimension mismatch");
    Probe p;
    p.w0x = W0_ * x;
    p.vx = ds_.bank->vectors * x;
    p.ex = E_ * x;
    return p;
}

Eigen::VectorXd FlowEngine::probe_dots(const Probe& p) const {
    return p.w0x + coeff_feat_ * p.vx + coeff_noise_ * p.ex;
}

FlowResult flow_integrate(const PatchModel& model, const PatchDataset& ds, const FlowConfig& cfg,
                          const std::vector<int>& tracked_noise_ids) {
    if (cfg.horizon < 0.0) throw ConfigError("flow horizon must be nonnegative");
    if (cfg.record_every <= 0.0) throw ConfigError("record_every must be positive");
    FlowEngine engine(model, ds, cfg.loss_mode);

    double dt = cfg.dt > 0.0 ? cfg.dt : engine.suggest_dt(cfg.dt_eta);
    if (!(dt > 0.0) || !std::isfinite(dt)) dt = cfg.record_every;  // degenerate/zero gradient

    FlowResult out;
    out.dt = dt;
    auto snapshot = [&]() {
        AlignmentSnapshot snap;
        snap.t = engine.time();
        snap.alphas = engine.feature_alignments();
        snap.noise_coeffs.resize(static_cast<int>(tracked_noise_ids.size()));
        for (std::size_t j = 0; j < tracked_noise_ids.size(); ++j)
            snap.noise_coeffs[j] = engine.noise_alignment(tracked_noise_ids[j]);
        snap.k_cut = static_cast<int>((snap.alphas.array() >= cfg.theta_conv).count());
        out.snapshots.push_back(std::move(snap));
    };

    snapshot();  // t = 0
    double next_mark = cfg.record_every;
    while (engine.time() + 0.5 * dt < cfg.horizon) {
        engine.step(dt);
        if (engine.time() + 1e-12 >= next_mark) {
            snapshot();
            while (next_mark <= engine.time() + 1e-12) next_mark += cfg.record_every;
        }
    }
    if (out.snapshots.back().t < engine.time()) snapshot();
    out.steps = engine.steps();
    out.final_model = engine.materialize();
    return out;
}

// --- PatchTrainable ------------------------------------------------------

PatchTrainable::PatchTrainable(PatchModel model, std::shared_ptr<const PatchDataset> ds)
    : model_(std::move(model)), ds_(std::move(ds)) {
    if (ds_->d() != model_.d) throw ShapeError("dataset dimension does not match model");
}

Eigen::VectorXd PatchTrainable::get_params() const { return model_.flat(); }

void PatchTrainable::set_params(const Eigen::VectorXd& params) { model_.set_flat(params); }

int PatchTrainable::sample_count() const { return ds_->n(); }

double PatchTrainable::loss_and_grad(std::span<const int> batch, Eigen::VectorXd& grad) const {
    if (batch.empty()) throw DomainError("loss_and_grad needs a nonempty batch");
    const int b = static_cast<int>(batch.size());
    BatchDots dots = batch_dots(model_, *ds_, batch);

    Eigen::MatrixXd coefV = Eigen::MatrixXd::Zero(model_.C, ds_->K());
    Eigen::MatrixXd coefE = Eigen::MatrixXd::Zero(model_.C, b);
    double loss = 0.0;
    for (int j = 0; j < b; ++j) {
        const PatchSample& s = ds_->samples[batch[j]];
        double u = s.label * dots.F[j];
        loss += softplus(-u);
        double scale = -logistic_coef(u) / b;
        for (int c = 0; c < model_.C; ++c) {
            coefV(c, s.feature_index - 1) += scale * phi_deriv(dots.z1(c, j), model_.q);
            coefE(c, j) += scale * s.label * phi_deriv(dots.z2(c, j), model_.q);
        }
    }
    Eigen::MatrixXd X2(b, model_.d);
    for (int j = 0; j < b; ++j) X2.row(j) = ds_->noise_pool->row(ds_->samples[batch[j]].noise_id);
    Eigen::MatrixXd G = coefV * ds_->bank->vectors + coefE * X2;
    grad = Eigen::Map<const Eigen::VectorXd>(G.data(), G.size());
    return loss / b;
}

double PatchTrainable::loss(std::span<const int> batch) const {
    if (batch.empty()) throw DomainError("loss needs a nonempty batch");
    BatchDots dots = batch_dots(model_, *ds_, batch);
    double loss = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j)
        loss += softplus(-ds_->samples[batch[j]].label * dots.F[j]);
    return loss / batch.size();
}

double PatchTrainable::accuracy(std::span<const int> batch) const {
    if (batch.empty()) throw DomainError("accuracy needs a nonempty batch");
    BatchDots dots = batch_dots(model_, *ds_, batch);
    int hits = 0;
    for (std::size_t j = 0; j < batch.size(); ++j)
        if (ds_->samples[batch[j]].label * dots.F[j] > 0.0) ++hits;
    return double(hits) / batch.size();
}

std::unique_ptr<Trainable> PatchTrainable::clone() const {
    return std::make_unique<PatchTrainable>(model_, ds_);
}

EmaState& ema_update(EmaState& state, const Eigen::VectorXd& params) {
    if (state.updates == 0 && state.shadow.size() == 0) {
        state.shadow = params;
    } else {
        if (state.shadow.size() != params.size())
            throw ShapeError("EMA shadow length does not match parameter length");
        state.shadow = state.decay * state.shadow + (1.0 - state.decay) * params;
    }
    ++state.updates;
    return state;
}

}  // namespace dartlab
