#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dartlab/patchworld.hpp"
#include "dartlab/trainable.hpp"

namespace dartlab {

enum class LossMode {
    exact,  // true logistic derivative
    half,   // -L' replaced by 1/2 (the analysis device used in the derivations)
};

/// Single-layer patch network: F(w, x) = sum_c sum_p phi(w_c . x_p).
struct PatchModel {
    int C = 0;
    int d = 0;
    double q = 3.0;
    double sigma0 = 0.0;
    Eigen::MatrixXd W;  // C x d, row c is channel weight w_c

    Eigen::VectorXd flat() const;
    void set_flat(const Eigen::VectorXd& v);
};

/// Rows i.i.d. N(0, sigma0^2 I_d) from the seeded stream. sigma0 = 0 is
/// permitted and yields all-zero weights.
PatchModel init_model(int C, int d, double q, double sigma0, std::uint64_t seed);

struct Activation {
    double value = 0.0;
    double derivative = 0.0;
};

/// phi(z) = sign(z) |z|^q / q for |z| <= 1, linear tails z -/+ (q-1)/q beyond;
/// derivative |z|^{q-1} inside, 1 outside.
Activation activation(double z, double q);

double forward(const PatchModel& model, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2);
double forward(const PatchModel& model, const PatchDataset& ds, int i);

/// Mean logistic loss (1/n) sum log(1 + exp(-y F)).
double dataset_loss(const PatchModel& model, const PatchDataset& ds);

/// Gradient of dataset_loss w.r.t. W; in half mode the logistic derivative
/// factor is pinned to 1/2.
Eigen::MatrixXd loss_gradient(const PatchModel& model, const PatchDataset& ds,
                              LossMode mode = LossMode::exact);

/// Fraction of samples with y * F > 0.
double dataset_accuracy(const PatchModel& model, const PatchDataset& ds);

struct NoiseTarget {
    Eigen::VectorXd eps;
    int label = 1;
};

struct AlignmentSnapshot {
    double t = 0.0;
    Eigen::VectorXd alphas;        // alpha_l = max_c w_c . v_l (K entries)
    Eigen::VectorXd noise_coeffs;  // per tracked target: max_c y w_c . eps
    int k_cut = 0;                 // count of alphas >= theta_conv
};

AlignmentSnapshot measure_alignment(const PatchModel& model, const FeatureBank& bank,
                                    const std::vector<NoiseTarget>& tracked, double theta_conv);

struct FlowConfig {
    double dt = 0.0;  // 0 = pick from the step-size rule below
    double horizon = 1.0;
    double record_every = 0.1;
    LossMode loss_mode = LossMode::exact;
    double theta_conv = 0.5;
    double dt_eta = 0.01;  // dt rule: max per-step |dW| <= dt_eta * sigma0 at t = 0
};

struct FlowResult {
    std::vector<AlignmentSnapshot> snapshots;
    PatchModel final_model;
    double dt = 0.0;
    long steps = 0;
};

/// Euler integrator for d/dt w_c = -dL/dw_c on a fixed dataset. The weights
/// only ever move inside span{v_1..v_K, eps_1..eps_n}, so the engine tracks
/// subspace coefficients and Gram matrices instead of touching all d
/// coordinates per step; materialize() reconstructs the dense weights.
class FlowEngine {
public:
    FlowEngine(const PatchModel& init, const PatchDataset& ds, LossMode mode);

    void step(double dt);  // throws DivergenceError on NaN/Inf
    double time() const { return t_; }
    long steps() const { return steps_; }

    /// w_c . v_l for all channels/features (C x K).
    const Eigen::MatrixXd& feature_dots() const { return z_feat_; }
    /// w_c . eps for all channels and pool rows used by the dataset (C x u).
    const Eigen::MatrixXd& noise_dots() const { return z_noise_; }
    Eigen::VectorXd feature_alignments() const;      // max over channels
    double noise_alignment(int noise_id) const;      // max_c y * (w_c . eps)
    double loss() const;                             // exact logistic loss
    PatchModel materialize() const;
    void reset_weights(const Eigen::MatrixXd& W);    // re-anchor the subspace rep
    double suggest_dt(double eta) const;             // step-size rule, see impl
    const PatchDataset& dataset() const { return ds_; }

    /// Cached projections of a fixed external vector; per-channel dot
    /// products with the evolving weights then cost O(C (K + u)). Probes are
    /// invalidated by reset_weights and must be rebuilt.
    struct Probe {
        Eigen::VectorXd w0x;  // C
        Eigen::VectorXd vx;   // K
        Eigen::VectorXd ex;   // u
    };
    Probe make_probe(const Eigen::VectorXd& x) const;
    Eigen::VectorXd probe_dots(const Probe& p) const;  // w_c . x per channel

private:
    void refresh_dots();

    PatchDataset ds_;
    LossMode mode_;
    double q_ = 3.0;
    double sigma0_ = 0.0;
    double t_ = 0.0;
    long steps_ = 0;
    int C_ = 0;

    Eigen::MatrixXd W0_;          // anchor weights (C x d)
    Eigen::MatrixXd E_;           // noise basis rows used by the dataset (u x d)
    Eigen::MatrixXd coeff_feat_;  // C x K, weight added along each v_k
    Eigen::MatrixXd coeff_noise_; // C x u, weight added along each pool row
    Eigen::MatrixXd z_feat_;      // C x K dot products
    Eigen::MatrixXd z_noise_;     // C x u dot products
    Eigen::MatrixXd gram_ff_;     // K x K, v . v
    Eigen::MatrixXd gram_fn_;     // K x u, v . eps
    Eigen::MatrixXd gram_nn_;     // u x u, eps . eps
    std::vector<int> noise_col_;  // pool row -> column (or -1)
    std::vector<int> col_rows_;   // column -> pool row
    std::vector<int> col_label_;  // column -> sample label
};

/// Integrates until the horizon, snapshotting every record_every time units
/// (t = 0 and the final state included). tracked_noise_ids select pool rows
/// whose alignment the snapshots carry.
FlowResult flow_integrate(const PatchModel& model, const PatchDataset& ds, const FlowConfig& cfg,
                          const std::vector<int>& tracked_noise_ids = {});

/// Trainable adapter over (PatchModel, PatchDataset) for the orchestrator.
class PatchTrainable : public Trainable {
public:
    PatchTrainable(PatchModel model, std::shared_ptr<const PatchDataset> ds);

    Eigen::VectorXd get_params() const override;
    void set_params(const Eigen::VectorXd& params) override;
    int sample_count() const override;
    double loss_and_grad(std::span<const int> batch, Eigen::VectorXd& grad) const override;
    double loss(std::span<const int> batch) const override;
    double accuracy(std::span<const int> batch) const override;
    std::unique_ptr<Trainable> clone() const override;

    const PatchModel& model() const { return model_; }

private:
    PatchModel model_;
    std::shared_ptr<const PatchDataset> ds_;
};

}  // namespace dartlab
