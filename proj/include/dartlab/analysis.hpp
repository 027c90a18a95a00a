#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dartlab/patchnet.hpp"

namespace dartlab {

using LossFn = std::function<double(const Eigen::VectorXd&)>;
using LossGradFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct BarrierProfile {
    Eigen::VectorXd alphas;  // interpolation grid in [0, 1], endpoints included
    Eigen::VectorXd losses;
    double max_loss = 0.0;
    double barrier_excess = 0.0;  // max_loss - max(endpoint losses)
};

/// Loss along the straight line alpha * A + (1 - alpha) * B. The grid weights
/// are built symmetrically so barrier(A, B) and barrier(B, A) agree exactly,
/// and A == B short-circuits to a flat profile.
BarrierProfile loss_barrier(const Eigen::VectorXd& params_a, const Eigen::VectorXd& params_b,
                            const LossFn& eval_loss, int grid_size = 21);

/// First time a tracked alignment crosses theta, linearly interpolated
/// between the bracketing snapshots; +inf when never crossed.
double convergence_time_feature(const std::vector<AlignmentSnapshot>& series, int feature_k,
                                double theta_conv);
double convergence_time_noise(const std::vector<AlignmentSnapshot>& series, int tracked_index,
                              double theta_conv);

struct ScalingFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    int points = 0;
};

/// Ordinary least squares on (log x, log t); xs and ts must be positive.
ScalingFit fit_scaling(const std::vector<double>& xs, const std::vector<double>& ts);

struct FlatnessReport {
    double worst_case = 0.0;
    double average = 0.0;
    double train_loss = 0.0;
};

/// Max loss over `probes` random directions, each refined by projected
/// gradient ascent inside the l2 ball of `radius`. A lower bound on the true
/// worst case; probe directions come from a fixed stream, so raising
/// `probes` never lowers the result.
double worst_case_flatness(const Eigen::VectorXd& params, const LossGradFn& loss_grad,
                           double radius, int probes, int ascent_steps, std::uint64_t seed);

/// Mean loss under Gaussian weight noise clipped to the l2 ball of `radius`.
double average_flatness(const Eigen::VectorXd& params, const LossFn& eval_loss, double noise_std,
                        double radius, int samples, std::uint64_t seed);

struct TrajectoryProjection {
    std::vector<std::string> ids;
    Eigen::MatrixXd coords;  // N x 2
    double explained_var1 = 0.0;
    double explained_var2 = 0.0;

    void to_csv(const std::string& path) const;  // id,x,y,explained_var1,explained_var2
};

/// Mean-centered PCA of flattened checkpoints onto the top two directions.
TrajectoryProjection pca_trajectory(const std::vector<Eigen::VectorXd>& checkpoints,
                                    const std::vector<std::string>& ids = {});

/// Per-entry variance of the averaged model's noise-subspace component over
/// the mean branch value; approaches 1/m for i.i.d. branch noise. Each
/// branch's noise subspace is spanned by its own tracked noise vectors.
double noise_variance_reduction(const std::vector<Eigen::MatrixXd>& branch_weights,
                                const std::vector<std::vector<Eigen::VectorXd>>& branch_noise);

/// Spearman rank correlation (midranks for ties; +inf values rank last).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// One-sided sign test: P(X >= wins) for X ~ Binomial(trials, 1/2).
double sign_test_p(int wins, int trials);

}  // namespace dartlab
