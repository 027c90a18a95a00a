#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dartlab/analysis.hpp"
#include "dartlab/orchestrator.hpp"
#include "dartlab/patchnet.hpp"

namespace dartlab {

/// Feature-time scaling vs the initialization scale sigma0 (m = K branches on
/// cyclically shifted data, weights averaged).
struct Prop1Config {
    int K = 4;
    int m = 4;
    int d = 4096;
    int n = 64;
    int C = 2;
    double q = 3.0;
    double sigma = 1.0;
    std::vector<double> sigma0_sweep{0.01, 0.02, 0.05, 0.1, 0.2};
    int seeds = 5;
    double theta_conv = 0.5;
    std::vector<double> theta_variants{0.3, 0.5, 0.8};
    // Per-sigma0 aggregate: geometric mean of finite times over features whose
    // initial alignment lies in (gate_lo, gate_hi] * sigma0. The window is
    // fixed in units of sigma0 so every sweep point samples the same
    // init-alignment population; gate_hi * max(sigma0) stays under the
    // smallest threshold, which is the proposition's small-init hypothesis.
    double gate_lo = 0.1;
    double gate_hi = 0.75;
    double horizon_scale = 90.0;  // horizon = horizon_scale / sigma0
    int snapshot_count = 400;
    LossMode loss_mode = LossMode::exact;
    std::uint64_t master_seed = 1;
    int threads = 0;
};

struct Prop1Point {
    double sigma0 = 0.0;
    int seed = 0;
    int feature = 0;
    double alpha0 = 0.0;
    bool gated = false;  // inside the small-init gate
    double time = 0.0;   // +inf when never crossed
};

struct Prop1Result {
    std::vector<Prop1Point> points;           // at theta_conv
    std::vector<double> sigma0s;              // sweep order
    std::vector<double> agg_times;            // per-sigma0 quantile at theta_conv
    ScalingFit fit;                           // at theta_conv
    std::map<double, ScalingFit> fit_by_theta;
    double regime_factor = 0.0;  // (1/K) / (sigma^q / sqrt(d)), >= 10 required

    void write(const std::string& dir) const;  // prop1.csv + prop1.json
};

Prop1Result run_prop1(const Prop1Config& cfg);

/// Rank agreement between measured per-feature times and the restricted-
/// frequency predictor m rho'_k / rho_k for m branches with skewed rho.
struct CorollaryConfig {
    int K = 4;
    int m = 2;
    int d = 2048;
    int n = 160;
    int C = 8;
    double q = 3.0;
    double sigma = 1.0;
    double sigma0 = 0.05;
    std::vector<double> rho{0.6, 0.25, 0.1, 0.05};
    int seeds = 5;
    double theta_conv = 0.5;
    double horizon = 500.0;
    int snapshot_count = 500;
    LossMode loss_mode = LossMode::exact;
    std::uint64_t master_seed = 1;
    int threads = 0;
};

struct CorollaryResult {
    std::vector<double> predictor;      // per feature, m rho'_k / rho_k
    std::vector<double> median_time;    // per feature over seeds
    std::vector<std::vector<double>> seed_times;  // [seed][feature]
    double spearman_rank = 0.0;
    int rarest_feature = 0;  // 1-based

    void write(const std::string& dir) const;
};

CorollaryResult run_corollary(const CorollaryConfig& cfg);

/// Noise-time scaling vs the branch count m for end-averaged models, with an
/// i.i.d.-noise arm and a shared-noise contrast arm.
// The noise-time sweeps run in half mode (the regime the bounds are derived
// in); d is taken far above the 10 n^2 floor so that grown feature
// coefficients cannot leak into noise dot products through v . eps overlaps.
struct Prop2Config {
    int K = 2;
    int d = 160000;
    int n = 12;
    int C = 8;
    double q = 3.0;
    double sigma = 2.0;
    double sigma0 = 0.1444;
    std::vector<int> m_sweep{1, 2, 4, 8};
    int seeds = 5;
    double theta_conv = 0.5;
    double horizon = 60.0;
    int snapshot_count = 300;
    LossMode loss_mode = LossMode::half;
    std::uint64_t master_seed = 1;
    int threads = 0;
};

struct Prop2Result {
    struct Point {
        int m = 0;
        int seed = 0;
        bool iid = true;
        double time = 0.0;  // median over tracked noise ids
    };
    std::vector<Point> points;
    ScalingFit fit_iid;
    ScalingFit fit_shared;
    double regime_d_over_n2 = 0.0;  // d / n^2, >= 10 required

    void write(const std::string& dir) const;
};

Prop2Result run_prop2(const Prop2Config& cfg);

/// Noise-convergence delay from one intermediate aggregation at time T
/// against end-only averaging, paired over seeds.
struct Prop3Config {
    int K = 1;
    int m = 4;
    int d = 160000;
    int n = 12;
    int C = 16;
    double q = 3.0;
    double sigma = 1.35;
    double sigma0 = 0.0505;
    int seeds = 10;
    double theta_conv = 0.5;
    double t_margin = 1.1;   // T = margin * (slowest feature time) ...
    double t_window = 0.75;  // ... clamped to this fraction of the noise time
    double horizon = 350.0;
    int snapshot_count = 500;
    LossMode loss_mode = LossMode::half;
    std::uint64_t master_seed = 1;
    int threads = 0;
};

struct Prop3Result {
    struct Row {
        int seed = 0;
        double T = 0.0;
        double time_baseline = 0.0;
        double time_aggregated = 0.0;
        double ratio = 0.0;
    };
    std::vector<Row> rows;
    int wins = 0;
    double p_value = 1.0;

    void write(const std::string& dir) const;
};

Prop3Result run_prop3(const Prop3Config& cfg);

/// Mixed-training balance: one model on the m = K union of a skewed dataset
/// learns every feature; the raw skewed dataset leaves the rarest feature
/// far behind the commonest at the same budget.
struct BalanceConfig {
    int K = 4;
    int d = 1024;
    int n = 160;
    int C = 16;
    double q = 3.0;
    double sigma = 0.8;
    double sigma0 = 0.08;
    std::vector<double> rho{0.6, 0.25, 0.1, 0.05};
    int seeds = 5;
    double theta_conv = 0.5;
    double horizon = 180.0;
    int snapshot_count = 400;
    LossMode loss_mode = LossMode::exact;
    std::uint64_t master_seed = 1;
    int threads = 0;
};

struct BalanceResult {
    struct Row {
        int seed = 0;
        bool union_all_converged = false;
        double union_slowest_time = 0.0;
        double raw_rarest_alpha = 0.0;
        double raw_commonest_alpha = 0.0;
    };
    std::vector<Row> rows;

    void write(const std::string& dir) const;
};

BalanceResult run_balance(const BalanceConfig& cfg);

/// Loss-barrier study with SGD-trained patch models: pairs sharing a common
/// warmup vs independently initialized pairs, and barrier growth with the
/// divergence length.
struct BarrierConfig {
    int K = 4;
    int d = 256;
    int n = 96;
    int C = 4;
    double q = 3.0;
    double sigma = 2.0;
    double sigma0 = 0.3;
    int warmup_epochs = 30;
    std::vector<int> divergence_epochs{10, 50, 200};
    double lr_warm = 0.05;   // cosine over the warmup phase
    double lr_div = 0.1;     // fixed during divergence
    int batch_size = 32;
    int grid_size = 21;
    int seeds = 10;
    std::uint64_t master_seed = 1;
    int threads = 0;
};

struct BarrierResult {
    struct Row {
        int seed = 0;
        std::vector<double> shared_excess;  // per divergence epoch
        double independent_excess = 0.0;
    };
    std::vector<Row> rows;
    std::vector<int> divergence_epochs;

    void write(const std::string& dir) const;
};

BarrierResult run_barrier_experiment(const BarrierConfig& cfg);

/// Trained-branch variant of the injected-noise variance law: m patch models
/// flow on i.i.d.-noise datasets, then the averaged model's noise-component
/// variance is compared against the branch mean.
struct NoiseVarConfig {
    int K = 2;
    int d = 160000;
    int n = 12;
    int C = 8;
    double q = 3.0;
    double sigma = 2.0;
    double sigma0 = 0.1444;
    int m = 4;
    int seeds = 5;
    double horizon = 40.0;
    LossMode loss_mode = LossMode::half;
    std::uint64_t master_seed = 1;
};

std::vector<double> run_trained_noise_variance(const NoiseVarConfig& cfg);  // per-seed ratios

}  // namespace dartlab
