#include "dartlab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dartlab/csvio.hpp"
#include "dartlab/errors.hpp"
#include "dartlab/parallel.hpp"

namespace dartlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Order statistic over values that may contain +inf (never-converged runs
// land in the upper tail and leave lower quantiles intact).
double quantile_with_inf(std::vector<double> v, double q) {
    if (v.empty()) throw DomainError("quantile of an empty set");
    std::sort(v.begin(), v.end());
    int idx = std::min<int>(static_cast<int>(std::floor(q * v.size())),
                            static_cast<int>(v.size()) - 1);
    return v[idx];
}

double median_with_inf(std::vector<double> v) { return quantile_with_inf(std::move(v), 0.5); }

struct TrackedRef {
    int branch = 0;
    int noise_id = 0;
    int label = 1;
};

struct LockstepOutput {
    std::vector<AlignmentSnapshot> series;  // of the uniformly averaged model
    double dt = 0.0;
    long steps = 0;
    std::vector<double> event_times;  // aggregation events actually applied
};

// Integrates m branch flows on a common time grid from a shared initial
// model and records snapshots of the averaged model. Optional aggregation
// events average the branch weights and re-broadcast mid-flow.
LockstepOutput lockstep_flow(const std::vector<PatchModel>& inits,
                             const std::vector<PatchDataset>& branch_ds, LossMode mode,
                             double horizon, int snapshot_count, double theta,
                             const std::vector<TrackedRef>& tracked,
                             std::vector<double> aggregate_at, double dt_eta = 0.01) {
    if (branch_ds.empty()) throw ConfigError("lockstep flow needs at least one branch");
    if (snapshot_count < 2) throw ConfigError("need at least 2 snapshots");
    if (inits.size() != 1 && inits.size() != branch_ds.size())
        throw ConfigError("need one shared init or one init per branch");

    std::vector<FlowEngine> engines;
    engines.reserve(branch_ds.size());
    for (std::size_t b = 0; b < branch_ds.size(); ++b)
        engines.emplace_back(inits.size() == 1 ? inits[0] : inits[b], branch_ds[b], mode);
    const int m = static_cast<int>(engines.size());

    double dt = kInf;
    for (const FlowEngine& e : engines) {
        double s = e.suggest_dt(dt_eta);
        if (s > 0.0) dt = std::min(dt, s);
    }
    if (!std::isfinite(dt)) dt = horizon / (10.0 * snapshot_count);

    // fixed tracked vectors, probed cheaply against every engine
    std::vector<Eigen::VectorXd> tracked_eps;
    std::vector<int> tracked_label;
    for (const TrackedRef& r : tracked) {
        tracked_eps.push_back(branch_ds[r.branch].noise_pool->row(r.noise_id));
        tracked_label.push_back(r.label);
    }
    std::vector<std::vector<FlowEngine::Probe>> probes(m);
    auto rebuild_probes = [&]() {
        for (int b = 0; b < m; ++b) {
            probes[b].clear();
            for (const Eigen::VectorXd& eps : tracked_eps)
                probes[b].push_back(engines[b].make_probe(eps));
        }
    };
    rebuild_probes();

    LockstepOutput out;
    out.dt = dt;
    const double record_every = horizon > 0.0 ? horizon / snapshot_count : 1.0;

    auto snapshot = [&](double t) {
        AlignmentSnapshot snap;
        snap.t = t;
        Eigen::MatrixXd mean_feat = engines[0].feature_dots();
        for (int b = 1; b < m; ++b) mean_feat += engines[b].feature_dots();
        mean_feat /= double(m);
        snap.alphas = mean_feat.colwise().maxCoeff();
        snap.noise_coeffs.resize(static_cast<int>(tracked.size()));
        for (std::size_t j = 0; j < tracked.size(); ++j) {
            Eigen::VectorXd dots = engines[0].probe_dots(probes[0][j]);
            for (int b = 1; b < m; ++b) dots += engines[b].probe_dots(probes[b][j]);
            dots /= double(m);
            snap.noise_coeffs[j] =
                tracked_label[j] > 0 ? dots.maxCoeff() : -dots.minCoeff();
        }
        snap.k_cut = static_cast<int>((snap.alphas.array() >= theta).count());
        out.series.push_back(std::move(snap));
    };

    std::sort(aggregate_at.begin(), aggregate_at.end());
    std::size_t next_event = 0;
    auto maybe_aggregate = [&](double t) {
        while (next_event < aggregate_at.size() && t + 1e-12 >= aggregate_at[next_event]) {
            Eigen::MatrixXd mean_w = engines[0].materialize().W;
            for (int b = 1; b < m; ++b) mean_w += engines[b].materialize().W;
            mean_w /= double(m);
            for (FlowEngine& e : engines) e.reset_weights(mean_w);
            rebuild_probes();
            out.event_times.push_back(t);
            ++next_event;
        }
    };

    double t = 0.0;
    snapshot(t);
    maybe_aggregate(t);
    double next_mark = record_every;
    long steps = 0;
    while (t + 0.5 * dt < horizon) {
        for (FlowEngine& e : engines) e.step(dt);
        t = engines[0].time();
        ++steps;
        if (t + 1e-12 >= next_mark) {
            snapshot(t);
            while (next_mark <= t + 1e-12) next_mark += record_every;
        }
        maybe_aggregate(t);
    }
    if (out.series.back().t < t) snapshot(t);
    out.steps = steps;
    return out;
}

std::vector<int> all_sample_ids(const PatchDataset& ds) {
    std::vector<int> ids;
    for (const PatchSample& s : ds.samples) ids.push_back(s.noise_id);
    return ids;
}

}  // namespace

// --- Proposition 1 --------------------------------------------------------

Prop1Result run_prop1(const Prop1Config& cfg) {
    const double noise_scale = std::pow(cfg.sigma, cfg.q) / std::sqrt(double(cfg.d));
    const double regime_factor = (1.0 / cfg.K) / noise_scale;
    if (regime_factor < 10.0)
        throw ConfigError("regime violated: sigma^q/sqrt(d) = " + format_double(noise_scale) +
                          " must be <= 1/(10 K) = " + format_double(0.1 / cfg.K));
    if (cfg.m != cfg.K) throw ConfigError("this sweep requires m = K branches");

    std::vector<double> thetas = cfg.theta_variants;
    if (std::find(thetas.begin(), thetas.end(), cfg.theta_conv) == thetas.end())
        thetas.push_back(cfg.theta_conv);

    struct TaskOut {
        std::vector<double> alpha0;                       // per feature at t = 0
        std::vector<std::vector<double>> times_by_theta;  // [theta][feature]
    };
    const int S = static_cast<int>(cfg.sigma0_sweep.size());
    std::vector<TaskOut> outs(S * cfg.seeds);

    FeatureBank bank = make_feature_bank(cfg.K, cfg.d);
    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(cfg.K, 1.0 / cfg.K);

    parallel_for(
        S * cfg.seeds,
        [&](int task) {
            const int si = task / cfg.seeds;
            const int seed = task % cfg.seeds;
            const double sigma0 = cfg.sigma0_sweep[si];
            // Draws are shared across the sigma0 sweep (paired design): the
            // standardized init is identical per seed, so the gated
            // populations coincide at every sweep point.
            RngPolicy rng{derive_seed(cfg.master_seed, "prop1:r" + std::to_string(seed))};
            PatchDataset base = sample_dataset(bank, cfg.n, uniform, cfg.sigma, rng.derive("data"));
            PatchModel init = init_model(cfg.C, cfg.d, cfg.q, sigma0, rng.derive("init"));
            std::vector<PatchDataset> branches;
            for (int k = 1; k <= cfg.m; ++k) branches.push_back(apply_augmentation(base, k));

            LockstepOutput lock =
                lockstep_flow({init}, branches, cfg.loss_mode, cfg.horizon_scale / sigma0,
                              cfg.snapshot_count, cfg.theta_conv, {}, {});
            TaskOut& out = outs[task];
            for (int k = 0; k < cfg.K; ++k) out.alpha0.push_back(lock.series[0].alphas[k]);
            out.times_by_theta.resize(thetas.size());
            for (std::size_t ti = 0; ti < thetas.size(); ++ti)
                for (int k = 1; k <= cfg.K; ++k)
                    out.times_by_theta[ti].push_back(
                        convergence_time_feature(lock.series, k, thetas[ti]));
        },
        cfg.threads);

    Prop1Result res;
    res.regime_factor = regime_factor;
    res.sigma0s = cfg.sigma0_sweep;
    for (std::size_t ti = 0; ti < thetas.size(); ++ti) {
        std::vector<double> agg;
        for (int si = 0; si < S; ++si) {
            double log_sum = 0.0;
            int count = 0;
            for (int seed = 0; seed < cfg.seeds; ++seed) {
                const TaskOut& out = outs[si * cfg.seeds + seed];
                for (int k = 0; k < cfg.K; ++k) {
                    double z = out.alpha0[k] / cfg.sigma0_sweep[si];
                    double t = out.times_by_theta[ti][k];
                    if (z <= cfg.gate_lo || z > cfg.gate_hi) continue;
                    if (!std::isfinite(t)) continue;  // censored past the horizon
                    log_sum += std::log(t);
                    ++count;
                }
            }
            if (count < 3)
                throw ConfigError("fewer than 3 gated feature times at sigma0 = " +
                                  format_double(cfg.sigma0_sweep[si]) +
                                  "; raise the horizon or seeds");
            agg.push_back(std::exp(log_sum / count));
        }
        ScalingFit fit = fit_scaling(cfg.sigma0_sweep, agg);
        res.fit_by_theta[thetas[ti]] = fit;
        if (thetas[ti] == cfg.theta_conv) {
            res.agg_times = agg;
            res.fit = fit;
        }
    }
    std::size_t main_theta =
        std::find(thetas.begin(), thetas.end(), cfg.theta_conv) - thetas.begin();
    for (int si = 0; si < S; ++si)
        for (int seed = 0; seed < cfg.seeds; ++seed) {
            const TaskOut& out = outs[si * cfg.seeds + seed];
            for (int k = 0; k < cfg.K; ++k) {
                double a0 = out.alpha0[k];
                double z = a0 / cfg.sigma0_sweep[si];
                res.points.push_back({cfg.sigma0_sweep[si], seed, k + 1, a0,
                                      z > cfg.gate_lo && z <= cfg.gate_hi,
                                      out.times_by_theta[main_theta][k]});
            }
        }
    return res;
}

void Prop1Result::write(const std::string& dir) const {
    CsvWriter csv({"sigma0", "seed", "feature", "alpha0", "gated", "time"}, dir + "/prop1.csv");
    for (const Prop1Point& p : points)
        csv.row({p.sigma0, (long long)p.seed, (long long)p.feature, p.alpha0,
                 (long long)(p.gated ? 1 : 0), p.time});
    csv.close();
    nlohmann::json j;
    j["slope"] = fit.slope;
    j["intercept"] = fit.intercept;
    j["r2"] = fit.r2;
    j["regime_factor"] = regime_factor;
    j["sigma0"] = sigma0s;
    j["aggregate_time"] = agg_times;
    for (const auto& [theta, f] : fit_by_theta)
        j["slope_by_theta"][format_double(theta)] = f.slope;
    j["expected_slope"] = -1.0;
    j["pass"] = fit.slope >= -1.3 && fit.slope <= -0.7 && fit.r2 >= 0.9;
    write_summary(j, dir + "/prop1.json");
}

// --- Corollary 1.1 --------------------------------------------------------

CorollaryResult run_corollary(const CorollaryConfig& cfg) {
    if (cfg.m < 1 || cfg.m > cfg.K) throw ConfigError("corollary needs m in [1, K]");
    const double noise_scale = std::pow(cfg.sigma, cfg.q) / std::sqrt(double(cfg.d));
    if ((1.0 / cfg.K) / noise_scale < 10.0)
        throw ConfigError("regime violated: sigma^q/sqrt(d) must be <= 1/(10 K)");

    FeatureBank bank = make_feature_bank(cfg.K, cfg.d);
    Eigen::VectorXd rho(cfg.K);
    for (int k = 0; k < cfg.K; ++k) rho[k] = cfg.rho[k];

    CorollaryResult res;
    res.seed_times.assign(cfg.seeds, std::vector<double>(cfg.K, kInf));

    parallel_for(
        cfg.seeds,
        [&](int seed) {
            RngPolicy rng{derive_seed(cfg.master_seed, "corollary:r" + std::to_string(seed))};
            PatchDataset base =
                sample_dataset(bank, cfg.n, rho, cfg.sigma, rng.derive("data"));
            PatchModel init = init_model(cfg.C, cfg.d, cfg.q, cfg.sigma0, rng.derive("init"));
            // Branch j uses the inverse shift T_{K-j}: feature k then draws
            // its growth from the window {k+1, ..., k+m}, the window the
            // restricted-frequency predictor is defined over.
            std::vector<PatchDataset> branches;
            for (int j = 1; j <= cfg.m; ++j) {
                int shift = cfg.K - j == 0 ? cfg.K : cfg.K - j;
                branches.push_back(apply_augmentation(base, shift));
            }
            LockstepOutput lock = lockstep_flow({init}, branches, cfg.loss_mode, cfg.horizon,
                                                cfg.snapshot_count, cfg.theta_conv, {}, {});
            for (int k = 1; k <= cfg.K; ++k)
                res.seed_times[seed][k - 1] =
                    convergence_time_feature(lock.series, k, cfg.theta_conv);
        },
        cfg.threads);

    PatchDataset probe = sample_dataset(bank, cfg.n, rho, cfg.sigma, 0);
    Eigen::VectorXd realized = empirical_rho(probe);
    for (int k = 1; k <= cfg.K; ++k) {
        res.predictor.push_back(cfg.m * restricted_rho(probe, k, cfg.m) / realized[k - 1]);
        std::vector<double> col;
        for (int seed = 0; seed < cfg.seeds; ++seed) col.push_back(res.seed_times[seed][k - 1]);
        res.median_time.push_back(median_with_inf(col));
    }
    res.spearman_rank = spearman(res.predictor, res.median_time);
    res.rarest_feature =
        1 + static_cast<int>(std::min_element(cfg.rho.begin(), cfg.rho.end()) - cfg.rho.begin());
    return res;
}

void CorollaryResult::write(const std::string& dir) const {
    CsvWriter csv({"seed", "feature", "predictor", "time"}, dir + "/corollary.csv");
    for (std::size_t seed = 0; seed < seed_times.size(); ++seed)
        for (std::size_t k = 0; k < seed_times[seed].size(); ++k)
            csv.row({(long long)seed, (long long)(k + 1), predictor[k], seed_times[seed][k]});
    csv.close();
    nlohmann::json j;
    j["predictor"] = predictor;
    j["median_time"] = median_time;
    j["spearman"] = spearman_rank;
    j["rarest_feature"] = rarest_feature;
    j["expected_spearman"] = 0.8;
    j["pass"] = spearman_rank >= 0.8 - 1e-9;
    write_summary(j, dir + "/corollary.json");
}

// --- Proposition 2 --------------------------------------------------------

namespace {

struct NoiseArmSetup {
    std::vector<PatchDataset> branches;
    std::vector<TrackedRef> tracked;
};

NoiseArmSetup noise_branches(const PatchDataset& base, int m, bool iid_noise,
                             const RngPolicy& rng) {
    NoiseArmSetup setup;
    const int K = base.K();
    for (int j = 1; j <= m; ++j) {
        int shift = ((j - 1) % K) + 1;
        PatchDataset ds = apply_augmentation(base, shift);
        if (iid_noise) ds = resample_noise(ds, rng.derive("branch-noise:" + std::to_string(j)));
        setup.branches.push_back(std::move(ds));
    }
    for (int b = 0; b < m; ++b)
        for (const PatchSample& s : setup.branches[b].samples)
            setup.tracked.push_back({b, s.noise_id, s.label});
    return setup;
}

}  // namespace

Prop2Result run_prop2(const Prop2Config& cfg) {
    if (cfg.d < 10 * cfg.n * cfg.n)
        throw ConfigError("regime violated: need d >= 10 n^2, got d = " + std::to_string(cfg.d) +
                          ", n = " + std::to_string(cfg.n));

    FeatureBank bank = make_feature_bank(cfg.K, cfg.d);
    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(cfg.K, 1.0 / cfg.K);
    const int M = static_cast<int>(cfg.m_sweep.size());

    Prop2Result res;
    res.regime_d_over_n2 = double(cfg.d) / (double(cfg.n) * cfg.n);
    res.points.resize(2 * M * cfg.seeds);

    parallel_for(
        2 * M * cfg.seeds,
        [&](int task) {
            const bool iid = task < M * cfg.seeds;
            const int rest = task % (M * cfg.seeds);
            const int mi = rest / cfg.seeds;
            const int seed = rest % cfg.seeds;
            const int m = cfg.m_sweep[mi];

            RngPolicy rng{derive_seed(cfg.master_seed, "prop2:r" + std::to_string(seed))};
            PatchDataset base =
                sample_dataset(bank, cfg.n, uniform, cfg.sigma, rng.derive("data"));
            NoiseArmSetup setup = noise_branches(base, m, iid, rng);
            // i.i.d. arm: independently trained models (fresh noise, fresh
            // init per branch) averaged at the end, so cross-branch
            // alignments average away. Contrast arm: one trajectory's worth
            // of randomness (shared init and shared noise), the non-i.i.d.
            // case where averaging buys no delay.
            std::vector<PatchModel> inits;
            if (iid) {
                for (int j = 1; j <= m; ++j)
                    inits.push_back(init_model(cfg.C, cfg.d, cfg.q, cfg.sigma0,
                                               rng.derive("init:branch:" + std::to_string(j))));
            } else {
                inits.push_back(init_model(cfg.C, cfg.d, cfg.q, cfg.sigma0, rng.derive("init")));
            }

            LockstepOutput lock = lockstep_flow(inits, setup.branches, cfg.loss_mode, cfg.horizon,
                                                cfg.snapshot_count, cfg.theta_conv, setup.tracked,
                                                {});
            std::vector<double> times;
            for (std::size_t j = 0; j < setup.tracked.size(); ++j)
                times.push_back(convergence_time_noise(lock.series, static_cast<int>(j),
                                                       cfg.theta_conv));
            res.points[task] = {m, seed, iid, median_with_inf(times)};
        },
        cfg.threads);

    auto fit_for = [&](bool iid) {
        std::vector<double> xs, ts;
        for (const Prop2Result::Point& p : res.points) {
            if (p.iid != iid) continue;
            if (!std::isfinite(p.time))
                throw ConfigError("horizon too short: median noise time diverged at m = " +
                                  std::to_string(p.m));
            xs.push_back(p.m);
            ts.push_back(p.time);
        }
        return fit_scaling(xs, ts);
    };
    res.fit_iid = fit_for(true);
    res.fit_shared = fit_for(false);
    return res;
}

void Prop2Result::write(const std::string& dir) const {
    CsvWriter csv({"m", "seed", "noise", "time"}, dir + "/prop2.csv");
    for (const Point& p : points)
        csv.row({(long long)p.m, (long long)p.seed, std::string(p.iid ? "iid" : "shared"),
                 p.time});
    csv.close();
    nlohmann::json j;
    j["slope_iid"] = fit_iid.slope;
    j["r2_iid"] = fit_iid.r2;
    j["slope_shared"] = fit_shared.slope;
    j["r2_shared"] = fit_shared.r2;
    j["d_over_n2"] = regime_d_over_n2;
    j["expected_slope"] = 1.0;
    j["pass"] = fit_iid.slope >= 0.8 && fit_iid.slope <= 1.2 && fit_shared.slope < 0.3;
    write_summary(j, dir + "/prop2.json");
}

// --- Proposition 3 --------------------------------------------------------

Prop3Result run_prop3(const Prop3Config& cfg) {
    if (cfg.d < 10 * cfg.n * cfg.n)
        throw ConfigError("regime violated: need d >= 10 n^2");

    FeatureBank bank = make_feature_bank(cfg.K, cfg.d);
    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(cfg.K, 1.0 / cfg.K);

    Prop3Result res;
    res.rows.resize(cfg.seeds);

    parallel_for(
        cfg.seeds,
        [&](int seed) {
            RngPolicy rng{derive_seed(cfg.master_seed, "prop3:r" + std::to_string(seed))};
            PatchDataset base =
                sample_dataset(bank, cfg.n, uniform, cfg.sigma, rng.derive("data"));
            PatchModel init = init_model(cfg.C, cfg.d, cfg.q, cfg.sigma0, rng.derive("init"));
            NoiseArmSetup setup = noise_branches(base, cfg.m, true, rng);

            LockstepOutput baseline =
                lockstep_flow({init}, setup.branches, cfg.loss_mode, cfg.horizon,
                              cfg.snapshot_count, cfg.theta_conv, setup.tracked, {});
            std::vector<double> times;
            for (std::size_t j = 0; j < setup.tracked.size(); ++j)
                times.push_back(convergence_time_noise(baseline.series, static_cast<int>(j),
                                                       cfg.theta_conv));
            double t_noise = median_with_inf(times);
            double t_feat = 0.0;
            for (int k = 1; k <= cfg.K; ++k)
                t_feat = std::max(
                    t_feat, convergence_time_feature(baseline.series, k, cfg.theta_conv));
            if (!std::isfinite(t_feat) || !std::isfinite(t_noise))
                throw ConfigError("horizon too short for feature or noise convergence");
            // T sits a margin past the slowest feature, clamped inside the
            // pre-noise window when features happened to converge late.
            double T = std::min(cfg.t_margin * t_feat, cfg.t_window * t_noise);
            if (T <= t_feat || T >= t_noise)
                throw ConfigError("aggregation time T = " + format_double(T) +
                                  " is outside the feasible window (features " +
                                  format_double(t_feat) + ", noise " + format_double(t_noise) +
                                  ")");

            LockstepOutput agg = lockstep_flow({init}, setup.branches, cfg.loss_mode, cfg.horizon,
                                               cfg.snapshot_count, cfg.theta_conv, setup.tracked,
                                               {T});
            std::vector<double> times2;
            for (std::size_t j = 0; j < setup.tracked.size(); ++j)
                times2.push_back(convergence_time_noise(agg.series, static_cast<int>(j),
                                                        cfg.theta_conv));
            double t_agg = median_with_inf(times2);
            if (!std::isfinite(t_agg))
                throw ConfigError("horizon too short for the aggregated arm");
            res.rows[seed] = {seed, T, t_noise, t_agg, t_agg / t_noise};
        },
        cfg.threads);

    res.wins = static_cast<int>(
        std::count_if(res.rows.begin(), res.rows.end(), [](const Prop3Result::Row& r) {
            return r.ratio > 1.0;
        }));
    res.p_value = sign_test_p(res.wins, cfg.seeds);
    return res;
}

void Prop3Result::write(const std::string& dir) const {
    CsvWriter csv({"seed", "T", "time_baseline", "time_aggregated", "ratio"},
                  dir + "/prop3.csv");
    for (const Row& r : rows)
        csv.row({(long long)r.seed, r.T, r.time_baseline, r.time_aggregated, r.ratio});
    csv.close();
    nlohmann::json j;
    j["wins"] = wins;
    j["seeds"] = rows.size();
    j["p_value"] = p_value;
    j["pass"] = wins >= static_cast<int>(rows.size()) - 1 && p_value < 0.05;
    write_summary(j, dir + "/prop3.json");
}

// --- Mixed-training balance ------------------------------------------------

BalanceResult run_balance(const BalanceConfig& cfg) {
    FeatureBank bank = make_feature_bank(cfg.K, cfg.d);
    Eigen::VectorXd rho(cfg.K);
    for (int k = 0; k < cfg.K; ++k) rho[k] = cfg.rho[k];
    const int rare = static_cast<int>(std::min_element(cfg.rho.begin(), cfg.rho.end()) -
                                      cfg.rho.begin());
    const int common = static_cast<int>(std::max_element(cfg.rho.begin(), cfg.rho.end()) -
                                        cfg.rho.begin());

    BalanceResult res;
    res.rows.resize(cfg.seeds);
    parallel_for(
        cfg.seeds,
        [&](int seed) {
            RngPolicy rng{derive_seed(cfg.master_seed, "balance:r" + std::to_string(seed))};
            PatchDataset base =
                sample_dataset(bank, cfg.n, rho, cfg.sigma, rng.derive("data"));
            PatchModel init = init_model(cfg.C, cfg.d, cfg.q, cfg.sigma0, rng.derive("init"));

            FlowConfig fc;
            fc.horizon = cfg.horizon;
            fc.record_every = cfg.horizon / cfg.snapshot_count;
            fc.loss_mode = cfg.loss_mode;
            fc.theta_conv = cfg.theta_conv;

            FlowResult mixed = flow_integrate(init, union_augmented(base, cfg.K), fc);
            BalanceResult::Row row;
            row.seed = seed;
            row.union_all_converged = true;
            for (int k = 1; k <= cfg.K; ++k) {
                double t = convergence_time_feature(mixed.snapshots, k, cfg.theta_conv);
                row.union_slowest_time = std::max(row.union_slowest_time, t);
                if (!std::isfinite(t)) row.union_all_converged = false;
            }

            // Alignments of the unaugmented run at the same training budget
            // the mixed run needed to learn everything.
            FlowResult raw = flow_integrate(init, base, fc);
            double budget = row.union_all_converged ? row.union_slowest_time : cfg.horizon;
            auto alpha_at = [&](int k) {
                const auto& snaps = raw.snapshots;
                for (std::size_t i = 1; i < snaps.size(); ++i) {
                    if (snaps[i].t >= budget) {
                        double f = (budget - snaps[i - 1].t) / (snaps[i].t - snaps[i - 1].t);
                        return snaps[i - 1].alphas[k] +
                               f * (snaps[i].alphas[k] - snaps[i - 1].alphas[k]);
                    }
                }
                return snaps.back().alphas[k];
            };
            row.raw_rarest_alpha = alpha_at(rare);
            row.raw_commonest_alpha = alpha_at(common);
            res.rows[seed] = row;
        },
        cfg.threads);
    return res;
}

void BalanceResult::write(const std::string& dir) const {
    CsvWriter csv({"seed", "union_all_converged", "union_slowest_time", "raw_rarest_alpha",
                   "raw_commonest_alpha"},
                  dir + "/balance.csv");
    for (const Row& r : rows)
        csv.row({(long long)r.seed, (long long)(r.union_all_converged ? 1 : 0),
                 r.union_slowest_time, r.raw_rarest_alpha, r.raw_commonest_alpha});
    csv.close();
    nlohmann::json j;
    int converged = 0;
    for (const Row& r : rows) converged += r.union_all_converged ? 1 : 0;
    j["union_converged_runs"] = converged;
    j["runs"] = rows.size();
    write_summary(j, dir + "/balance.json");
}

// --- Barrier study ----------------------------------------------------------

namespace {

LossFn patch_loss_fn(const PatchModel& proto, std::shared_ptr<const PatchDataset> ds) {
    return [proto, ds](const Eigen::VectorXd& p) {
        PatchTrainable t(proto, ds);
        t.set_params(p);
        std::vector<int> all(ds->n());
        std::iota(all.begin(), all.end(), 0);
        return t.loss(all);
    };
}

}  // namespace

BarrierResult run_barrier_experiment(const BarrierConfig& cfg) {
    FeatureBank bank = make_feature_bank(cfg.K, cfg.d);
    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(cfg.K, 1.0 / cfg.K);
    const int max_div = *std::max_element(cfg.divergence_epochs.begin(),
                                          cfg.divergence_epochs.end());

    BarrierResult res;
    res.divergence_epochs = cfg.divergence_epochs;
    res.rows.resize(cfg.seeds);

    parallel_for(
        cfg.seeds,
        [&](int seed) {
            RngPolicy rng{derive_seed(cfg.master_seed, "barrier:r" + std::to_string(seed))};
            PatchDataset base =
                sample_dataset(bank, cfg.n, uniform, cfg.sigma, rng.derive("data"));
            // Branches see shifted features and their own fresh noise, so the
            // post-split phase genuinely diverges through memorization.
            PatchDataset branch_a =
                resample_noise(apply_augmentation(base, 1), rng.derive("noise:A"));
            PatchDataset branch_b =
                resample_noise(apply_augmentation(base, 2), rng.derive("noise:B"));
            auto mixed = std::make_shared<PatchDataset>(mixed_dataset({branch_a, branch_b}));

            SgdOptions opts;
            opts.batch_size = cfg.batch_size;
            auto warm_sched = [&](int e) { return cosine_lr(e, cfg.warmup_epochs, cfg.lr_warm); };
            auto div_sched = [&](int) { return cfg.lr_div; };
            LossFn eval = patch_loss_fn(init_model(cfg.C, cfg.d, cfg.q, cfg.sigma0, 0), mixed);

            // pair sharing the warmup trunk
            PatchModel init = init_model(cfg.C, cfg.d, cfg.q, cfg.sigma0, rng.derive("init"));
            PatchTrainable trunk(init, mixed);
            RunRecord warm = erm_train(trunk, 1, cfg.warmup_epochs, warm_sched, opts,
                                       rng.derive("warm"));

            PatchTrainable ta(init, std::make_shared<PatchDataset>(branch_a));
            PatchTrainable tb(init, std::make_shared<PatchDataset>(branch_b));
            ta.set_params(warm.final_params);
            tb.set_params(warm.final_params);
            std::vector<int> marks;
            for (int e : cfg.divergence_epochs) marks.push_back(cfg.warmup_epochs + e);
            RunRecord ra = erm_train(ta, cfg.warmup_epochs + 1, cfg.warmup_epochs + max_div,
                                     div_sched, opts, rng.derive("shared:A"), marks);
            RunRecord rb = erm_train(tb, cfg.warmup_epochs + 1, cfg.warmup_epochs + max_div,
                                     div_sched, opts, rng.derive("shared:B"), marks);

            BarrierResult::Row row;
            row.seed = seed;
            for (int e : marks)
                row.shared_excess.push_back(
                    loss_barrier(ra.checkpoints.at(e), rb.checkpoints.at(e), eval, cfg.grid_size)
                        .barrier_excess);

            // independently initialized pair, same total budget on the same data
            auto train_indep = [&](const char* tag, std::uint64_t init_seed) {
                PatchModel m0 = init_model(cfg.C, cfg.d, cfg.q, cfg.sigma0, init_seed);
                PatchTrainable t(m0, mixed);
                erm_train(t, 1, cfg.warmup_epochs, warm_sched, opts,
                          rng.derive(std::string("indep-warm:") + tag));
                RunRecord r = erm_train(t, cfg.warmup_epochs + 1, cfg.warmup_epochs + max_div,
                                        div_sched, opts,
                                        rng.derive(std::string("indep-div:") + tag));
                return r.final_params;
            };
            Eigen::VectorXd pa = train_indep("A", rng.derive("init:indepA"));
            Eigen::VectorXd pb = train_indep("B", rng.derive("init:indepB"));
            row.independent_excess = loss_barrier(pa, pb, eval, cfg.grid_size).barrier_excess;
            res.rows[seed] = row;
        },
        cfg.threads);
    return res;
}

void BarrierResult::write(const std::string& dir) const {
    CsvWriter csv({"seed", "pair", "divergence_epochs", "barrier_excess"}, dir + "/barrier.csv");
    for (const Row& r : rows) {
        for (std::size_t i = 0; i < r.shared_excess.size(); ++i)
            csv.row({(long long)r.seed, std::string("shared"),
                     (long long)divergence_epochs[i], r.shared_excess[i]});
        csv.row({(long long)r.seed, std::string("independent"), (long long)-1,
                 r.independent_excess});
    }
    csv.close();
}

// --- Trained-branch noise variance ------------------------------------------

std::vector<double> run_trained_noise_variance(const NoiseVarConfig& cfg) {
    FeatureBank bank = make_feature_bank(cfg.K, cfg.d);
    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(cfg.K, 1.0 / cfg.K);
    std::vector<double> ratios(cfg.seeds);
    for (int seed = 0; seed < cfg.seeds; ++seed) {
        RngPolicy rng{derive_seed(cfg.master_seed, "noisevar:r" + std::to_string(seed))};
        PatchDataset base = sample_dataset(bank, cfg.n, uniform, cfg.sigma, rng.derive("data"));
        PatchModel init = init_model(cfg.C, cfg.d, cfg.q, cfg.sigma0, rng.derive("init"));
        NoiseArmSetup setup = noise_branches(base, cfg.m, true, rng);

        std::vector<Eigen::MatrixXd> weights;
        std::vector<std::vector<Eigen::VectorXd>> noise;
        for (const PatchDataset& ds : setup.branches) {
            FlowConfig fc;
            fc.horizon = cfg.horizon;
            fc.record_every = cfg.horizon;
            fc.loss_mode = cfg.loss_mode;
            FlowResult r = flow_integrate(init, ds, fc, all_sample_ids(ds));
            weights.push_back(r.final_model.W);
            std::vector<Eigen::VectorXd> eps;
            for (int id : all_sample_ids(ds)) eps.push_back(ds.noise_pool->row(id));
            noise.push_back(std::move(eps));
        }
        ratios[seed] = noise_variance_reduction(weights, noise);
    }
    return ratios;
}

}  // namespace dartlab
