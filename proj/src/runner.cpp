#include "dartlab/runner.hpp"

#include <filesystem>
#include <numeric>

#include "dartlab/checkpoint.hpp"
#include "dartlab/csvio.hpp"
#include "dartlab/errors.hpp"
#include "dartlab/experiments.hpp"
#include "dartlab/mlpbench.hpp"
#include "dartlab/parallel.hpp"

namespace dartlab {

namespace {

LossMode parse_mode(const std::string& s) {
    if (s == "exact") return LossMode::exact;
    if (s == "half") return LossMode::half;
    throw ConfigError("loss_mode must be 'exact' or 'half', got '" + s + "'");
}

std::string mode_name(LossMode m) { return m == LossMode::exact ? "exact" : "half"; }

Prop1Config build_prop1(Params& p, std::uint64_t seed) {
    Prop1Config c;
    c.master_seed = seed;
    c.K = static_cast<int>(p.get_int("prop1.K", c.K, 1, 64));
    c.m = static_cast<int>(p.get_int("prop1.m", c.K, 1, 64));
    c.d = static_cast<int>(p.get_int("prop1.d", c.d, c.K, 1 << 22));
    c.n = static_cast<int>(p.get_int("prop1.n", c.n, 1, 1 << 20));
    c.C = static_cast<int>(p.get_int("prop1.C", c.C, 1, 1024));
    c.q = p.get_real("prop1.q", c.q, 3.0, 16.0);
    c.sigma = p.get_real("prop1.sigma", c.sigma, 0.0, 1e6);
    c.sigma0_sweep = p.get_real_list("prop1.sigma0_sweep", c.sigma0_sweep);
    c.seeds = static_cast<int>(p.get_int("prop1.seeds", c.seeds, 1, 1000));
    c.theta_conv = p.get_real("prop1.theta_conv", c.theta_conv, 0.0, 1.0);
    c.theta_variants = p.get_real_list("prop1.theta_variants", c.theta_variants);
    c.gate_lo = p.get_real("prop1.gate_lo", c.gate_lo, 0.0, 100.0);
    c.gate_hi = p.get_real("prop1.gate_hi", c.gate_hi, c.gate_lo, 100.0);
    c.horizon_scale = p.get_real("prop1.horizon_scale", c.horizon_scale, 1e-9, 1e12);
    c.snapshot_count = static_cast<int>(p.get_int("prop1.snapshots", c.snapshot_count, 2, 1 << 20));
    c.loss_mode = parse_mode(p.get_string("prop1.loss_mode", mode_name(c.loss_mode)));
    c.threads = static_cast<int>(p.get_int("threads", 0, 0, 4096));
    return c;
}

CorollaryConfig build_corollary(Params& p, std::uint64_t seed) {
    CorollaryConfig c;
    c.master_seed = seed;
    c.K = static_cast<int>(p.get_int("corollary.K", c.K, 1, 64));
    c.m = static_cast<int>(p.get_int("corollary.m", c.m, 1, 64));
    c.d = static_cast<int>(p.get_int("corollary.d", c.d, c.K, 1 << 22));
    c.n = static_cast<int>(p.get_int("corollary.n", c.n, 1, 1 << 20));
    c.C = static_cast<int>(p.get_int("corollary.C", c.C, 1, 1024));
    c.q = p.get_real("corollary.q", c.q, 3.0, 16.0);
    c.sigma = p.get_real("corollary.sigma", c.sigma, 0.0, 1e6);
    c.sigma0 = p.get_real("corollary.sigma0", c.sigma0, 1e-12, 10.0);
    c.rho = p.get_real_list("corollary.rho", c.rho);
    c.seeds = static_cast<int>(p.get_int("corollary.seeds", c.seeds, 1, 1000));
    c.theta_conv = p.get_real("corollary.theta_conv", c.theta_conv, 0.0, 1.0);
    c.horizon = p.get_real("corollary.horizon", c.horizon, 1e-9, 1e12);
    c.snapshot_count =
        static_cast<int>(p.get_int("corollary.snapshots", c.snapshot_count, 2, 1 << 20));
    c.loss_mode = parse_mode(p.get_string("corollary.loss_mode", mode_name(c.loss_mode)));
    c.threads = static_cast<int>(p.get_int("threads", 0, 0, 4096));
    if (static_cast<int>(c.rho.size()) != c.K)
        throw ConfigError("corollary.rho must list K fractions");
    return c;
}

Prop2Config build_prop2(Params& p, std::uint64_t seed) {
    Prop2Config c;
    c.master_seed = seed;
    c.K = static_cast<int>(p.get_int("prop2.K", c.K, 1, 64));
    c.d = static_cast<int>(p.get_int("prop2.d", c.d, c.K, 1 << 22));
    c.n = static_cast<int>(p.get_int("prop2.n", c.n, 1, 1 << 20));
    c.C = static_cast<int>(p.get_int("prop2.C", c.C, 1, 1024));
    c.q = p.get_real("prop2.q", c.q, 3.0, 16.0);
    c.sigma = p.get_real("prop2.sigma", c.sigma, 0.0, 1e6);
    c.sigma0 = p.get_real("prop2.sigma0", c.sigma0, 1e-12, 10.0);
    std::vector<long long> sweep = p.get_int_list("prop2.m_sweep", {1, 2, 4, 8});
    c.m_sweep.assign(sweep.begin(), sweep.end());
    c.seeds = static_cast<int>(p.get_int("prop2.seeds", c.seeds, 1, 1000));
    c.theta_conv = p.get_real("prop2.theta_conv", c.theta_conv, 0.0, 1.0);
    c.horizon = p.get_real("prop2.horizon", c.horizon, 1e-9, 1e12);
    c.snapshot_count = static_cast<int>(p.get_int("prop2.snapshots", c.snapshot_count, 2, 1 << 20));
    c.loss_mode = parse_mode(p.get_string("prop2.loss_mode", mode_name(c.loss_mode)));
    c.threads = static_cast<int>(p.get_int("threads", 0, 0, 4096));
    return c;
}

Prop3Config build_prop3(Params& p, std::uint64_t seed) {
    Prop3Config c;
    c.master_seed = seed;
    c.K = static_cast<int>(p.get_int("prop3.K", c.K, 1, 64));
    c.m = static_cast<int>(p.get_int("prop3.m", c.m, 1, 64));
    c.d = static_cast<int>(p.get_int("prop3.d", c.d, c.K, 1 << 22));
    c.n = static_cast<int>(p.get_int("prop3.n", c.n, 1, 1 << 20));
    c.C = static_cast<int>(p.get_int("prop3.C", c.C, 1, 1024));
    c.q = p.get_real("prop3.q", c.q, 3.0, 16.0);
    c.sigma = p.get_real("prop3.sigma", c.sigma, 0.0, 1e6);
    c.sigma0 = p.get_real("prop3.sigma0", c.sigma0, 1e-12, 10.0);
    c.seeds = static_cast<int>(p.get_int("prop3.seeds", c.seeds, 1, 1000));
    c.theta_conv = p.get_real("prop3.theta_conv", c.theta_conv, 0.0, 1.0);
    c.t_margin = p.get_real("prop3.t_margin", c.t_margin, 1.0, 100.0);
    c.horizon = p.get_real("prop3.horizon", c.horizon, 1e-9, 1e12);
    c.snapshot_count = static_cast<int>(p.get_int("prop3.snapshots", c.snapshot_count, 2, 1 << 20));
    c.loss_mode = parse_mode(p.get_string("prop3.loss_mode", mode_name(c.loss_mode)));
    c.threads = static_cast<int>(p.get_int("threads", 0, 0, 4096));
    return c;
}

BalanceConfig build_balance(Params& p, std::uint64_t seed) {
    BalanceConfig c;
    c.master_seed = seed;
    c.K = static_cast<int>(p.get_int("balance.K", c.K, 1, 64));
    c.d = static_cast<int>(p.get_int("balance.d", c.d, c.K, 1 << 22));
    c.n = static_cast<int>(p.get_int("balance.n", c.n, 1, 1 << 20));
    c.C = static_cast<int>(p.get_int("balance.C", c.C, 1, 1024));
    c.q = p.get_real("balance.q", c.q, 3.0, 16.0);
    c.sigma = p.get_real("balance.sigma", c.sigma, 0.0, 1e6);
    c.sigma0 = p.get_real("balance.sigma0", c.sigma0, 1e-12, 10.0);
    c.rho = p.get_real_list("balance.rho", c.rho);
    c.seeds = static_cast<int>(p.get_int("balance.seeds", c.seeds, 1, 1000));
    c.theta_conv = p.get_real("balance.theta_conv", c.theta_conv, 0.0, 1.0);
    c.horizon = p.get_real("balance.horizon", c.horizon, 1e-9, 1e12);
    c.snapshot_count =
        static_cast<int>(p.get_int("balance.snapshots", c.snapshot_count, 2, 1 << 20));
    c.loss_mode = parse_mode(p.get_string("balance.loss_mode", mode_name(c.loss_mode)));
    c.threads = static_cast<int>(p.get_int("threads", 0, 0, 4096));
    if (static_cast<int>(c.rho.size()) != c.K)
        throw ConfigError("balance.rho must list K fractions");
    return c;
}

BarrierConfig build_barrier(Params& p, std::uint64_t seed) {
    BarrierConfig c;
    c.master_seed = seed;
    c.K = static_cast<int>(p.get_int("barrier.K", c.K, 1, 64));
    c.d = static_cast<int>(p.get_int("barrier.d", c.d, c.K, 1 << 22));
    c.n = static_cast<int>(p.get_int("barrier.n", c.n, 2, 1 << 20));
    c.C = static_cast<int>(p.get_int("barrier.C", c.C, 1, 1024));
    c.q = p.get_real("barrier.q", c.q, 3.0, 16.0);
    c.sigma = p.get_real("barrier.sigma", c.sigma, 0.0, 1e6);
    c.sigma0 = p.get_real("barrier.sigma0", c.sigma0, 0.0, 10.0);
    c.warmup_epochs = static_cast<int>(p.get_int("barrier.warmup_epochs", c.warmup_epochs, 1, 1 << 20));
    std::vector<long long> div =
        p.get_int_list("barrier.divergence_epochs", {10, 50, 200});
    c.divergence_epochs.assign(div.begin(), div.end());
    c.lr_warm = p.get_real("barrier.lr_warm", c.lr_warm, 1e-9, 100.0);
    c.lr_div = p.get_real("barrier.lr_div", c.lr_div, 1e-9, 100.0);
    c.batch_size = static_cast<int>(p.get_int("barrier.batch_size", c.batch_size, 1, 1 << 20));
    c.grid_size = static_cast<int>(p.get_int("barrier.grid_size", c.grid_size, 2, 10000));
    c.seeds = static_cast<int>(p.get_int("barrier.seeds", c.seeds, 1, 1000));
    c.threads = static_cast<int>(p.get_int("threads", 0, 0, 4096));
    return c;
}

struct PatchRunSpec {
    int K = 4, d = 256, n = 240, C = 8;
    double q = 3.0, sigma = 1.0, sigma0 = 0.3;
    TrainConfig train;
    std::vector<double> rho;
    std::vector<int> shifts;      // per-branch augmentation shift (0 = none)
    bool resample_noise = false;  // fresh noise per branch
};

PatchRunSpec build_patch_run(Params& p, const std::string& section, std::uint64_t seed) {
    PatchRunSpec s;
    s.K = static_cast<int>(p.get_int(section + ".K", s.K, 1, 64));
    s.d = static_cast<int>(p.get_int(section + ".d", s.d, s.K, 1 << 22));
    s.n = static_cast<int>(p.get_int(section + ".n", s.n, 1, 1 << 20));
    s.C = static_cast<int>(p.get_int(section + ".C", s.C, 1, 1024));
    s.q = p.get_real(section + ".q", s.q, 3.0, 16.0);
    s.sigma = p.get_real(section + ".sigma", s.sigma, 0.0, 1e6);
    s.sigma0 = p.get_real(section + ".sigma0", s.sigma0, 0.0, 10.0);
    std::vector<double> uniform(s.K, 1.0 / s.K);
    s.rho = p.get_real_list(section + ".rho", uniform);
    if (static_cast<int>(s.rho.size()) != s.K)
        throw ConfigError(section + ".rho must list K fractions");

    TrainConfig& t = s.train;
    t.master_seed = seed;
    t.E = static_cast<int>(p.get_int(section + ".E", 60, 1, 1 << 20));
    t.E_prime = static_cast<int>(p.get_int(section + ".E_prime", t.E / 2, 0, 1 << 20));
    t.M = static_cast<int>(p.get_int(section + ".M", 1, 1, 64));
    t.lambda = static_cast<int>(p.get_int(section + ".lambda", 10, 1, 1 << 20));
    t.lr_max = p.get_real(section + ".lr_max", 0.1, 1e-12, 100.0);
    t.batch_size = static_cast<int>(p.get_int(section + ".batch_size", 40, 1, 1 << 30));
    t.momentum = p.get_real(section + ".momentum", 0.0, 0.0, 0.999999);
    t.weight_decay = p.get_real(section + ".weight_decay", 0.0, 0.0, 10.0);
    t.aggregate_at_end = p.get_bool(section + ".aggregate_at_end", true);
    double ema = p.get_real(section + ".ema_decay", -1.0, -1.0, 0.999999);
    if (ema >= 0.0) t.ema_decay = ema;
    std::vector<long long> ckpt = p.get_int_list(section + ".checkpoint_epochs", {});
    t.checkpoint_epochs.assign(ckpt.begin(), ckpt.end());

    std::vector<long long> default_shifts;
    for (int k = 0; k < t.M; ++k) default_shifts.push_back(t.M > 1 ? (k % s.K) + 1 : 0);
    std::vector<long long> shifts = p.get_int_list(section + ".shifts", default_shifts);
    if (static_cast<int>(shifts.size()) != t.M)
        throw ConfigError(section + ".shifts must list one shift per branch");
    s.shifts.assign(shifts.begin(), shifts.end());
    s.resample_noise = p.get_bool(section + ".resample_noise", false);
    t.validate();
    for (int k = 0; k < t.M; ++k) {
        BranchSpec b;
        b.shift = s.shifts[k];
        b.split_index = k;
        b.resample_noise = s.resample_noise;
        t.branch_specs.push_back(b);
    }
    return s;
}

void run_patch_training(const ExperimentConfig& cfg, Params& p, bool dart_mode) {
    PatchRunSpec spec = build_patch_run(p, dart_mode ? "dart" : "erm", cfg.master_seed);
    p.reject_unknown();

    RngPolicy rng{cfg.master_seed};
    FeatureBank bank = make_feature_bank(spec.K, spec.d);
    Eigen::VectorXd rho(spec.K);
    for (int k = 0; k < spec.K; ++k) rho[k] = spec.rho[k];
    PatchDataset base = sample_dataset(bank, spec.n, rho, spec.sigma, rng.derive("data"));
    PatchModel init = init_model(spec.C, spec.d, spec.q, spec.sigma0, rng.derive("init"));

    const TrainConfig& t = spec.train;
    RunRecord record;
    Eigen::VectorXd final_params;
    if (dart_mode) {
        std::vector<PatchDataset> splits =
            t.M > 1 ? split_for_branches(base, t.M, rng.derive("split"))
                    : std::vector<PatchDataset>{base};
        std::vector<PatchDataset> branches;
        for (int k = 0; k < t.M; ++k) {
            PatchDataset b = splits[k];
            if (spec.shifts[k] > 0) b = apply_augmentation(b, spec.shifts[k]);
            if (spec.resample_noise)
                b = resample_noise(b, rng.derive("branch-noise:" + std::to_string(k + 1)));
            branches.push_back(std::move(b));
        }
        auto factory = [&](const PatchDataset& d) -> std::unique_ptr<Trainable> {
            return std::make_unique<PatchTrainable>(init, std::make_shared<PatchDataset>(d));
        };
        auto [params, rec] = dart_train(factory, branches, t);
        record = std::move(rec);
        final_params = std::move(params);
    } else {
        PatchTrainable trainable(init, std::make_shared<PatchDataset>(base));
        SgdOptions opts;
        opts.batch_size = t.batch_size;
        opts.momentum = t.momentum;
        opts.weight_decay = t.weight_decay;
        opts.ema_decay = t.ema_decay;
        record = erm_train(
            trainable, 1, t.E, [&](int e) { return cosine_lr(e, t.E, t.lr_max); }, opts,
            derive_seed(cfg.master_seed, "branch:1"), t.checkpoint_epochs);
        final_params = record.final_params;
    }

    record.to_csv(cfg.out_dir + "/run.csv");
    PatchModel final_model = init;
    final_model.set_flat(final_params);
    write_checkpoint(final_model, cfg.out_dir + "/final.dlp");
    for (const auto& [epoch, params] : record.checkpoints) {
        PatchModel m = init;
        m.set_flat(params);
        write_checkpoint(m, cfg.out_dir + "/ckpt_" + std::to_string(epoch) + ".dlp");
    }

    nlohmann::json j;
    j["kind"] = cfg.kind;
    j["aggregation_epochs"] = record.aggregation_epochs;
    j["last_epoch"] = record.last_epoch;
    j["final_loss"] = record.rows.empty() ? 0.0 : record.rows.back().loss;
    j["config"] = p.resolved();
    j["master_seed"] = cfg.master_seed;
    write_summary(j, cfg.out_dir + "/summary.json");
}

void write_common_summary(const ExperimentConfig& cfg, const Params& p, nlohmann::json j) {
    j["kind"] = cfg.kind;
    j["master_seed"] = cfg.master_seed;
    j["config"] = p.resolved();
    write_summary(j, cfg.out_dir + "/summary.json");
}

struct MtBenchSpec {
    TaskConfig task;
    BenchRunConfig run;
};

MtBenchSpec consume_mtbench(Params& p, std::uint64_t seed) {
    MtBenchSpec s;
    TaskConfig& tc = s.task;
    tc.label_noise_rate = p.get_real("task.label_noise", tc.label_noise_rate, 0.0, 0.49);
    tc.n_train = static_cast<int>(p.get_int("task.n_train", tc.n_train, 10, 1 << 22));
    tc.n_test = static_cast<int>(p.get_int("task.n_test", tc.n_test, 10, 1 << 22));
    tc.spurious_rate = p.get_real("task.spurious_rate", tc.spurious_rate, 0.5, 1.0);
    BenchRunConfig& rc = s.run;
    rc.hidden = static_cast<int>(p.get_int("bench.hidden", rc.hidden, 1, 1 << 16));
    rc.epochs = static_cast<int>(p.get_int("bench.epochs", rc.epochs, 1, 1 << 20));
    rc.warmup_epochs =
        static_cast<int>(p.get_int("bench.warmup_epochs", rc.warmup_epochs, 0, 1 << 20));
    rc.lambda = static_cast<int>(p.get_int("bench.lambda", rc.lambda, 1, 1 << 20));
    rc.lr_max = p.get_real("bench.lr_max", rc.lr_max, 1e-12, 100.0);
    rc.batch_size = static_cast<int>(p.get_int("bench.batch_size", rc.batch_size, 1, 1 << 30));
    rc.same_arm_branches =
        static_cast<int>(p.get_int("bench.same_arm_branches", rc.same_arm_branches, 1, 64));
    rc.master_seed = seed;
    return s;
}

struct FlatnessSpec {
    TaskConfig task;
    BenchRunConfig run;
    double radius = 0.25;
    double noise_std = 0.25;
    int probes = 20;
    int ascent = 10;
    int samples = 64;
};

FlatnessSpec consume_flatness(Params& p, std::uint64_t seed) {
    FlatnessSpec s;
    s.task.label_noise_rate =
        p.get_real("task.label_noise", s.task.label_noise_rate, 0.0, 0.49);
    s.run = default_flatness_run_config();
    s.run.master_seed = seed;
    s.radius = p.get_real("flatness.radius", s.radius, 0.0, 1e6);
    s.noise_std = p.get_real("flatness.noise_std", s.noise_std, 0.0, 1e6);
    s.probes = static_cast<int>(p.get_int("flatness.probes", s.probes, 1, 1 << 16));
    s.ascent = static_cast<int>(p.get_int("flatness.ascent_steps", s.ascent, 0, 1 << 16));
    s.samples = static_cast<int>(p.get_int("flatness.samples", s.samples, 1, 1 << 20));
    return s;
}

}  // namespace

std::string validate_config(const ExperimentConfig& cfg) {
    Params p(cfg.kv);
    if (cfg.kind == "prop1")
        build_prop1(p, cfg.master_seed);
    else if (cfg.kind == "corollary")
        build_corollary(p, cfg.master_seed);
    else if (cfg.kind == "prop2")
        build_prop2(p, cfg.master_seed);
    else if (cfg.kind == "prop3")
        build_prop3(p, cfg.master_seed);
    else if (cfg.kind == "balance")
        build_balance(p, cfg.master_seed);
    else if (cfg.kind == "barrier")
        build_barrier(p, cfg.master_seed);
    else if (cfg.kind == "dart")
        build_patch_run(p, "dart", cfg.master_seed);
    else if (cfg.kind == "erm")
        build_patch_run(p, "erm", cfg.master_seed);
    else if (cfg.kind == "mtbench")
        consume_mtbench(p, cfg.master_seed);
    else if (cfg.kind == "flatness")
        consume_flatness(p, cfg.master_seed);
    else if (cfg.kind == "trajectory")
        p.get_string("trajectory.checkpoint_dir", cfg.out_dir);
    p.reject_unknown();
    std::string head = "kind = " + cfg.kind + "\nmaster_seed = " + std::to_string(cfg.master_seed) +
                       "\nout = " + cfg.out_dir + "\n";
    return head + p.resolved_text();
}

void run_experiment(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    Params p(cfg.kv);

    if (cfg.kind == "prop1") {
        Prop1Config c = build_prop1(p, cfg.master_seed);
        p.reject_unknown();
        Prop1Result r = run_prop1(c);
        r.write(cfg.out_dir);
        nlohmann::json j;
        j["slope"] = r.fit.slope;
        j["r2"] = r.fit.r2;
        write_common_summary(cfg, p, std::move(j));
    } else if (cfg.kind == "corollary") {
        CorollaryConfig c = build_corollary(p, cfg.master_seed);
        p.reject_unknown();
        CorollaryResult r = run_corollary(c);
        r.write(cfg.out_dir);
        nlohmann::json j;
        j["spearman"] = r.spearman_rank;
        write_common_summary(cfg, p, std::move(j));
    } else if (cfg.kind == "prop2") {
        Prop2Config c = build_prop2(p, cfg.master_seed);
        p.reject_unknown();
        Prop2Result r = run_prop2(c);
        r.write(cfg.out_dir);
        nlohmann::json j;
        j["slope_iid"] = r.fit_iid.slope;
        j["slope_shared"] = r.fit_shared.slope;
        write_common_summary(cfg, p, std::move(j));
    } else if (cfg.kind == "prop3") {
        Prop3Config c = build_prop3(p, cfg.master_seed);
        p.reject_unknown();
        Prop3Result r = run_prop3(c);
        r.write(cfg.out_dir);
        nlohmann::json j;
        j["wins"] = r.wins;
        j["p_value"] = r.p_value;
        write_common_summary(cfg, p, std::move(j));
    } else if (cfg.kind == "balance") {
        BalanceConfig c = build_balance(p, cfg.master_seed);
        p.reject_unknown();
        BalanceResult r = run_balance(c);
        r.write(cfg.out_dir);
        int conv = 0;
        for (const auto& row : r.rows) conv += row.union_all_converged;
        nlohmann::json j;
        j["union_converged_runs"] = conv;
        write_common_summary(cfg, p, std::move(j));
    } else if (cfg.kind == "barrier") {
        BarrierConfig c = build_barrier(p, cfg.master_seed);
        p.reject_unknown();
        BarrierResult r = run_barrier_experiment(c);
        r.write(cfg.out_dir);
        int shared_lower = 0;
        for (const auto& row : r.rows)
            shared_lower += row.shared_excess.back() < row.independent_excess;
        nlohmann::json j;
        j["shared_lower_count"] = shared_lower;
        j["seeds"] = r.rows.size();
        write_common_summary(cfg, p, std::move(j));
    } else if (cfg.kind == "dart" || cfg.kind == "erm") {
        run_patch_training(cfg, p, cfg.kind == "dart");
    } else if (cfg.kind == "mtbench") {
        MtBenchSpec spec = consume_mtbench(p, cfg.master_seed);
        p.reject_unknown();
        SyntheticTask task = make_task(spec.task, derive_seed(cfg.master_seed, "task"));
        auto cors = default_corruptions(spec.task, derive_seed(cfg.master_seed, "corruptions"));
        Corruption same =
            default_same_arm_corruption(spec.task, derive_seed(cfg.master_seed, "corruptions"));
        MtBenchResult r = run_mt_vs_dart(task, cors, same, spec.run);
        r.table.to_csv(cfg.out_dir + "/crosstable.csv");
        for (const auto& [arm, rec] : r.records) rec.to_csv(cfg.out_dir + "/run_" + arm + ".csv");
        nlohmann::json j;
        j["mt_mean"] = r.table.mean_excluding(r.mt_row, -1);
        j["dart_same_clean"] = r.table.acc(r.dart_same_row, 0);
        j["erm_same_clean"] = r.table.acc(r.erm_same_row, 0);
        write_common_summary(cfg, p, std::move(j));
    } else if (cfg.kind == "flatness") {
        FlatnessSpec spec = consume_flatness(p, cfg.master_seed);
        p.reject_unknown();
        SyntheticTask task = make_task(spec.task, derive_seed(cfg.master_seed, "task"));
        auto cors = default_corruptions(spec.task, derive_seed(cfg.master_seed, "corruptions"));
        Corruption same =
            default_same_arm_corruption(spec.task, derive_seed(cfg.master_seed, "corruptions"));
        FlatnessPair f = run_flatness_pair(task, cors, same, spec.run, spec.radius, spec.noise_std,
                                           spec.probes, spec.ascent, spec.samples);
        CsvWriter csv({"arm", "worst_case", "average", "train_loss"},
                      cfg.out_dir + "/flatness.csv");
        csv.row({std::string("erm"), f.erm_worst, f.erm_avg, f.erm_train});
        csv.row({std::string("dart"), f.dart_worst, f.dart_avg, f.dart_train});
        csv.close();
        nlohmann::json j;
        j["erm"] = {{"worst_case", f.erm_worst}, {"average", f.erm_avg}, {"train", f.erm_train}};
        j["dart"] = {
            {"worst_case", f.dart_worst}, {"average", f.dart_avg}, {"train", f.dart_train}};
        write_common_summary(cfg, p, std::move(j));
    } else if (cfg.kind == "trajectory") {
        std::string dir = p.get_string("trajectory.checkpoint_dir", cfg.out_dir);
        p.reject_unknown();
        std::vector<std::string> files;
        for (const auto& entry : std::filesystem::directory_iterator(dir))
            if (entry.path().extension() == ".dlp") files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        std::vector<Eigen::VectorXd> checkpoints;
        std::vector<std::string> ids;
        for (const std::string& f : files) {
            checkpoints.push_back(read_checkpoint(f).flat());
            ids.push_back(std::filesystem::path(f).stem().string());
        }
        TrajectoryProjection proj = pca_trajectory(checkpoints, ids);
        proj.to_csv(cfg.out_dir + "/trajectory.csv");
        nlohmann::json j;
        j["checkpoints"] = ids.size();
        j["explained_var1"] = proj.explained_var1;
        j["explained_var2"] = proj.explained_var2;
        write_common_summary(cfg, p, std::move(j));
    } else {
        throw ConfigError("unknown experiment kind '" + cfg.kind + "'");
    }
}

}  // namespace dartlab
