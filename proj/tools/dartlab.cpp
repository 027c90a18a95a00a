// dartlab: experiment dispatcher for the patch-model training laboratory.
//
//   dartlab run <config> [--set key=value ...]
//   dartlab validate <config>
//   dartlab barrier <ckptA> <ckptB> --data <data-config> [--grid N] [--out csv]
//   dartlab trajectory <ckpt-dir> [--out dir]

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dartlab/analysis.hpp"
#include "dartlab/checkpoint.hpp"
#include "dartlab/config.hpp"
#include "dartlab/csvio.hpp"
#include "dartlab/errors.hpp"
#include "dartlab/patchnet.hpp"
#include "dartlab/runner.hpp"

using namespace dartlab;

namespace {

void report_error(const std::string& out_dir, const std::string& kind, const std::string& what) {
    std::cerr << "error: " << what << "\n";
    try {
        std::filesystem::create_directories(out_dir);
        nlohmann::json j;
        j["error"] = what;
        j["kind"] = kind;
        write_summary(j, out_dir + "/error.json");
    } catch (...) {
    }
}

// Dataset recipe for barrier evaluation: the noise vectors are regenerated
// from the seed, so checkpoints plus this config reproduce the loss surface.
PatchDataset dataset_from_config(const std::string& path) {
    Params p(parse_kv_text(read_text_file(path)));
    int K = static_cast<int>(p.get_int("data.K", 4, 1, 64));
    int d = static_cast<int>(p.get_int("data.d", 256, K, 1 << 22));
    int n = static_cast<int>(p.get_int("data.n", 240, 1, 1 << 20));
    double sigma = p.get_real("data.sigma", 1.0, 0.0, 1e6);
    std::uint64_t seed = static_cast<std::uint64_t>(
        p.get_int("data.seed", 1, 0, std::numeric_limits<long long>::max()));
    std::vector<double> uniform(K, 1.0 / K);
    std::vector<double> rho = p.get_real_list("data.rho", uniform);
    p.reject_unknown();
    Eigen::VectorXd rho_v(K);
    for (int k = 0; k < K; ++k) rho_v[k] = rho[k];
    return sample_dataset(make_feature_bank(K, d), n, rho_v, sigma, seed);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dartlab: diversify-aggregate-repeat training laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, kind;
    std::uint64_t master_seed = 0;
    bool seed_set = false;
    std::vector<std::string> overrides;

    auto add_common = [&](CLI::App* cmd, bool config_required) {
        auto* pos = cmd->add_option("config", config_path, "key=value config file");
        if (config_required) pos->required();
        cmd->add_option("--set", overrides, "override: key=value (repeatable)");
        cmd->add_option("--kind", kind, "experiment kind (overrides the file)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", master_seed, "master seed")->each([&](const std::string&) {
            seed_set = true;
        });
    };

    CLI::App* run = app.add_subcommand("run", "run an experiment and write artifacts");
    add_common(run, false);
    CLI::App* validate = app.add_subcommand("validate", "resolve and echo a configuration");
    add_common(validate, false);

    CLI::App* barrier = app.add_subcommand("barrier", "loss barrier between two checkpoints");
    std::string ckpt_a, ckpt_b, data_cfg, barrier_out = "barrier_profile.csv";
    int grid = 21;
    barrier->add_option("ckptA", ckpt_a)->required();
    barrier->add_option("ckptB", ckpt_b)->required();
    barrier->add_option("--data", data_cfg, "dataset recipe config")->required();
    barrier->add_option("--grid", grid, "interpolation grid size");
    barrier->add_option("--out", barrier_out, "output csv path");

    CLI::App* trajectory = app.add_subcommand("trajectory", "PCA of checkpoint weights");
    std::string ckpt_dir, traj_out = ".";
    trajectory->add_option("ckpt-dir", ckpt_dir)->required();
    trajectory->add_option("--out", traj_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed() || validate->parsed()) {
            std::vector<std::string> ov = overrides;
            if (!kind.empty()) ov.push_back("kind=" + kind);
            if (!out_dir.empty()) ov.push_back("out=" + out_dir);
            if (seed_set) ov.push_back("master_seed=" + std::to_string(master_seed));
            ExperimentConfig cfg = parse_config(config_path, ov);
            if (validate->parsed()) {
                std::cout << validate_config(cfg);
                return 0;
            }
            run_experiment(cfg);
            std::cout << "wrote artifacts to " << cfg.out_dir << "\n";
            return 0;
        }
        if (barrier->parsed()) {
            PatchModel a = read_checkpoint(ckpt_a);
            PatchModel b = read_checkpoint(ckpt_b);
            PatchDataset data = dataset_from_config(data_cfg);
            PatchModel proto = a;
            auto eval = [&](const Eigen::VectorXd& p) {
                PatchModel m = proto;
                m.set_flat(p);
                return dataset_loss(m, data);
            };
            BarrierProfile prof = loss_barrier(a.flat(), b.flat(), eval, grid);
            CsvWriter csv({"alpha", "loss"}, barrier_out);
            for (int i = 0; i < prof.alphas.size(); ++i)
                csv.row({prof.alphas[i], prof.losses[i]});
            csv.close();
            std::cout << "max_loss=" << format_double(prof.max_loss)
                      << " barrier_excess=" << format_double(prof.barrier_excess) << "\n";
            return 0;
        }
        if (trajectory->parsed()) {
            ExperimentConfig cfg;
            cfg.kind = "trajectory";
            cfg.out_dir = traj_out;
            cfg.kv["trajectory.checkpoint_dir"] = ckpt_dir;
            run_experiment(cfg);
            std::cout << "wrote " << traj_out << "/trajectory.csv\n";
            return 0;
        }
    } catch (const Error& e) {
        report_error(out_dir.empty() ? "." : out_dir, kind, e.what());
        return 2;
    } catch (const std::exception& e) {
        report_error(out_dir.empty() ? "." : out_dir, kind, e.what());
        return 3;
    }
    return 1;
}
