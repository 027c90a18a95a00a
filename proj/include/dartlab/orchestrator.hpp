#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dartlab/errors.hpp"
#include "dartlab/patchworld.hpp"
#include "dartlab/rng.hpp"
#include "dartlab/trainable.hpp"

namespace dartlab {

/// 0.5 * LR_max * (1 + cos((epoch - 1) / E * pi)), epoch in [1, E].
double cosine_lr(int epoch, int E, double lr_max);

/// Union of branch datasets, branch order preserved.
PatchDataset mixed_dataset(const std::vector<PatchDataset>& parts);

Eigen::VectorXd aggregate_uniform(const std::vector<Eigen::VectorXd>& params);
Eigen::VectorXd aggregate_convex(const std::vector<Eigen::VectorXd>& params,
                                 const Eigen::VectorXd& coeffs);

struct SgdOptions {
    int batch_size = 1 << 30;  // >= n means full batch
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::optional<double> ema_decay;
};

struct RunRow {
    int epoch = 0;
    double lr = 0.0;
    int branch = 0;  // 0 = trunk / aggregated model, 1..M = branches
    double loss = 0.0;
    double eval_acc = 0.0;
    std::string event;  // "", "warmup", "clone", "aggregate", "final_aggregate"
};

struct RunRecord {
    std::vector<RunRow> rows;
    std::vector<int> aggregation_epochs;
    std::map<int, Eigen::VectorXd> checkpoints;
    Eigen::VectorXd final_params;
    std::optional<Eigen::VectorXd> ema_params;
    bool diverged = false;
    int last_epoch = 0;

    void to_csv(const std::string& path) const;  // epoch,lr,branch,loss,eval_acc,event
};

using LrSchedule = std::function<double(int epoch)>;

/// SGD over epochs [first_epoch, last_epoch] with a fixed shuffle per epoch
/// derived from seed ("epoch:<e>"); deterministic given the seed.
RunRecord erm_train(Trainable& trainable, int first_epoch, int last_epoch,
                    const LrSchedule& schedule, const SgdOptions& opts, std::uint64_t seed,
                    const std::vector<int>& checkpoint_epochs = {});

/// How a branch's dataset recipe was built (echoed into logs/config).
struct BranchSpec {
    int shift = 0;         // cyclic augmentation shift, 0 = none
    int corruption = -1;   // mlpbench corruption id, -1 = none
    int split_index = -1;  // which split of the base data, -1 = full copy
    bool resample_noise = false;
};

struct TrainConfig {
    int E = 1;
    int E_prime = 0;  // warmup epochs; branches start at epoch max(E_prime, 1)
    int M = 1;
    int lambda = 1;  // aggregation period in epochs
    double lr_max = 0.1;
    int batch_size = 1 << 30;
    std::uint64_t master_seed = 0;
    bool aggregate_at_end = true;
    std::optional<double> ema_decay;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::vector<BranchSpec> branch_specs;
    std::vector<int> checkpoint_epochs;

    void validate() const;
};

namespace detail {

struct SgdState {
    Eigen::VectorXd theta;
    Eigen::VectorXd velocity;
};

int batches_in_epoch(int n, int batch_size);

/// One SGD epoch over a fixed shuffle. Returns (mean batch loss, accuracy on
/// the full bound set after the epoch). When ema is given the shadow is
/// updated after every optimizer step.
std::pair<double, double> sgd_epoch(Trainable& trainable, SgdState& state, int epoch, double lr,
                                    const SgdOptions& opts, std::uint64_t epoch_seed,
                                    EmaState* ema);

std::pair<double, double> eval_full(Trainable& trainable);

}  // namespace detail

/// Diversify-aggregate-repeat training over a model-agnostic trainable.
/// Epochs 1..E'-1 train one trunk model on the union of the branch datasets;
/// at E' the trunk is cloned into M branches, each training on its own
/// dataset under the shared cosine schedule; every lambda epochs past E' the
/// branch weights are averaged uniformly and re-broadcast, plus once more at
/// E when the final epoch was not an aggregation epoch. The trunk runs on
/// branch 1's RNG stream, so M = 1 is bit-identical to erm_train with seed
/// derive_seed(master_seed, "branch:1").
template <class Dataset, class Factory>
std::pair<Eigen::VectorXd, RunRecord> dart_train(Factory&& factory,
                                                 const std::vector<Dataset>& branch_data,
                                                 const TrainConfig& cfg) {
    cfg.validate();
    if (static_cast<int>(branch_data.size()) != cfg.M)
        throw ConfigError("expected " + std::to_string(cfg.M) + " branch datasets, got " +
                          std::to_string(branch_data.size()));

    std::vector<const Dataset*> parts;
    for (const Dataset& d : branch_data) parts.push_back(&d);
    Dataset mixed = concat_datasets(parts);

    SgdOptions opts;
    opts.batch_size = cfg.batch_size;
    opts.momentum = cfg.momentum;
    opts.weight_decay = cfg.weight_decay;

    RngPolicy rng{cfg.master_seed};
    std::vector<std::uint64_t> branch_seed(cfg.M);
    for (int k = 0; k < cfg.M; ++k)
        branch_seed[k] = rng.derive("branch:" + std::to_string(k + 1));

    std::unique_ptr<Trainable> trunk = factory(mixed);
    detail::SgdState trunk_state;
    trunk_state.theta = trunk->get_params();
    trunk_state.velocity = Eigen::VectorXd::Zero(trunk_state.theta.size());

    std::vector<std::unique_ptr<Trainable>> branches;
    std::vector<detail::SgdState> bstates;

    EmaState ema;
    EmaState* ema_ptr = nullptr;
    if (cfg.ema_decay) {
        ema.decay = *cfg.ema_decay;
        ema_ptr = &ema;
    }
    long total_steps = 0;
    long steps_at_ema = 0;

    RunRecord record;
    bool split_done = false;
    const int split_epoch = std::max(cfg.E_prime, 1);

    auto mean_theta = [&]() -> Eigen::VectorXd {
        if (!split_done) return trunk_state.theta;
        std::vector<Eigen::VectorXd> thetas;
        for (const auto& s : bstates) thetas.push_back(s.theta);
        return aggregate_uniform(thetas);
    };

    // EMA follows the deployable model: per optimizer step during warmup,
    // per epoch on the branch mean after the split, with the per-step decay
    // bridged over the steps the update covers.
    auto ema_bridge = [&](const Eigen::VectorXd& params) {
        if (!ema_ptr) return;
        if (ema.updates == 0) {
            ema_update(ema, params);
        } else {
            double bridged = std::pow(ema.decay, double(total_steps - steps_at_ema));
            ema.shadow = bridged * ema.shadow + (1.0 - bridged) * params;
            ++ema.updates;
        }
        steps_at_ema = total_steps;
    };

    auto aggregate_now = [&](int epoch, const char* event) {
        Eigen::VectorXd mean = mean_theta();
        for (int k = 0; k < cfg.M; ++k) {
            bstates[k].theta = mean;
            branches[k]->set_params(mean);
        }
        record.aggregation_epochs.push_back(epoch);
        trunk->set_params(mean);
        auto [loss, acc] = detail::eval_full(*trunk);
        record.rows.push_back({epoch, cosine_lr(epoch, cfg.E, cfg.lr_max), 0, loss, acc, event});
    };

    for (int epoch = 1; epoch <= cfg.E; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.E, cfg.lr_max);
        if (epoch < split_epoch) {
            auto [loss, acc] = detail::sgd_epoch(
                *trunk, trunk_state, epoch, lr, opts,
                derive_seed(branch_seed[0], "epoch:" + std::to_string(epoch)), ema_ptr);
            total_steps += detail::batches_in_epoch(trunk->sample_count(), opts.batch_size);
            steps_at_ema = total_steps;  // per-step EMA already applied
            record.rows.push_back({epoch, lr, 0, loss, acc, "warmup"});
        } else {
            if (!split_done) {
                for (int k = 0; k < cfg.M; ++k) {
                    branches.push_back(factory(branch_data[k]));
                    branches.back()->set_params(trunk_state.theta);
                    detail::SgdState s;
                    s.theta = trunk_state.theta;
                    s.velocity = trunk_state.velocity;  // branches continue the trunk's optimizer
                    bstates.push_back(std::move(s));
                }
                split_done = true;
            }
            for (int k = 0; k < cfg.M; ++k) {
                auto [loss, acc] = detail::sgd_epoch(
                    *branches[k], bstates[k], epoch, lr, opts,
                    derive_seed(branch_seed[k], "epoch:" + std::to_string(epoch)), nullptr);
                record.rows.push_back({epoch, lr, k + 1, loss, acc, ""});
            }
            total_steps += detail::batches_in_epoch(branches[0]->sample_count(), opts.batch_size);
            if (epoch > cfg.E_prime && (epoch - cfg.E_prime) % cfg.lambda == 0)
                aggregate_now(epoch, "aggregate");
            ema_bridge(mean_theta());
        }
        record.last_epoch = epoch;
        if (std::find(cfg.checkpoint_epochs.begin(), cfg.checkpoint_epochs.end(), epoch) !=
            cfg.checkpoint_epochs.end())
            record.checkpoints[epoch] = mean_theta();
    }

    // Uniform aggregation preserves the branch mean, so the EMA shadow needs
    // no extra update here.
    if (split_done && cfg.aggregate_at_end &&
        (record.aggregation_epochs.empty() || record.aggregation_epochs.back() != cfg.E))
        aggregate_now(cfg.E, "final_aggregate");

    record.final_params = split_done ? bstates[0].theta : trunk_state.theta;
    if (ema_ptr && ema.updates > 0) record.ema_params = ema.shadow;
    return {record.final_params, std::move(record)};
}

}  // namespace dartlab
