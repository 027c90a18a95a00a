#include "dartlab/orchestrator.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "dartlab/csvio.hpp"

namespace dartlab {

double cosine_lr(int epoch, int E, double lr_max) {
    if (E < 1) throw ScheduleError("schedule length E must be >= 1");
    if (epoch < 1 || epoch > E)
        throw ScheduleError("epoch " + std::to_string(epoch) + " outside schedule range [1, " +
                            std::to_string(E) + "]");
    return 0.5 * lr_max * (1.0 + std::cos(double(epoch - 1) / E * M_PI));
}

PatchDataset mixed_dataset(const std::vector<PatchDataset>& parts) {
    std::vector<const PatchDataset*> ptrs;
    for (const PatchDataset& p : parts) ptrs.push_back(&p);
    return concat_datasets(ptrs);
}

Eigen::VectorXd aggregate_uniform(const std::vector<Eigen::VectorXd>& params) {
    if (params.empty()) throw ConfigError("aggregate_uniform needs at least one vector");
    // Mean as anchor plus averaged deviations: exact on identical inputs and
    // better conditioned when the models are clustered, as branches are.
    Eigen::VectorXd dev = Eigen::VectorXd::Zero(params[0].size());
    for (std::size_t i = 1; i < params.size(); ++i) {
        if (params[i].size() != params[0].size())
            throw ShapeError("parameter vectors have different lengths");
        dev += params[i] - params[0];
    }
    return params[0] + dev / double(params.size());
}

Eigen::VectorXd aggregate_convex(const std::vector<Eigen::VectorXd>& params,
                                 const Eigen::VectorXd& coeffs) {
    if (params.empty()) throw ConfigError("aggregate_convex needs at least one vector");
    if (coeffs.size() != static_cast<int>(params.size()))
        throw ConfigError("coefficient count does not match model count");
    if (coeffs.minCoeff() < 0.0) throw ConfigError("convex coefficients must be nonnegative");
    if (std::abs(coeffs.sum() - 1.0) > 1e-9)
        throw ConfigError("convex coefficients must sum to 1, got " +
                          format_double(coeffs.sum()));
    Eigen::VectorXd out = coeffs[0] * params[0];
    for (std::size_t i = 1; i < params.size(); ++i) {
        if (params[i].size() != out.size())
            throw ShapeError("parameter vectors have different lengths");
        out += coeffs[i] * params[i];
    }
    return out;
}

void TrainConfig::validate() const {
    if (E < 1) throw ConfigError("E must be >= 1");
    if (E_prime < 0 || E_prime > E) throw ConfigError("E_prime must lie in [0, E]");
    if (M < 1) throw ConfigError("M must be >= 1");
    if (lambda < 1) throw ConfigError("lambda must be >= 1");
    if (!(lr_max > 0.0)) throw ConfigError("LR_max must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (ema_decay && (*ema_decay < 0.0 || *ema_decay >= 1.0))
        throw ConfigError("ema_decay must lie in [0, 1)");
}

namespace detail {

int batches_in_epoch(int n, int batch_size) {
    if (batch_size >= n) return 1;
    return (n + batch_size - 1) / batch_size;
}

std::pair<double, double> eval_full(Trainable& trainable) {
    std::vector<int> all(trainable.sample_count());
    std::iota(all.begin(), all.end(), 0);
    return {trainable.loss(all), trainable.accuracy(all)};
}

std::pair<double, double> sgd_epoch(Trainable& trainable, SgdState& state, int epoch, double lr,
                                    const SgdOptions& opts, std::uint64_t epoch_seed,
                                    EmaState* ema) {
    trainable.on_epoch_begin(epoch);
    const int n = trainable.sample_count();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), rng);

    const int bs = std::min(opts.batch_size, n);
    double loss_sum = 0.0;
    int batches = 0;
    Eigen::VectorXd grad(state.theta.size());
    for (int start = 0; start < n; start += bs) {
        const int len = std::min(bs, n - start);
        trainable.set_params(state.theta);
        double loss = trainable.loss_and_grad(std::span<const int>(order.data() + start, len), grad);
        if (!std::isfinite(loss) || !grad.allFinite())
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch),
                                  double(epoch - 1));
        if (opts.weight_decay != 0.0) grad += opts.weight_decay * state.theta;
        if (opts.momentum != 0.0) {
            state.velocity = opts.momentum * state.velocity + grad;
            state.theta -= lr * state.velocity;
        } else {
            state.theta -= lr * grad;
        }
        if (ema) ema_update(*ema, state.theta);
        loss_sum += loss;
        ++batches;
    }
    trainable.set_params(state.theta);
    auto [full_loss, acc] = eval_full(trainable);
    (void)full_loss;
    return {batches ? loss_sum / batches : 0.0, acc};
}

}  // namespace detail

RunRecord erm_train(Trainable& trainable, int first_epoch, int last_epoch,
                    const LrSchedule& schedule, const SgdOptions& opts, std::uint64_t seed,
                    const std::vector<int>& checkpoint_epochs) {
    if (trainable.sample_count() == 0) throw DomainError("erm_train needs a nonempty dataset");
    RunRecord record;
    detail::SgdState state;
    state.theta = trainable.get_params();
    state.velocity = Eigen::VectorXd::Zero(state.theta.size());

    EmaState ema;
    EmaState* ema_ptr = nullptr;
    if (opts.ema_decay) {
        ema.decay = *opts.ema_decay;
        ema_ptr = &ema;
    }

    for (int epoch = first_epoch; epoch <= last_epoch; ++epoch) {
        double lr = schedule(epoch);
        auto [loss, acc] =
            detail::sgd_epoch(trainable, state, epoch, lr, opts,
                              derive_seed(seed, "epoch:" + std::to_string(epoch)), ema_ptr);
        record.rows.push_back({epoch, lr, 1, loss, acc, ""});
        record.last_epoch = epoch;
        if (std::find(checkpoint_epochs.begin(), checkpoint_epochs.end(), epoch) !=
            checkpoint_epochs.end())
            record.checkpoints[epoch] = state.theta;
    }
    record.final_params = state.theta;
    if (ema_ptr && ema.updates > 0) record.ema_params = ema.shadow;
    trainable.set_params(state.theta);
    return record;
}

void RunRecord::to_csv(const std::string& path) const {
    CsvWriter csv({"epoch", "lr", "branch", "loss", "eval_acc", "event"}, path);
    for (const RunRow& r : rows)
        csv.row({(long long)r.epoch, r.lr, (long long)r.branch, r.loss, r.eval_acc, r.event});
    csv.close();
}

}  // namespace dartlab
