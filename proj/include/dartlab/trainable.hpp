#pragma once

#include <memory>
#include <span>

#include <Eigen/Dense>

namespace dartlab {

/// Model-agnostic handle the training orchestrator drives. Contract:
/// set_params(get_params()) is a no-op, and the parameter length is constant
/// over a run. loss_and_grad evaluates at the current parameters over the
/// given sample indices of the bound dataset.
class Trainable {
public:
    virtual ~Trainable() = default;

    virtual Eigen::VectorXd get_params() const = 0;
    virtual void set_params(const Eigen::VectorXd& params) = 0;
    virtual int sample_count() const = 0;
    virtual double loss_and_grad(std::span<const int> batch, Eigen::VectorXd& grad) const = 0;
    virtual double loss(std::span<const int> batch) const = 0;
    virtual double accuracy(std::span<const int> batch) const = 0;
    virtual std::unique_ptr<Trainable> clone() const = 0;
    /// Hook for datasets that re-randomize per epoch (default: nothing).
    virtual void on_epoch_begin(int /*epoch*/) {}
};

struct EmaState {
    Eigen::VectorXd shadow;
    double decay = 0.999;
    long updates = 0;
};

/// shadow <- decay * shadow + (1 - decay) * params; first call copies params.
EmaState& ema_update(EmaState& state, const Eigen::VectorXd& params);

}  // namespace dartlab
