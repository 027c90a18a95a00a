#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dartlab/orchestrator.hpp"
#include "dartlab/trainable.hpp"

namespace dartlab {

struct BenchDataset {
    Eigen::MatrixXd X;  // n x dim
    Eigen::VectorXi y;  // +1 / -1

    int n() const { return static_cast<int>(X.rows()); }
    int dim() const { return static_cast<int>(X.cols()); }
};

BenchDataset concat_datasets(const std::vector<const BenchDataset*>& parts);
std::vector<BenchDataset> split_bench(const BenchDataset& ds, int M, std::uint64_t seed);

/// Binary task with two robust coordinate blocks, a spurious block whose sign
/// agrees with the label at `spurious_rate`, and pure-noise coordinates.
struct TaskConfig {
    int robust1_start = 0, robust1_len = 8;
    int robust2_start = 8, robust2_len = 8;
    int spurious_start = 16, spurious_len = 2;
    int noise_start = 18, noise_len = 8;  // total dim 26
    double robust_mean = 0.45;
    double spurious_mean = 1.0;
    double spurious_rate = 0.9;  // P(spurious sign == label), in [0.5, 1]
    double label_noise_rate = 0.1;  // train-set flips; memorization pressure
    int n_train = 1200;
    int n_test = 2000;

    int dim() const { return noise_start + noise_len; }
    void validate() const;
};

struct SyntheticTask {
    TaskConfig cfg;
    BenchDataset train;
    BenchDataset test;
    std::uint64_t seed = 0;
};

SyntheticTask make_task(const TaskConfig& cfg, std::uint64_t seed);

struct Corruption {
    enum class Kind { mask, jitter, permute };
    Kind kind = Kind::mask;
    int block_start = 0;
    int block_len = 0;
    double strength = 1.0;  // 0 = identity for every kind
    std::uint64_t seed = 0;
    std::string name;
};

/// Applies the corruption to a copy of the inputs; labels untouched.
/// Deterministic given the corruption's seed.
BenchDataset corrupt(const BenchDataset& ds, const Corruption& c);

/// One-hidden-layer ReLU network with a single logistic output.
struct MlpModel {
    int in = 0;
    int hidden = 0;
    Eigen::MatrixXd W1;  // hidden x in
    Eigen::VectorXd b1;
    Eigen::VectorXd w2;  // hidden
    double b2 = 0.0;

    Eigen::VectorXd flat() const;
    void set_flat(const Eigen::VectorXd& v);
    long param_count() const { return W1.size() + b1.size() + w2.size() + 1; }
    Eigen::VectorXd logits(const Eigen::MatrixXd& X) const;
};

MlpModel init_mlp(int in, int hidden, std::uint64_t seed);

class MlpTrainable : public Trainable {
public:
    MlpTrainable(MlpModel model, std::shared_ptr<const BenchDataset> ds);

    Eigen::VectorXd get_params() const override;
    void set_params(const Eigen::VectorXd& params) override;
    int sample_count() const override;
    double loss_and_grad(std::span<const int> batch, Eigen::VectorXd& grad) const override;
    double loss(std::span<const int> batch) const override;
    double accuracy(std::span<const int> batch) const override;
    std::unique_ptr<Trainable> clone() const override;

    const MlpModel& model() const { return model_; }

private:
    MlpModel model_;
    std::shared_ptr<const BenchDataset> ds_;
};

/// Fraction of test samples with sign(F) == y, after applying the optional
/// test-time corruption.
double evaluate(const MlpModel& model, const BenchDataset& ds, const Corruption* c = nullptr);

double mlp_loss(const MlpModel& model, const BenchDataset& ds);

struct BenchRunConfig {
    int hidden = 96;
    int epochs = 160;
    int warmup_epochs = 80;  // DART E'
    int lambda = 8;
    double lr_max = 0.1;
    int batch_size = 60;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double ema_decay = 0.999;
    int same_arm_branches = 4;  // branch count for the identical-corruption arms
    std::uint64_t master_seed = 1;
    int threads = 0;
};

/// The three stand-in augmentations of the benchmark (all masking style).
std::vector<Corruption> default_corruptions(const TaskConfig& cfg, std::uint64_t seed);

/// The corruption used identically across branches by the same-augmentation
/// arms (a moderate jitter, where averaging has noise to cancel).
Corruption default_same_arm_corruption(const TaskConfig& cfg, std::uint64_t seed);

struct CrossTable {
    std::vector<std::string> arms;     // row names
    std::vector<std::string> columns;  // "clean" + corruption names
    Eigen::MatrixXd acc;               // arms x columns

    double mean_excluding(int arm, int own_column) const;  // own_column < 0: all
    void to_csv(const std::string& path) const;
};

/// Trains per-corruption experts, mixed-training ERM, DART with one
/// corruption per branch, DART with one shared corruption, and the matching
/// plain ERM baseline; evaluates everything on clean and corrupted test sets.
struct MtBenchResult {
    CrossTable table;
    int expert_rows_begin = 0;  // experts occupy [begin, begin + #corruptions)
    int mt_row = 0;
    int dart_mixed_row = 0;
    int dart_same_row = 0;
    int erm_same_row = 0;
    std::vector<std::pair<std::string, RunRecord>> records;  // per-arm histories
};

MtBenchResult run_mt_vs_dart(const SyntheticTask& task, const std::vector<Corruption>& corruptions,
                             const Corruption& same_arm, const BenchRunConfig& cfg);

/// Paired flatness comparison on the same-corruption setting: ERM+EMA against
/// DART+EMA, both deployed models probed on the train loss surface.
struct FlatnessPair {
    double erm_worst = 0.0, erm_avg = 0.0, erm_train = 0.0;
    double dart_worst = 0.0, dart_avg = 0.0, dart_train = 0.0;
};

FlatnessPair run_flatness_pair(const SyntheticTask& task, const std::vector<Corruption>& corruptions,
                               const Corruption& same_arm, const BenchRunConfig& cfg,
                               double radius = 0.25, double noise_std = 0.25, int probes = 20,
                               int ascent_steps = 10, int noise_samples = 64);

/// Config flavor for the flatness pair: small batches keep late-phase SGD
/// noise alive, which branch averaging then cancels.
inline BenchRunConfig default_flatness_run_config() {
    BenchRunConfig cfg;
    cfg.batch_size = 20;
    return cfg;
}

}  // namespace dartlab
