#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dartlab {

/// K orthonormal label-carrying directions in R^d. Built as the first K
/// standard-basis vectors, which makes orthonormality exact.
struct FeatureBank {
    int K = 0;
    int d = 0;
    Eigen::MatrixXd vectors;  // K x d, row k-1 is v_k

    Eigen::VectorXd vector(int k) const { return vectors.row(k - 1); }
};

FeatureBank make_feature_bank(int K, int d);

/// One labelled input: a feature patch x1 = y * v_{feature_index} and a noise
/// patch x2 = eps. The noise vector is drawn once and referenced by id.
struct PatchSample {
    int feature_index = 1;  // 1-based, in [1, K]
    int label = 1;          // +1 / -1
    int noise_id = 0;       // row into the dataset's noise pool
};

struct PatchDataset {
    std::shared_ptr<const FeatureBank> bank;
    std::shared_ptr<const Eigen::MatrixXd> noise_pool;  // one row per noise id
    std::vector<PatchSample> samples;
    double sigma = 0.0;  // eps ~ N(0, sigma^2/d * I_d)

    int n() const { return static_cast<int>(samples.size()); }
    int K() const { return bank->K; }
    int d() const { return bank->d; }
    Eigen::VectorXd feature_patch(int i) const;
    Eigen::VectorXd noise_patch(int i) const;
    /// Label attached to a noise id (constant across augmented copies).
    int noise_label(int noise_id) const;
};

/// Deterministic two-patch dataset. Feature counts come from a largest-
/// remainder allocation of n * rho_k (no sampling variance in rho); labels
/// alternate +1/-1 within each feature class; noise patches are i.i.d.
/// N(0, sigma^2/d I_d) from the seeded stream.
PatchDataset sample_dataset(const FeatureBank& bank, int n, const Eigen::VectorXd& rho,
                            double sigma, std::uint64_t seed);

/// Cyclic augmentation T_k: feature index k' -> ((k' + k - 1) mod K) + 1.
/// Noise patch and label pass through unchanged.
PatchDataset apply_augmentation(const PatchDataset& ds, int k);

/// D u T_1(D) u ... u T_{m-1}(D), original block first, shifts ascending.
PatchDataset union_augmented(const PatchDataset& ds, int m);

/// Deterministic shuffle, then M disjoint blocks of size floor(n/M); the
/// remainder count is reported through `dropped` when given.
std::vector<PatchDataset> split_for_branches(const PatchDataset& ds, int M, std::uint64_t seed,
                                             int* dropped = nullptr);

/// Realized feature frequency fractions (counts / n).
Eigen::VectorXd empirical_rho(const PatchDataset& ds);

/// rho_k divided by the summed frequency of the cyclic window of m features
/// starting at (k mod K) + 1 (the window below Corollary 1.1).
double restricted_rho(const PatchDataset& ds, int k, int m);

/// Fresh noise pool (same shape/scale) so branch noise is i.i.d. across
/// branches; feature indices and labels are untouched.
PatchDataset resample_noise(const PatchDataset& ds, std::uint64_t seed);

/// Concatenation preserving input order; pools are merged when they differ.
PatchDataset concat_datasets(const std::vector<const PatchDataset*>& parts);

/// Debug dump: `sample,feature_index,label,noise_id` (noise vectors omitted).
void dump_dataset_csv(const PatchDataset& ds, const std::string& path);

}  // namespace dartlab
