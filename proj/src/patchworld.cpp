#include "dartlab/patchworld.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <unordered_map>

#include "dartlab/csvio.hpp"
#include "dartlab/errors.hpp"

namespace dartlab {

FeatureBank make_feature_bank(int K, int d) {
    if (K < 1) throw ConfigError("feature bank needs K >= 1, got " + std::to_string(K));
    if (K > d)
        throw ConfigError("invalid dimensions: K = " + std::to_string(K) + " exceeds d = " +
                          std::to_string(d));
    FeatureBank bank;
    bank.K = K;
    bank.d = d;
    bank.vectors = Eigen::MatrixXd::Zero(K, d);
    for (int k = 0; k < K; ++k) bank.vectors(k, k) = 1.0;
    return bank;
}

Eigen::VectorXd PatchDataset::feature_patch(int i) const {
    const PatchSample& s = samples.at(i);
    return s.label * bank->vector(s.feature_index);
}

Eigen::VectorXd PatchDataset::noise_patch(int i) const {
    return noise_pool->row(samples.at(i).noise_id);
}

int PatchDataset::noise_label(int noise_id) const {
    for (const PatchSample& s : samples)
        if (s.noise_id == noise_id) return s.label;
    throw DomainError("noise id " + std::to_string(noise_id) + " not present in dataset");
}

namespace {

// Largest-remainder allocation of n slots over fractions rho.
std::vector<int> allocate_counts(int n, const Eigen::VectorXd& rho) {
    const int K = static_cast<int>(rho.size());
    std::vector<int> counts(K);
    std::vector<std::pair<double, int>> rema(K);
    int assigned = 0;
    for (int k = 0; k < K; ++k) {
        double exact = n * rho[k];
        counts[k] = static_cast<int>(exact);
        rema[k] = {exact - counts[k], k};
        assigned += counts[k];
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; assigned < n; ++i, ++assigned) counts[rema[i % K].second] += 1;
    return counts;
}

std::shared_ptr<Eigen::MatrixXd> draw_noise_pool(int n, int d, double sigma, std::uint64_t seed) {
    auto pool = std::make_shared<Eigen::MatrixXd>(n, d);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, d > 0 ? sigma / std::sqrt(double(d)) : 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) (*pool)(i, j) = gauss(rng);
    return pool;
}

}  // namespace

PatchDataset sample_dataset(const FeatureBank& bank, int n, const Eigen::VectorXd& rho,
                            double sigma, std::uint64_t seed) {
    if (n < 0) throw ConfigError("dataset size must be nonnegative");
    if (rho.size() != bank.K)
        throw ConfigError("rho has length " + std::to_string(rho.size()) + ", expected K = " +
                          std::to_string(bank.K));
    if (rho.minCoeff() < 0.0) throw ConfigError("rho entries must be nonnegative");
    if (std::abs(rho.sum() - 1.0) > 1e-9)
        throw ConfigError("rho must sum to 1, got " + format_double(rho.sum()));

    PatchDataset ds;
    ds.bank = std::make_shared<FeatureBank>(bank);
    ds.sigma = sigma;
    ds.noise_pool = draw_noise_pool(n, bank.d, sigma, seed);
    ds.samples.reserve(n);
    std::vector<int> counts = allocate_counts(n, rho);
    int noise_id = 0;
    for (int k = 0; k < bank.K; ++k) {
        for (int i = 0; i < counts[k]; ++i) {
            PatchSample s;
            s.feature_index = k + 1;
            s.label = (i % 2 == 0) ? 1 : -1;  // balanced within the feature class
            s.noise_id = noise_id++;
            ds.samples.push_back(s);
        }
    }
    return ds;
}

PatchDataset apply_augmentation(const PatchDataset& ds, int k) {
    const int K = ds.K();
    if (k < 1 || k > K)
        throw ConfigError("augmentation shift " + std::to_string(k) + " outside [1, " +
                          std::to_string(K) + "]");
    PatchDataset out = ds;
    for (PatchSample& s : out.samples) s.feature_index = ((s.feature_index + k - 1) % K) + 1;
    return out;
}

PatchDataset union_augmented(const PatchDataset& ds, int m) {
    if (m < 1 || m > ds.K())
        throw ConfigError("union size m = " + std::to_string(m) + " outside [1, K = " +
                          std::to_string(ds.K()) + "]");
    PatchDataset out = ds;
    for (int k = 1; k < m; ++k) {
        PatchDataset shifted = apply_augmentation(ds, k);
        out.samples.insert(out.samples.end(), shifted.samples.begin(), shifted.samples.end());
    }
    return out;
}

std::vector<PatchDataset> split_for_branches(const PatchDataset& ds, int M, std::uint64_t seed,
                                             int* dropped) {
    if (M < 1) throw ConfigError("branch count must be >= 1");
    if (M > ds.n())
        throw ConfigError("cannot split " + std::to_string(ds.n()) + " samples into " +
                          std::to_string(M) + " branches");
    std::vector<int> order(ds.n());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const int block = ds.n() / M;
    if (dropped) *dropped = ds.n() - block * M;
    std::vector<PatchDataset> parts;
    parts.reserve(M);
    for (int b = 0; b < M; ++b) {
        PatchDataset part;
        part.bank = ds.bank;
        part.noise_pool = ds.noise_pool;
        part.sigma = ds.sigma;
        part.samples.reserve(block);
        for (int i = 0; i < block; ++i) part.samples.push_back(ds.samples[order[b * block + i]]);
        parts.push_back(std::move(part));
    }
    return parts;
}

Eigen::VectorXd empirical_rho(const PatchDataset& ds) {
    if (ds.n() == 0) throw DomainError("empirical_rho undefined for an empty dataset");
    Eigen::VectorXd rho = Eigen::VectorXd::Zero(ds.K());
    for (const PatchSample& s : ds.samples) rho[s.feature_index - 1] += 1.0;
    return rho / ds.n();
}

double restricted_rho(const PatchDataset& ds, int k, int m) {
    const int K = ds.K();
    if (k < 1 || k > K) throw ConfigError("feature index outside [1, K]");
    if (m < 1 || m > K) throw ConfigError("window length outside [1, K]");
    Eigen::VectorXd rho = empirical_rho(ds);
    double window = 0.0;
    for (int j = 0; j < m; ++j) window += rho[(k + j) % K];  // starts at (k mod K) + 1
    if (window <= 0.0) throw DomainError("restricted_rho window has zero total frequency");
    return rho[k - 1] / window;
}

PatchDataset resample_noise(const PatchDataset& ds, std::uint64_t seed) {
    PatchDataset out = ds;
    out.noise_pool =
        draw_noise_pool(static_cast<int>(ds.noise_pool->rows()), ds.d(), ds.sigma, seed);
    return out;
}

PatchDataset concat_datasets(const std::vector<const PatchDataset*>& parts) {
    if (parts.empty()) throw ConfigError("concat_datasets needs at least one dataset");
    const PatchDataset& head = *parts.front();
    for (const PatchDataset* p : parts) {
        if (p->K() != head.K() || p->d() != head.d())
            throw ConfigError("datasets have incompatible banks");
    }
    bool shared_pool = true;
    for (const PatchDataset* p : parts) shared_pool &= (p->noise_pool == head.noise_pool);

    PatchDataset out;
    out.bank = head.bank;
    out.sigma = head.sigma;
    if (shared_pool) {
        out.noise_pool = head.noise_pool;
        for (const PatchDataset* p : parts)
            out.samples.insert(out.samples.end(), p->samples.begin(), p->samples.end());
        return out;
    }
    long rows = 0;
    for (const PatchDataset* p : parts) rows += p->noise_pool->rows();
    auto pool = std::make_shared<Eigen::MatrixXd>(rows, head.d());
    long base = 0;
    for (const PatchDataset* p : parts) {
        pool->middleRows(base, p->noise_pool->rows()) = *p->noise_pool;
        for (PatchSample s : p->samples) {
            s.noise_id += static_cast<int>(base);
            out.samples.push_back(s);
        }
        base += p->noise_pool->rows();
    }
    out.noise_pool = pool;
    return out;
}

void dump_dataset_csv(const PatchDataset& ds, const std::string& path) {
    CsvWriter csv({"sample", "feature_index", "label", "noise_id"}, path);
    for (int i = 0; i < ds.n(); ++i) {
        const PatchSample& s = ds.samples[i];
        csv.row({(long long)i, (long long)s.feature_index, (long long)s.label,
                 (long long)s.noise_id});
    }
    csv.close();
}

}  // namespace dartlab
