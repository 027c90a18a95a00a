#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "dartlab/errors.hpp"
#include "dartlab/patchworld.hpp"
#include "dartlab/rng.hpp"

using namespace dartlab;

namespace {

Eigen::VectorXd make_rho(std::initializer_list<double> vals) {
    Eigen::VectorXd rho(static_cast<int>(vals.size()));
    int i = 0;
    for (double v : vals) rho[i++] = v;
    return rho;
}

}  // namespace

TEST_CASE("feature bank is the standard basis and exactly orthonormal") {
    FeatureBank bank = make_feature_bank(2, 4);
    CHECK(bank.vector(1) == Eigen::Vector4d(1, 0, 0, 0));
    CHECK(bank.vector(2) == Eigen::Vector4d(0, 1, 0, 0));

    FeatureBank big = make_feature_bank(7, 19);
    for (int i = 1; i <= 7; ++i)
        for (int j = 1; j <= 7; ++j)
            CHECK(big.vector(i).dot(big.vector(j)) == (i == j ? 1.0 : 0.0));

    CHECK_THROWS_AS(make_feature_bank(5, 3), ConfigError);
}

TEST_CASE("sample_dataset: empty, exact allocation, rho validation") {
    FeatureBank bank = make_feature_bank(4, 8);
    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(4, 0.25);

    PatchDataset empty = sample_dataset(bank, 0, uniform, 1.0, 7);
    CHECK(empty.n() == 0);

    PatchDataset ds = sample_dataset(bank, 4000, uniform, 1.0, 7);
    Eigen::VectorXd rho = empirical_rho(ds);
    for (int k = 0; k < 4; ++k) CHECK(rho[k] == doctest::Approx(0.25).epsilon(1e-15));
    // deterministic allocation: exactly 1000 each
    Eigen::VectorXd counts = rho * ds.n();
    for (int k = 0; k < 4; ++k) CHECK(counts[k] == doctest::Approx(1000.0));

    CHECK_THROWS_AS(sample_dataset(bank, 10, make_rho({0.5, 0.5, 0.5, 0.5}), 1.0, 7), ConfigError);
    CHECK_THROWS_AS(sample_dataset(bank, 10, make_rho({0.5, 0.5}), 1.0, 7), ConfigError);
}

TEST_CASE("sample_dataset: labels balanced per feature, noise ids unique") {
    FeatureBank bank = make_feature_bank(3, 6);
    PatchDataset ds = sample_dataset(bank, 90, make_rho({0.5, 0.3, 0.2}), 1.0, 3);
    Eigen::Vector3d pos = Eigen::Vector3d::Zero(), tot = Eigen::Vector3d::Zero();
    std::set<int> ids;
    for (const PatchSample& s : ds.samples) {
        tot[s.feature_index - 1] += 1;
        if (s.label == 1) pos[s.feature_index - 1] += 1;
        ids.insert(s.noise_id);
    }
    CHECK(ids.size() == 90);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(2 * pos[k] - tot[k]) <= 1.0);
}

TEST_CASE("sample_dataset: mean noise norm matches sigma^2 (Monte-Carlo over seeds)") {
    FeatureBank bank = make_feature_bank(2, 10000);
    double total = 0.0;
    const int seeds = 100;
    for (int s = 0; s < seeds; ++s) {
        PatchDataset ds = sample_dataset(bank, 100, make_rho({0.5, 0.5}), 1.0, 1000 + s);
        double mean = 0.0;
        for (int i = 0; i < ds.n(); ++i) mean += ds.noise_patch(i).squaredNorm();
        total += mean / ds.n();
    }
    CHECK(total / seeds == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("apply_augmentation follows the cyclic map") {
    FeatureBank bank = make_feature_bank(3, 5);
    PatchDataset ds = sample_dataset(bank, 30, make_rho({0.5, 0.3, 0.2}), 0.5, 11);

    // k = K is the identity on indices
    PatchDataset same = apply_augmentation(ds, 3);
    for (int i = 0; i < ds.n(); ++i)
        CHECK(same.samples[i].feature_index == ds.samples[i].feature_index);

    // K = 3, k = 1: 1 -> 2, 2 -> 3, 3 -> 1; labels and noise untouched
    PatchDataset shifted = apply_augmentation(ds, 1);
    for (int i = 0; i < ds.n(); ++i) {
        int before = ds.samples[i].feature_index;
        CHECK(shifted.samples[i].feature_index == (before % 3) + 1);
        CHECK(shifted.samples[i].label == ds.samples[i].label);
        CHECK(shifted.samples[i].noise_id == ds.samples[i].noise_id);
    }

    CHECK_THROWS_AS(apply_augmentation(ds, 0), ConfigError);
    CHECK_THROWS_AS(apply_augmentation(ds, 4), ConfigError);
}

TEST_CASE("T_1 composed K times is the identity (enumeration over all indices)") {
    for (int K = 1; K <= 6; ++K) {
        FeatureBank bank = make_feature_bank(K, K);
        Eigen::VectorXd rho = Eigen::VectorXd::Constant(K, 1.0 / K);
        PatchDataset ds = sample_dataset(bank, 3 * K, rho, 0.1, 5);
        PatchDataset cur = ds;
        for (int rep = 0; rep < K; ++rep) cur = apply_augmentation(cur, 1);
        for (int i = 0; i < ds.n(); ++i)
            CHECK(cur.samples[i].feature_index == ds.samples[i].feature_index);
    }
}

TEST_CASE("augmentation is a bijection on feature indices for every shift") {
    const int K = 5;
    for (int k = 1; k <= K; ++k) {
        std::set<int> image;
        for (int kp = 1; kp <= K; ++kp) image.insert(((kp + k - 1) % K) + 1);
        CHECK(image.size() == K);
    }
}

TEST_CASE("union_augmented sizes, ordering and frequency balancing") {
    FeatureBank bank = make_feature_bank(3, 4);
    PatchDataset ds = sample_dataset(bank, 100, make_rho({0.5, 0.3, 0.2}), 1.0, 21);

    PatchDataset one = union_augmented(ds, 1);
    CHECK(one.n() == ds.n());
    for (int i = 0; i < ds.n(); ++i)
        CHECK(one.samples[i].feature_index == ds.samples[i].feature_index);

    // m = 2, K = 3, rho = (0.5, 0.3, 0.2) -> (0.35, 0.40, 0.25) by counting
    PatchDataset two = union_augmented(ds, 2);
    CHECK(two.n() == 200);
    Eigen::VectorXd rho2 = empirical_rho(two);
    CHECK(rho2[0] == doctest::Approx(0.35));
    CHECK(rho2[1] == doctest::Approx(0.40));
    CHECK(rho2[2] == doctest::Approx(0.25));
    // original block first
    for (int i = 0; i < ds.n(); ++i)
        CHECK(two.samples[i].feature_index == ds.samples[i].feature_index);

    CHECK_THROWS_AS(union_augmented(ds, 0), ConfigError);
    CHECK_THROWS_AS(union_augmented(ds, 4), ConfigError);
}

TEST_CASE("union with m = K makes every feature appear exactly n times") {
    FeatureBank bank = make_feature_bank(3, 4);
    PatchDataset ds = sample_dataset(bank, 100, make_rho({0.7, 0.2, 0.1}), 1.0, 33);
    PatchDataset all = union_augmented(ds, 3);
    Eigen::VectorXd counts = empirical_rho(all) * all.n();
    for (int k = 0; k < 3; ++k) CHECK(counts[k] == doctest::Approx(100.0));
    // uniform to within 1/n
    Eigen::VectorXd rho = empirical_rho(all);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(rho[k] - 1.0 / 3) <= 1.0 / ds.n());
}

TEST_CASE("split_for_branches: sizes, drop count, multiset preservation") {
    FeatureBank bank = make_feature_bank(2, 3);
    PatchDataset ds = sample_dataset(bank, 10, make_rho({0.5, 0.5}), 1.0, 9);

    int dropped = -1;
    auto parts1 = split_for_branches(ds, 1, 42, &dropped);
    CHECK(parts1.size() == 1);
    CHECK(parts1[0].n() == 10);
    CHECK(dropped == 0);

    auto parts3 = split_for_branches(ds, 3, 42, &dropped);
    CHECK(parts3.size() == 3);
    for (const auto& p : parts3) CHECK(p.n() == 3);
    CHECK(dropped == 1);

    // blocks are disjoint pieces of the input multiset
    std::multiset<std::pair<int, int>> input, output;
    for (const PatchSample& s : ds.samples) input.insert({s.feature_index, s.noise_id});
    for (const auto& p : parts3)
        for (const PatchSample& s : p.samples) output.insert({s.feature_index, s.noise_id});
    for (const auto& key : output) CHECK(input.count({key.first, key.second}) == 1);
    CHECK(output.size() == 9);

    CHECK_THROWS_AS(split_for_branches(ds, 11, 1), ConfigError);
}

TEST_CASE("empirical_rho: edge cases and round trip with the allocator") {
    FeatureBank bank = make_feature_bank(3, 3);
    PatchDataset ones = sample_dataset(bank, 20, make_rho({1.0, 0.0, 0.0}), 1.0, 2);
    Eigen::VectorXd rho = empirical_rho(ones);
    CHECK(rho[0] == 1.0);
    CHECK(rho[1] == 0.0);

    // round trip: rho with exact n multiples comes back exactly
    Eigen::VectorXd target = make_rho({0.55, 0.30, 0.15});
    PatchDataset ds = sample_dataset(bank, 200, target, 1.0, 2);
    Eigen::VectorXd back = empirical_rho(ds);
    for (int k = 0; k < 3; ++k) CHECK(back[k] == doctest::Approx(target[k]).epsilon(1e-12));
    CHECK(back.sum() == doctest::Approx(1.0).epsilon(1e-12));

    PatchDataset empty = sample_dataset(bank, 0, target, 1.0, 2);
    CHECK_THROWS_AS(empirical_rho(empty), DomainError);
}

TEST_CASE("restricted_rho window arithmetic") {
    FeatureBank bank = make_feature_bank(3, 3);
    PatchDataset ds = sample_dataset(bank, 100, make_rho({0.5, 0.3, 0.2}), 1.0, 4);

    // m = K: window covers everything, reduces to rho_k
    CHECK(restricted_rho(ds, 1, 3) == doctest::Approx(0.5));
    CHECK(restricted_rho(ds, 2, 3) == doctest::Approx(0.3));

    // hand count: k = 1, m = 2 -> 0.5 / (0.3 + 0.2) = 1.0
    CHECK(restricted_rho(ds, 1, 2) == doctest::Approx(1.0));
    // k = 2, m = 2 -> 0.3 / (0.2 + 0.5)
    CHECK(restricted_rho(ds, 2, 2) == doctest::Approx(0.3 / 0.7));

    // uniform rho: any window of length m sums to m/K
    FeatureBank b4 = make_feature_bank(4, 4);
    PatchDataset uni = sample_dataset(b4, 80, Eigen::VectorXd::Constant(4, 0.25), 1.0, 4);
    for (int k = 1; k <= 4; ++k)
        for (int m = 1; m <= 4; ++m)
            CHECK(restricted_rho(uni, k, m) == doctest::Approx(1.0 / m));

    PatchDataset skew = sample_dataset(bank, 10, make_rho({0.0, 0.0, 1.0}), 1.0, 4);
    CHECK_THROWS_AS(restricted_rho(skew, 3, 2), DomainError);  // window {1,2} empty
}

TEST_CASE("resample_noise keeps structure but redraws the pool") {
    FeatureBank bank = make_feature_bank(2, 64);
    PatchDataset ds = sample_dataset(bank, 20, make_rho({0.5, 0.5}), 1.0, 77);
    PatchDataset re = resample_noise(ds, 78);
    CHECK(re.n() == ds.n());
    for (int i = 0; i < ds.n(); ++i) {
        CHECK(re.samples[i].feature_index == ds.samples[i].feature_index);
        CHECK(re.samples[i].label == ds.samples[i].label);
    }
    CHECK((*re.noise_pool - *ds.noise_pool).norm() > 0.0);
}

TEST_CASE("concat merges distinct pools and remaps noise ids") {
    FeatureBank bank = make_feature_bank(2, 8);
    PatchDataset a = sample_dataset(bank, 6, make_rho({0.5, 0.5}), 1.0, 5);
    PatchDataset b = resample_noise(a, 6);
    PatchDataset both = concat_datasets({&a, &b});
    CHECK(both.n() == 12);
    for (int i = 0; i < 6; ++i) {
        CHECK(both.noise_patch(i) == a.noise_patch(i));
        CHECK(both.noise_patch(6 + i) == b.noise_patch(i));
    }
}

TEST_CASE("Lemma 1 concentration: |X.Y| <= 5 sqrt(m) sx sy in >= 99% of trials") {
    const int m = 128;
    const double sx = 0.7, sy = 1.3;
    std::mt19937_64 rng(derive_seed(123, "lemma1"));
    std::normal_distribution<double> gx(0.0, sx), gy(0.0, sy);
    int ok = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        double dot = 0.0;
        for (int i = 0; i < m; ++i) dot += gx(rng) * gy(rng);
        if (std::abs(dot) <= 5.0 * std::sqrt(double(m)) * sx * sy) ++ok;
    }
    CHECK(ok >= trials * 99 / 100);
}

TEST_CASE("Lemma 2 concentration: |v.Y| <= 5 sy in >= 99% of trials") {
    const double sy = 0.9;
    std::mt19937_64 rng(derive_seed(123, "lemma2"));
    std::normal_distribution<double> gy(0.0, sy);
    int ok = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        // standard-basis v picks a single coordinate
        double dot = gy(rng);
        if (std::abs(dot) <= 5.0 * sy) ++ok;
    }
    CHECK(ok >= trials * 99 / 100);
}

TEST_CASE("dataset dump has the documented schema") {
    FeatureBank bank = make_feature_bank(2, 3);
    PatchDataset ds = sample_dataset(bank, 3, make_rho({0.5, 0.5}), 1.0, 1);
    std::string path = "dump_test.csv";
    dump_dataset_csv(ds, path);
    std::string body = [&] {
        FILE* f = fopen(path.c_str(), "rb");
        REQUIRE(f);
        char buf[256];
        std::string s;
        size_t n;
        while ((n = fread(buf, 1, sizeof buf, f)) > 0) s.append(buf, n);
        fclose(f);
        return s;
    }();
    CHECK(body.rfind("sample,feature_index,label,noise_id\n", 0) == 0);
    std::remove(path.c_str());
}
