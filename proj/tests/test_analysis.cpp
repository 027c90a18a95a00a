#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dartlab/analysis.hpp"
#include "dartlab/errors.hpp"
#include "dartlab/rng.hpp"

using namespace dartlab;

TEST_CASE("loss_barrier: identical endpoints give exactly zero excess") {
    Eigen::VectorXd theta = Eigen::Vector3d(0.3, -1.2, 7.0);
    auto loss = [](const Eigen::VectorXd& p) { return std::sin(p[0]) + p.squaredNorm(); };
    BarrierProfile prof = loss_barrier(theta, theta, loss, 21);
    CHECK(prof.barrier_excess == 0.0);
    CHECK(prof.max_loss == loss(theta));
    CHECK(prof.alphas.size() == 21);
}

TEST_CASE("loss_barrier: convex loss has no excess; nonconvex does") {
    auto quad = [](const Eigen::VectorXd& p) { return (p - Eigen::Vector2d(1, 1)).squaredNorm(); };
    BarrierProfile prof =
        loss_barrier(Eigen::Vector2d(0, 0), Eigen::Vector2d(3, 3), quad, 31);
    CHECK(prof.barrier_excess == 0.0);  // max sits at an endpoint grid node

    // a bump between two minima produces positive excess
    auto bump = [](const Eigen::VectorXd& p) { return std::exp(-10 * (p[0] - 0.5) * (p[0] - 0.5)); };
    BarrierProfile hill = loss_barrier(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), bump, 41);
    CHECK(hill.barrier_excess > 0.5);
}

TEST_CASE("loss_barrier symmetry: mirrored grids agree exactly") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss;
    Eigen::VectorXd a(6), b(6);
    for (int i = 0; i < 6; ++i) {
        a[i] = gauss(rng);
        b[i] = gauss(rng);
    }
    auto loss = [](const Eigen::VectorXd& p) {
        return std::cos(p.sum()) + 0.1 * p.squaredNorm() + std::abs(p[2]);
    };
    BarrierProfile ab = loss_barrier(a, b, loss, 21);
    BarrierProfile ba = loss_barrier(b, a, loss, 21);
    CHECK(ab.max_loss == ba.max_loss);
    CHECK(ab.barrier_excess == ba.barrier_excess);

    CHECK_THROWS_AS(loss_barrier(a, Eigen::VectorXd::Zero(2), loss, 21), ShapeError);
    CHECK_THROWS_AS(loss_barrier(a, b, loss, 1), ConfigError);
}

namespace {

std::vector<AlignmentSnapshot> ramp_series(double t_step, double v_step, int count,
                                           double start = 0.0) {
    std::vector<AlignmentSnapshot> series;
    for (int i = 0; i < count; ++i) {
        AlignmentSnapshot s;
        s.t = i * t_step;
        s.alphas = Eigen::VectorXd::Constant(1, start + i * v_step);
        s.noise_coeffs = Eigen::VectorXd::Constant(1, start + i * v_step);
        series.push_back(s);
    }
    return series;
}

}  // namespace

TEST_CASE("convergence time: starting above, never crossing, interpolation") {
    auto above = ramp_series(1.0, 0.1, 5, 0.9);
    CHECK(convergence_time_feature(above, 1, 0.5) == 0.0);

    auto flat = ramp_series(1.0, 0.0, 5, 0.1);
    CHECK(std::isinf(convergence_time_feature(flat, 1, 0.5)));

    // linear ramp 0, 0.1, 0.2, ... crossing 0.45 exactly between snapshots
    auto ramp = ramp_series(2.0, 0.1, 10);
    double t = convergence_time_feature(ramp, 1, 0.45);
    CHECK(t == doctest::Approx(9.0));  // value 0.45 at t = 9 by interpolation
    CHECK(convergence_time_noise(ramp, 0, 0.45) == doctest::Approx(9.0));

    CHECK_THROWS_AS(convergence_time_feature({}, 1, 0.5), DomainError);
}

TEST_CASE("convergence time refinement: interpolated crossing is within one period") {
    // dense "truth" vs a coarsened recording of the same curve
    auto value = [](double t) { return 1.0 - std::exp(-t / 7.0); };
    std::vector<AlignmentSnapshot> dense, coarse;
    for (int i = 0; i <= 700; ++i) {
        AlignmentSnapshot s;
        s.t = i * 0.01;
        s.alphas = Eigen::VectorXd::Constant(1, value(s.t));
        dense.push_back(s);
        if (i % 100 == 0) coarse.push_back(s);
    }
    double td = convergence_time_feature(dense, 1, 0.5);
    double tc = convergence_time_feature(coarse, 1, 0.5);
    CHECK(std::abs(td - tc) < 1.0);  // one coarse record_every period
}

TEST_CASE("fit_scaling: exact law, constant series, noise robustness") {
    std::vector<double> xs, ts;
    for (double x : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
        xs.push_back(x);
        ts.push_back(7.0 * std::pow(x, 1.5));
    }
    ScalingFit fit = fit_scaling(xs, ts);
    CHECK(fit.slope == doctest::Approx(1.5).epsilon(1e-9));
    CHECK(fit.intercept == doctest::Approx(std::log(7.0)).epsilon(1e-9));
    CHECK(fit.r2 == doctest::Approx(1.0));

    std::vector<double> flat(ts.size(), 3.0);
    ScalingFit f0 = fit_scaling(xs, flat);
    CHECK(f0.slope == doctest::Approx(0.0));
    CHECK(f0.r2 == 1.0);  // residual-free constant fit

    // 5% multiplicative noise keeps the slope within +-0.1 (100 trials)
    std::mt19937_64 rng(derive_seed(5, "fitnoise"));
    std::normal_distribution<double> gauss(0.0, 0.05);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> noisy;
        for (double t : ts) noisy.push_back(t * std::exp(gauss(rng)));
        ScalingFit f = fit_scaling(xs, noisy);
        CHECK(std::abs(f.slope - 1.5) < 0.1);
    }

    CHECK_THROWS_AS(fit_scaling({1.0, 2.0}, {1.0, 2.0}), DomainError);
    CHECK_THROWS_AS(fit_scaling({1.0, -2.0, 3.0}, {1.0, 2.0, 3.0}), DomainError);
    CHECK_THROWS_AS(fit_scaling({1.0, 2.0, 3.0}, {1.0, 0.0, 3.0}), DomainError);
}

TEST_CASE("worst_case_flatness: zero radius, probe monotonicity, finds a known bump") {
    Eigen::VectorXd theta = Eigen::Vector2d(0.0, 0.0);
    LossGradFn quad = [](const Eigen::VectorXd& p, Eigen::VectorXd* g) {
        if (g) *g = 2.0 * p;
        return p.squaredNorm();
    };
    CHECK(worst_case_flatness(theta, quad, 0.0, 10, 5, 1) == 0.0);

    double w5 = worst_case_flatness(theta, quad, 0.5, 5, 8, 1);
    double w20 = worst_case_flatness(theta, quad, 0.5, 20, 8, 1);
    CHECK(w20 >= w5);  // probe directions are a deterministic prefix stream
    // quadratic max on the ball of radius 0.5 is 0.25; ascent should get close
    CHECK(w20 == doctest::Approx(0.25).epsilon(0.05));
    CHECK(w20 <= 0.25 + 1e-12);  // lower bound never exceeds the true max
}

TEST_CASE("average_flatness: zero noise, sample-count stabilization, clipping") {
    Eigen::VectorXd theta = Eigen::Vector2d(1.0, -1.0);
    LossFn loss = [](const Eigen::VectorXd& p) { return p.squaredNorm(); };
    CHECK(average_flatness(theta, loss, 0.0, 0.25, 16, 3) == loss(theta));

    double a64 = average_flatness(theta, loss, 0.25, 0.25, 64, 3);
    double a128 = average_flatness(theta, loss, 0.25, 0.25, 128, 3);
    CHECK(std::abs(a128 - a64) / a64 < 0.05);

    // with clipping at radius r the perturbed loss is at most (|theta| + r)^2
    double cap = (theta.norm() + 0.25) * (theta.norm() + 0.25);
    CHECK(a64 <= cap);
    CHECK(a64 >= loss(theta) - 0.25);
}

TEST_CASE("pca_trajectory: collinear points, order invariance, variance bookkeeping") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> gauss;
    Eigen::VectorXd base(20), dir(20);
    for (int i = 0; i < 20; ++i) {
        base[i] = gauss(rng);
        dir[i] = gauss(rng);
    }
    std::vector<Eigen::VectorXd> line;
    for (int i = 0; i < 6; ++i) line.push_back(base + double(i) * dir);
    TrajectoryProjection proj = pca_trajectory(line);
    CHECK(proj.explained_var1 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(proj.explained_var2 == doctest::Approx(0.0).epsilon(1e-9));

    // reconstruction bookkeeping: pairwise inner products in the 2-D
    // projection match the centered Gram up to the unexplained variance
    std::vector<Eigen::VectorXd> cloud;
    for (int i = 0; i < 7; ++i) {
        Eigen::VectorXd v(20);
        for (int j = 0; j < 20; ++j) v[j] = gauss(rng);
        cloud.push_back(v);
    }
    TrajectoryProjection pc = pca_trajectory(cloud);
    Eigen::MatrixXd X(7, 20);
    for (int i = 0; i < 7; ++i) X.row(i) = cloud[i];
    X.rowwise() -= Eigen::RowVectorXd(X.colwise().mean());
    Eigen::MatrixXd G = X * X.transpose();
    Eigen::MatrixXd G2 = pc.coords * pc.coords.transpose();
    double captured = (pc.explained_var1 + pc.explained_var2) * G.trace();
    CHECK(G2.trace() == doctest::Approx(captured).epsilon(1e-8));

    // order invariance up to sign of each axis
    std::vector<Eigen::VectorXd> rev(cloud.rbegin(), cloud.rend());
    TrajectoryProjection pr = pca_trajectory(rev);
    for (int axis = 0; axis < 2; ++axis) {
        Eigen::VectorXd fwd = pc.coords.col(axis);
        Eigen::VectorXd bwd = pr.coords.col(axis).reverse();
        double diff = std::min((fwd - bwd).norm(), (fwd + bwd).norm());
        CHECK(diff < 1e-8);
    }

    CHECK_THROWS_AS(pca_trajectory({base, dir}), DomainError);
}

TEST_CASE("noise_variance_reduction: identical branches and injected i.i.d. noise") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> gauss;
    const int C = 4, d = 60;

    // identical branches: ratio exactly 1
    Eigen::MatrixXd W(C, d);
    for (int c = 0; c < C; ++c)
        for (int j = 0; j < d; ++j) W(c, j) = gauss(rng);
    std::vector<Eigen::VectorXd> eps;
    for (int i = 0; i < 5; ++i) {
        Eigen::VectorXd e(d);
        for (int j = 0; j < d; ++j) e[j] = gauss(rng);
        eps.push_back(e);
    }
    double same = noise_variance_reduction({W, W, W}, {eps, eps, eps});
    CHECK(same == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(noise_variance_reduction({W}, {eps}), DomainError);
}

TEST_CASE("injected i.i.d. noise reaches the 1/m variance law (Monte-Carlo)") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss;
    const int d = 48;
    for (int m : {2, 4, 8}) {
        double acc = 0.0;
        const int trials = 200;
        for (int t = 0; t < trials; ++t) {
            std::vector<Eigen::MatrixXd> Ws;
            std::vector<std::vector<Eigen::VectorXd>> noises;
            for (int j = 0; j < m; ++j) {
                // each branch memorizes its own fresh noise directions
                std::vector<Eigen::VectorXd> eps;
                Eigen::MatrixXd W = Eigen::MatrixXd::Zero(2, d);
                for (int i = 0; i < 3; ++i) {
                    Eigen::VectorXd e(d);
                    for (int k = 0; k < d; ++k) e[k] = gauss(rng);
                    eps.push_back(e);
                    W.row(i % 2) += e.transpose() / e.norm();
                }
                Ws.push_back(W);
                noises.push_back(eps);
            }
            acc += noise_variance_reduction(Ws, noises);
        }
        CHECK(acc / trials == doctest::Approx(1.0 / m).epsilon(0.2));
    }
}

TEST_CASE("spearman: perfect, reversed, ties and infinities") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {9, 7, 5, 3}) == doctest::Approx(-1.0));
    double inf = std::numeric_limits<double>::infinity();
    CHECK(spearman({1, 2, 3, inf}, {1, 2, 3, 4}) == doctest::Approx(1.0));
    CHECK(spearman({1, 1, 2, 3}, {1, 1, 2, 3}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), DomainError);
}

TEST_CASE("sign test tail probabilities") {
    CHECK(sign_test_p(10, 10) == doctest::Approx(std::pow(0.5, 10)));
    CHECK(sign_test_p(9, 10) == doctest::Approx(11.0 / 1024.0));
    CHECK(sign_test_p(0, 10) == doctest::Approx(1.0));
    CHECK(sign_test_p(9, 10) < 0.05);
    CHECK_THROWS_AS(sign_test_p(11, 10), DomainError);
}
