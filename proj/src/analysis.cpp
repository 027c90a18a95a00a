#include "dartlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "dartlab/csvio.hpp"
#include "dartlab/errors.hpp"
#include "dartlab/rng.hpp"

namespace dartlab {

BarrierProfile loss_barrier(const Eigen::VectorXd& params_a, const Eigen::VectorXd& params_b,
                            const LossFn& eval_loss, int grid_size) {
    if (params_a.size() != params_b.size())
        throw ShapeError("endpoint parameter vectors differ in length");
    if (grid_size < 2) throw ConfigError("barrier grid needs at least the two endpoints");

    BarrierProfile out;
    out.alphas.resize(grid_size);
    out.losses.resize(grid_size);
    for (int i = 0; i < grid_size; ++i) out.alphas[i] = double(i) / (grid_size - 1);

    const bool same = params_a == params_b;
    double same_loss = same ? eval_loss(params_a) : 0.0;
    for (int i = 0; i < grid_size; ++i) {
        if (same) {
            out.losses[i] = same_loss;
            continue;
        }
        // Weight on B is taken from the mirrored grid entry so that the
        // evaluated points of barrier(A,B) and barrier(B,A) coincide exactly.
        double wa = out.alphas[i];
        double wb = out.alphas[grid_size - 1 - i];
        out.losses[i] = eval_loss(wa * params_a + wb * params_b);
    }
    out.max_loss = out.losses.maxCoeff();
    out.barrier_excess = out.max_loss - std::max(out.losses[0], out.losses[grid_size - 1]);
    return out;
}

namespace {

double crossing_time(const std::vector<AlignmentSnapshot>& series,
                     const std::function<double(const AlignmentSnapshot&)>& value,
                     double theta) {
    if (series.empty()) throw DomainError("convergence time undefined for an empty series");
    if (value(series.front()) >= theta) return series.front().t;
    for (std::size_t i = 1; i < series.size(); ++i) {
        double v0 = value(series[i - 1]);
        double v1 = value(series[i]);
        if (v1 >= theta) {
            double t0 = series[i - 1].t, t1 = series[i].t;
            if (v1 == v0) return t1;
            double f = (theta - v0) / (v1 - v0);
            return t0 + f * (t1 - t0);
        }
    }
    return std::numeric_limits<double>::infinity();
}

}  // namespace

double convergence_time_feature(const std::vector<AlignmentSnapshot>& series, int feature_k,
                                double theta_conv) {
    return crossing_time(
        series, [&](const AlignmentSnapshot& s) { return s.alphas[feature_k - 1]; }, theta_conv);
}

double convergence_time_noise(const std::vector<AlignmentSnapshot>& series, int tracked_index,
                              double theta_conv) {
    return crossing_time(
        series, [&](const AlignmentSnapshot& s) { return s.noise_coeffs[tracked_index]; },
        theta_conv);
}

ScalingFit fit_scaling(const std::vector<double>& xs, const std::vector<double>& ts) {
    if (xs.size() != ts.size()) throw ShapeError("xs and ts differ in length");
    if (xs.size() < 3) throw DomainError("scaling fit needs at least 3 points");
    const int n = static_cast<int>(xs.size());
    Eigen::VectorXd lx(n), lt(n);
    for (int i = 0; i < n; ++i) {
        if (!(xs[i] > 0.0) || !(ts[i] > 0.0) || !std::isfinite(xs[i]) || !std::isfinite(ts[i]))
            throw DomainError("scaling fit requires positive finite xs and ts");
        lx[i] = std::log(xs[i]);
        lt[i] = std::log(ts[i]);
    }
    double mx = lx.mean(), mt = lt.mean();
    double sxy = ((lx.array() - mx) * (lt.array() - mt)).sum();
    double sxx = ((lx.array() - mx).square()).sum();
    if (sxx == 0.0) throw DomainError("scaling fit requires at least two distinct xs");

    ScalingFit fit;
    fit.points = n;
    fit.slope = sxy / sxx;
    fit.intercept = mt - fit.slope * mx;
    double ss_res = 0.0, ss_tot = 0.0;
    for (int i = 0; i < n; ++i) {
        double pred = fit.intercept + fit.slope * lx[i];
        ss_res += (lt[i] - pred) * (lt[i] - pred);
        ss_tot += (lt[i] - mt) * (lt[i] - mt);
    }
    fit.r2 = ss_tot <= 0.0 ? 1.0 : std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
    return fit;
}

double worst_case_flatness(const Eigen::VectorXd& params, const LossGradFn& loss_grad,
                           double radius, int probes, int ascent_steps, std::uint64_t seed) {
    if (radius < 0.0) throw ConfigError("flatness radius must be nonnegative");
    double best = loss_grad(params, nullptr);
    if (radius == 0.0 || probes <= 0) return best;

    const int P = static_cast<int>(params.size());
    const double step = radius / std::max(ascent_steps, 1);
    for (int p = 0; p < probes; ++p) {
        std::mt19937_64 rng(derive_seed(seed, "probe:" + std::to_string(p)));
        std::normal_distribution<double> gauss(0.0, 1.0);
        Eigen::VectorXd delta(P);
        for (int i = 0; i < P; ++i) delta[i] = gauss(rng);
        double norm = delta.norm();
        if (norm == 0.0) continue;
        delta *= radius / norm;

        Eigen::VectorXd grad(P);
        for (int it = 0; it <= ascent_steps; ++it) {
            double loss = loss_grad(params + delta, &grad);
            best = std::max(best, loss);
            if (it == ascent_steps) break;
            double gn = grad.norm();
            if (gn == 0.0) break;
            delta += step * grad / gn;
            double dn = delta.norm();
            if (dn > radius) delta *= radius / dn;
        }
    }
    return best;
}

double average_flatness(const Eigen::VectorXd& params, const LossFn& eval_loss, double noise_std,
                        double radius, int samples, std::uint64_t seed) {
    if (samples < 1) throw ConfigError("average flatness needs at least one sample");
    if (noise_std == 0.0) return eval_loss(params);
    const int P = static_cast<int>(params.size());
    double sum = 0.0;
    for (int s = 0; s < samples; ++s) {
        std::mt19937_64 rng(derive_seed(seed, "noise:" + std::to_string(s)));
        std::normal_distribution<double> gauss(0.0, noise_std);
        Eigen::VectorXd delta(P);
        for (int i = 0; i < P; ++i) delta[i] = gauss(rng);
        double dn = delta.norm();
        if (dn > radius && dn > 0.0) delta *= radius / dn;
        sum += eval_loss(params + delta);
    }
    return sum / samples;
}

TrajectoryProjection pca_trajectory(const std::vector<Eigen::VectorXd>& checkpoints,
                                    const std::vector<std::string>& ids) {
    const int N = static_cast<int>(checkpoints.size());
    if (N < 3) throw DomainError("pca_trajectory needs at least 3 checkpoints");
    const long P = checkpoints[0].size();
    for (const auto& c : checkpoints)
        if (c.size() != P) throw ShapeError("checkpoints differ in parameter length");

    Eigen::MatrixXd X(N, P);
    for (int i = 0; i < N; ++i) X.row(i) = checkpoints[i];
    Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;

    // Gram-based PCA: N is small even when P is large.
    Eigen::MatrixXd G = X * X.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
    Eigen::VectorXd evals = eig.eigenvalues();   // ascending
    Eigen::MatrixXd evecs = eig.eigenvectors();

    double total = std::max(evals.sum(), 0.0);
    TrajectoryProjection out;
    out.coords.resize(N, 2);
    for (int comp = 0; comp < 2; ++comp) {
        int idx = N - 1 - comp;
        double lam = std::max(evals[idx], 0.0);
        // coordinates = eigvec * sqrt(lambda) reproduce X's inner products
        out.coords.col(comp) = evecs.col(idx) * std::sqrt(lam);
        (comp == 0 ? out.explained_var1 : out.explained_var2) =
            total > 0.0 ? lam / total : 0.0;
    }
    out.ids.resize(N);
    for (int i = 0; i < N; ++i)
        out.ids[i] = i < static_cast<int>(ids.size()) ? ids[i] : std::to_string(i);
    return out;
}

void TrajectoryProjection::to_csv(const std::string& path) const {
    CsvWriter csv({"id", "x", "y", "explained_var1", "explained_var2"}, path);
    for (int i = 0; i < coords.rows(); ++i)
        csv.row({ids[i], coords(i, 0), coords(i, 1), explained_var1, explained_var2});
    csv.close();
}

double noise_variance_reduction(const std::vector<Eigen::MatrixXd>& branch_weights,
                                const std::vector<std::vector<Eigen::VectorXd>>& branch_noise) {
    const int m = static_cast<int>(branch_weights.size());
    if (m < 2) throw DomainError("noise variance reduction needs at least 2 branches");
    if (branch_noise.size() != branch_weights.size())
        throw ShapeError("need one noise set per branch");

    auto noise_component = [](const Eigen::MatrixXd& W,
                              const std::vector<Eigen::VectorXd>& noise) {
        Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(W.rows(), W.cols());
        for (const Eigen::VectorXd& eps : noise) {
            double nn = eps.squaredNorm();
            if (nn == 0.0) continue;
            comp += (W * eps) * (eps.transpose() / nn);
        }
        return comp;
    };
    auto mean_square = [](const Eigen::MatrixXd& M) { return M.squaredNorm() / M.size(); };

    Eigen::MatrixXd avg = branch_weights[0];
    for (int j = 1; j < m; ++j) avg += branch_weights[j];
    avg /= double(m);

    double branch_var = 0.0;
    std::vector<Eigen::VectorXd> all_noise;
    for (int j = 0; j < m; ++j) {
        branch_var += mean_square(noise_component(branch_weights[j], branch_noise[j]));
        for (const Eigen::VectorXd& eps : branch_noise[j]) {
            // branches sharing a noise pool contribute the same direction once
            bool dup = false;
            for (const Eigen::VectorXd& seen : all_noise)
                if (seen.size() == eps.size() && seen == eps) {
                    dup = true;
                    break;
                }
            if (!dup) all_noise.push_back(eps);
        }
    }
    branch_var /= m;
    if (branch_var == 0.0) throw DomainError("branches carry no noise component");
    return mean_square(noise_component(avg, all_noise)) / branch_var;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw DomainError("spearman needs two equal-length lists of >= 2 values");
    auto ranks = [](const std::vector<double>& v) {
        const int n = static_cast<int>(v.size());
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int i, int j) { return v[i] < v[j]; });
        std::vector<double> r(n);
        int i = 0;
        while (i < n) {
            int j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            double mid = 0.5 * (i + j) + 1.0;  // midrank, 1-based
            for (int k = i; k <= j; ++k) r[idx[k]] = mid;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> ra = ranks(a), rb = ranks(b);
    double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
    double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0.0 || db == 0.0) throw DomainError("spearman undefined for constant ranks");
    return num / std::sqrt(da * db);
}

double sign_test_p(int wins, int trials) {
    if (trials < 1 || wins < 0 || wins > trials) throw DomainError("bad sign test counts");
    // Tail sum with exact binomial coefficients; trials stay small here.
    long double p = 0.0L;
    for (int k = wins; k <= trials; ++k) {
        long double c = 1.0L;
        for (int i = 0; i < k; ++i) c = c * (trials - i) / (i + 1);
        p += c;
    }
    return double(p * std::pow(0.5L, trials));
}

}  // namespace dartlab
