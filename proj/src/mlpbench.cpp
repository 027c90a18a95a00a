#include "dartlab/mlpbench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dartlab/analysis.hpp"
#include "dartlab/csvio.hpp"
#include "dartlab/errors.hpp"

namespace dartlab {

namespace {

double softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

BenchDataset concat_datasets(const std::vector<const BenchDataset*>& parts) {
    if (parts.empty()) throw ConfigError("concat needs at least one dataset");
    const int dim = parts.front()->dim();
    long rows = 0;
    for (const BenchDataset* p : parts) {
        if (p->dim() != dim) throw ConfigError("datasets have incompatible dimensions");
        rows += p->n();
    }
    BenchDataset out;
    out.X.resize(rows, dim);
    out.y.resize(rows);
    long base = 0;
    for (const BenchDataset* p : parts) {
        out.X.middleRows(base, p->n()) = p->X;
        out.y.segment(base, p->n()) = p->y;
        base += p->n();
    }
    return out;
}

std::vector<BenchDataset> split_bench(const BenchDataset& ds, int M, std::uint64_t seed) {
    if (M < 1 || M > ds.n()) throw ConfigError("bad split count");
    std::vector<int> order(ds.n());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const int block = ds.n() / M;
    std::vector<BenchDataset> parts(M);
    for (int b = 0; b < M; ++b) {
        parts[b].X.resize(block, ds.dim());
        parts[b].y.resize(block);
        for (int i = 0; i < block; ++i) {
            parts[b].X.row(i) = ds.X.row(order[b * block + i]);
            parts[b].y[i] = ds.y[order[b * block + i]];
        }
    }
    return parts;
}

void TaskConfig::validate() const {
    if (robust1_len < 1 || robust2_len < 1) throw ConfigError("robust blocks must be nonempty");
    if (spurious_rate < 0.5 || spurious_rate > 1.0)
        throw ConfigError("spurious rate must lie in [0.5, 1]");
    if (label_noise_rate < 0.0 || label_noise_rate >= 0.5)
        throw ConfigError("label noise rate must lie in [0, 0.5)");
    if (n_train < 1 || n_test < 1) throw ConfigError("task needs train and test samples");
}

namespace {

BenchDataset draw_split(const TaskConfig& cfg, int n, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    BenchDataset ds;
    ds.X.resize(n, cfg.dim());
    ds.y.resize(n);
    for (int i = 0; i < n; ++i) {
        int y = (i % 2 == 0) ? 1 : -1;
        ds.y[i] = y;
        for (int j = 0; j < cfg.dim(); ++j) ds.X(i, j) = gauss(rng);
        for (int j = 0; j < cfg.robust1_len; ++j)
            ds.X(i, cfg.robust1_start + j) += y * cfg.robust_mean;
        for (int j = 0; j < cfg.robust2_len; ++j)
            ds.X(i, cfg.robust2_start + j) += y * cfg.robust_mean;
        int s = (unif(rng) < cfg.spurious_rate) ? y : -y;
        for (int j = 0; j < cfg.spurious_len; ++j)
            ds.X(i, cfg.spurious_start + j) += s * cfg.spurious_mean;
    }
    return ds;
}

}  // namespace

SyntheticTask make_task(const TaskConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SyntheticTask task;
    task.cfg = cfg;
    task.seed = seed;
    std::mt19937_64 train_rng(derive_seed(seed, "task:train"));
    std::mt19937_64 test_rng(derive_seed(seed, "task:test"));
    task.train = draw_split(cfg, cfg.n_train, train_rng);
    task.test = draw_split(cfg, cfg.n_test, test_rng);
    if (cfg.label_noise_rate > 0.0) {
        // Training labels only; the inputs keep their clean-label pattern, so
        // flipped samples can only be fit by memorization.
        std::mt19937_64 flip_rng(derive_seed(seed, "task:labelnoise"));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int i = 0; i < task.train.n(); ++i)
            if (unif(flip_rng) < cfg.label_noise_rate) task.train.y[i] = -task.train.y[i];
    }
    return task;
}

BenchDataset corrupt(const BenchDataset& ds, const Corruption& c) {
    if (c.block_start < 0 || c.block_start + c.block_len > ds.dim())
        throw ConfigError("corruption block outside input dimensions");
    BenchDataset out = ds;
    if (c.strength == 0.0) return out;
    switch (c.kind) {
        case Corruption::Kind::mask:
            out.X.middleCols(c.block_start, c.block_len).setZero();
            break;
        case Corruption::Kind::jitter: {
            std::mt19937_64 rng(c.seed);
            std::normal_distribution<double> gauss(0.0, c.strength);
            for (int i = 0; i < out.n(); ++i)
                for (int j = 0; j < c.block_len; ++j) out.X(i, c.block_start + j) += gauss(rng);
            break;
        }
        case Corruption::Kind::permute: {
            std::vector<int> perm(c.block_len);
            std::iota(perm.begin(), perm.end(), 0);
            std::mt19937_64 rng(c.seed);
            std::shuffle(perm.begin(), perm.end(), rng);
            Eigen::MatrixXd block = out.X.middleCols(c.block_start, c.block_len);
            for (int j = 0; j < c.block_len; ++j)
                out.X.col(c.block_start + j) = block.col(perm[j]);
            break;
        }
    }
    return out;
}

Eigen::VectorXd MlpModel::flat() const {
    Eigen::VectorXd v(param_count());
    long at = 0;
    v.segment(at, W1.size()) = Eigen::Map<const Eigen::VectorXd>(W1.data(), W1.size());
    at += W1.size();
    v.segment(at, b1.size()) = b1;
    at += b1.size();
    v.segment(at, w2.size()) = w2;
    at += w2.size();
    v[at] = b2;
    return v;
}

void MlpModel::set_flat(const Eigen::VectorXd& v) {
    if (v.size() != param_count()) throw ShapeError("mlp parameter length mismatch");
    long at = 0;
    W1 = Eigen::Map<const Eigen::MatrixXd>(v.data() + at, W1.rows(), W1.cols());
    at += W1.size();
    b1 = v.segment(at, b1.size());
    at += b1.size();
    w2 = v.segment(at, w2.size());
    at += w2.size();
    b2 = v[at];
}

Eigen::VectorXd MlpModel::logits(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd H = (X * W1.transpose()).rowwise() + b1.transpose();
    H = H.cwiseMax(0.0);
    return (H * w2).array() + b2;
}

MlpModel init_mlp(int in, int hidden, std::uint64_t seed) {
    if (in < 1 || hidden < 1) throw ConfigError("mlp needs positive layer sizes");
    MlpModel m;
    m.in = in;
    m.hidden = hidden;
    m.W1.resize(hidden, in);
    m.b1 = Eigen::VectorXd::Zero(hidden);
    m.w2.resize(hidden);
    m.b2 = 0.0;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g1(0.0, 1.0 / std::sqrt(double(in)));
    std::normal_distribution<double> g2(0.0, 1.0 / std::sqrt(double(hidden)));
    for (int i = 0; i < hidden; ++i)
        for (int j = 0; j < in; ++j) m.W1(i, j) = g1(rng);
    for (int i = 0; i < hidden; ++i) m.w2[i] = g2(rng);
    return m;
}

MlpTrainable::MlpTrainable(MlpModel model, std::shared_ptr<const BenchDataset> ds)
    : model_(std::move(model)), ds_(std::move(ds)) {
    if (ds_->dim() != model_.in) throw ShapeError("dataset dimension does not match model");
}

Eigen::VectorXd MlpTrainable::get_params() const { return model_.flat(); }
void MlpTrainable::set_params(const Eigen::VectorXd& params) { model_.set_flat(params); }
int MlpTrainable::sample_count() const { return ds_->n(); }

double MlpTrainable::loss_and_grad(std::span<const int> batch, Eigen::VectorXd& grad) const {
    if (batch.empty()) throw DomainError("loss_and_grad needs a nonempty batch");
    const int b = static_cast<int>(batch.size());
    Eigen::MatrixXd X(b, model_.in);
    Eigen::VectorXd y(b);
    for (int i = 0; i < b; ++i) {
        X.row(i) = ds_->X.row(batch[i]);
        y[i] = ds_->y[batch[i]];
    }
    Eigen::MatrixXd pre = (X * model_.W1.transpose()).rowwise() + model_.b1.transpose();
    Eigen::MatrixXd H = pre.cwiseMax(0.0);
    Eigen::VectorXd F = (H * model_.w2).array() + model_.b2;

    double loss = 0.0;
    Eigen::VectorXd dF(b);
    for (int i = 0; i < b; ++i) {
        double u = y[i] * F[i];
        loss += softplus(-u);
        // d softplus(-u)/dF = -y / (1 + e^u)
        dF[i] = -y[i] / (1.0 + std::exp(u)) / b;
    }
    loss /= b;

    Eigen::VectorXd dw2 = H.transpose() * dF;
    double db2 = dF.sum();
    Eigen::MatrixXd dH = dF * model_.w2.transpose();
    dH = (pre.array() > 0.0).select(dH, 0.0);
    Eigen::MatrixXd dW1 = dH.transpose() * X;
    Eigen::VectorXd db1 = dH.colwise().sum();

    grad.resize(model_.param_count());
    long at = 0;
    grad.segment(at, dW1.size()) = Eigen::Map<const Eigen::VectorXd>(dW1.data(), dW1.size());
    at += dW1.size();
    grad.segment(at, db1.size()) = db1;
    at += db1.size();
    grad.segment(at, dw2.size()) = dw2;
    at += dw2.size();
    grad[at] = db2;
    return loss;
}

double MlpTrainable::loss(std::span<const int> batch) const {
    if (batch.empty()) throw DomainError("loss needs a nonempty batch");
    double loss = 0.0;
    Eigen::MatrixXd X(batch.size(), model_.in);
    for (std::size_t i = 0; i < batch.size(); ++i) X.row(i) = ds_->X.row(batch[i]);
    Eigen::VectorXd F = model_.logits(X);
    for (std::size_t i = 0; i < batch.size(); ++i)
        loss += softplus(-double(ds_->y[batch[i]]) * F[i]);
    return loss / batch.size();
}

double MlpTrainable::accuracy(std::span<const int> batch) const {
    if (batch.empty()) throw DomainError("accuracy needs a nonempty batch");
    Eigen::MatrixXd X(batch.size(), model_.in);
    for (std::size_t i = 0; i < batch.size(); ++i) X.row(i) = ds_->X.row(batch[i]);
    Eigen::VectorXd F = model_.logits(X);
    int hits = 0;
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (double(ds_->y[batch[i]]) * F[i] > 0.0) ++hits;
    return double(hits) / batch.size();
}

std::unique_ptr<Trainable> MlpTrainable::clone() const {
    return std::make_unique<MlpTrainable>(model_, ds_);
}

double evaluate(const MlpModel& model, const BenchDataset& ds, const Corruption* c) {
    if (ds.n() == 0) throw DomainError("evaluate needs a nonempty set");
    const BenchDataset* eval = &ds;
    BenchDataset owned;
    if (c) {
        owned = corrupt(ds, *c);
        eval = &owned;
    }
    Eigen::VectorXd F = model.logits(eval->X);
    int hits = 0;
    for (int i = 0; i < eval->n(); ++i)
        if (double(eval->y[i]) * F[i] > 0.0) ++hits;
    return double(hits) / eval->n();
}

double mlp_loss(const MlpModel& model, const BenchDataset& ds) {
    Eigen::VectorXd F = model.logits(ds.X);
    double loss = 0.0;
    for (int i = 0; i < ds.n(); ++i) loss += softplus(-double(ds.y[i]) * F[i]);
    return loss / ds.n();
}

std::vector<Corruption> default_corruptions(const TaskConfig& cfg, std::uint64_t seed) {
    Corruption mask1;
    mask1.kind = Corruption::Kind::mask;
    mask1.block_start = cfg.robust1_start;
    mask1.block_len = cfg.robust1_len;
    mask1.name = "mask_r1";
    mask1.seed = derive_seed(seed, "corruption:mask_r1");

    Corruption mask2 = mask1;
    mask2.block_start = cfg.robust2_start;
    mask2.block_len = cfg.robust2_len;
    mask2.name = "mask_r2";
    mask2.seed = derive_seed(seed, "corruption:mask_r2");

    // Masking the spurious and noise coordinates forces reliance on the
    // robust blocks alone, the way the other two masks force reliance away
    // from one robust block each.
    Corruption mask_aux = mask1;
    mask_aux.block_start = cfg.spurious_start;
    mask_aux.block_len = cfg.spurious_len + cfg.noise_len;
    mask_aux.name = "mask_aux";
    mask_aux.seed = derive_seed(seed, "corruption:mask_aux");
    return {mask1, mask2, mask_aux};
}

Corruption default_same_arm_corruption(const TaskConfig& cfg, std::uint64_t seed) {
    Corruption jitter;
    jitter.kind = Corruption::Kind::jitter;
    jitter.block_start = 0;
    jitter.block_len = cfg.dim();
    jitter.strength = 1.5;
    jitter.name = "jitter";
    jitter.seed = derive_seed(seed, "corruption:jitter");
    return jitter;
}

double CrossTable::mean_excluding(int arm, int own_column) const {
    double sum = 0.0;
    int count = 0;
    for (int c = 0; c < acc.cols(); ++c) {
        if (c == own_column) continue;
        sum += acc(arm, c);
        ++count;
    }
    return count ? sum / count : 0.0;
}

void CrossTable::to_csv(const std::string& path) const {
    std::vector<std::string> schema{"arm"};
    for (const std::string& c : columns) schema.push_back(c);
    CsvWriter csv(schema, path);
    for (std::size_t r = 0; r < arms.size(); ++r) {
        std::vector<CsvCell> row{arms[r]};
        for (int c = 0; c < acc.cols(); ++c) row.push_back(acc(r, c));
        csv.row(row);
    }
    csv.close();
}

namespace {

struct Deployed {
    Eigen::VectorXd params;  // EMA shadow when available, else final
    Eigen::VectorXd final_params;
    RunRecord record;
};

MlpModel with_params(const MlpModel& proto, const Eigen::VectorXd& params) {
    MlpModel m = proto;
    m.set_flat(params);
    return m;
}

// ERM + EMA on a fixed dataset under the shared schedule.
Deployed train_erm_arm(const MlpModel& init, const BenchDataset& data, const BenchRunConfig& cfg,
                       std::uint64_t seed) {
    MlpTrainable t(init, std::make_shared<BenchDataset>(data));
    SgdOptions opts;
    opts.batch_size = cfg.batch_size;
    opts.momentum = cfg.momentum;
    opts.weight_decay = cfg.weight_decay;
    opts.ema_decay = cfg.ema_decay;
    RunRecord rec = erm_train(
        t, 1, cfg.epochs, [&](int e) { return cosine_lr(e, cfg.epochs, cfg.lr_max); }, opts,
        seed);
    Eigen::VectorXd deployed = rec.ema_params ? *rec.ema_params : rec.final_params;
    return {deployed, rec.final_params, std::move(rec)};
}

Deployed train_dart_arm(const MlpModel& init, const std::vector<BenchDataset>& branch_data,
                        const BenchRunConfig& cfg, std::uint64_t master_seed) {
    TrainConfig tc;
    tc.E = cfg.epochs;
    tc.E_prime = cfg.warmup_epochs;
    tc.M = static_cast<int>(branch_data.size());
    tc.lambda = cfg.lambda;
    tc.lr_max = cfg.lr_max;
    tc.batch_size = cfg.batch_size;
    tc.master_seed = master_seed;
    tc.momentum = cfg.momentum;
    tc.weight_decay = cfg.weight_decay;
    tc.ema_decay = cfg.ema_decay;
    auto factory = [&](const BenchDataset& d) -> std::unique_ptr<Trainable> {
        return std::make_unique<MlpTrainable>(init, std::make_shared<BenchDataset>(d));
    };
    auto [params, rec] = dart_train(factory, branch_data, tc);
    Eigen::VectorXd deployed = rec.ema_params ? *rec.ema_params : params;
    return {deployed, params, std::move(rec)};
}

}  // namespace

MtBenchResult run_mt_vs_dart(const SyntheticTask& task, const std::vector<Corruption>& corruptions,
                             const Corruption& same_arm, const BenchRunConfig& cfg) {
    if (corruptions.size() < 2) throw ConfigError("benchmark needs at least 2 corruptions");
    const int A = static_cast<int>(corruptions.size());
    RngPolicy rng{cfg.master_seed};
    MlpModel init = init_mlp(task.cfg.dim(), cfg.hidden, rng.derive("init"));

    // Mixed-training set: per-sample uniform corruption assignment.
    BenchDataset mt_data = task.train;
    {
        std::mt19937_64 assign(rng.derive("mt-assign"));
        std::uniform_int_distribution<int> pick(0, A - 1);
        std::vector<BenchDataset> corrupted;
        for (const Corruption& c : corruptions) corrupted.push_back(corrupt(task.train, c));
        for (int i = 0; i < mt_data.n(); ++i) mt_data.X.row(i) = corrupted[pick(assign)].X.row(i);
    }

    // DART branch data: disjoint splits, one corruption per branch.
    std::vector<BenchDataset> splits = split_bench(task.train, A, rng.derive("split"));
    std::vector<BenchDataset> diverse;
    for (int a = 0; a < A; ++a) diverse.push_back(corrupt(splits[a], corruptions[a]));
    // Same-arm branches split one corrupted copy, so they and the matching
    // ERM arm train on the same realization of the corruption.
    std::vector<BenchDataset> same =
        split_bench(corrupt(task.train, same_arm), cfg.same_arm_branches, rng.derive("split:same"));

    MtBenchResult res;
    CrossTable& table = res.table;
    table.columns.push_back("clean");
    for (const Corruption& c : corruptions) table.columns.push_back(c.name);

    std::vector<Deployed> deployed;
    res.expert_rows_begin = 0;
    for (int a = 0; a < A; ++a) {
        table.arms.push_back("expert_" + corruptions[a].name);
        deployed.push_back(train_erm_arm(init, corrupt(task.train, corruptions[a]), cfg,
                                         rng.derive("expert:" + std::to_string(a))));
    }
    res.mt_row = static_cast<int>(table.arms.size());
    table.arms.push_back("mixed_training");
    deployed.push_back(train_erm_arm(init, mt_data, cfg, rng.derive("mt")));

    res.dart_mixed_row = static_cast<int>(table.arms.size());
    table.arms.push_back("dart_diverse");
    deployed.push_back(train_dart_arm(init, diverse, cfg, rng.derive("dart:diverse")));

    res.dart_same_row = static_cast<int>(table.arms.size());
    table.arms.push_back("dart_same_" + same_arm.name);
    deployed.push_back(train_dart_arm(init, same, cfg, rng.derive("dart:same")));

    res.erm_same_row = static_cast<int>(table.arms.size());
    table.arms.push_back("erm_same_" + same_arm.name);
    deployed.push_back(
        train_erm_arm(init, corrupt(task.train, same_arm), cfg, rng.derive("erm:same")));

    table.acc.resize(table.arms.size(), A + 1);
    MlpModel proto = init;
    for (std::size_t r = 0; r < deployed.size(); ++r) {
        MlpModel m = with_params(proto, deployed[r].params);
        table.acc(r, 0) = evaluate(m, task.test);
        for (int a = 0; a < A; ++a) table.acc(r, a + 1) = evaluate(m, task.test, &corruptions[a]);
        res.records.emplace_back(table.arms[r], std::move(deployed[r].record));
    }
    return res;
}

FlatnessPair run_flatness_pair(const SyntheticTask& task, const std::vector<Corruption>& corruptions,
                               const Corruption& same_arm, const BenchRunConfig& cfg,
                               double radius, double noise_std, int probes, int ascent_steps,
                               int noise_samples) {
    RngPolicy rng{cfg.master_seed};
    MlpModel init = init_mlp(task.cfg.dim(), cfg.hidden, rng.derive("init"));
    const Corruption& c = same_arm;
    BenchDataset train_c = corrupt(task.train, c);

    Deployed erm = train_erm_arm(init, train_c, cfg, rng.derive("flat:erm"));
    std::vector<BenchDataset> branches =
        split_bench(train_c, cfg.same_arm_branches, rng.derive("split"));
    Deployed dart = train_dart_arm(init, branches, cfg, rng.derive("flat:dart"));

    auto train_view = std::make_shared<BenchDataset>(train_c);
    auto loss_of = [&](const Eigen::VectorXd& p) {
        MlpModel m = init;
        m.set_flat(p);
        return mlp_loss(m, *train_view);
    };
    auto loss_grad = [&](const Eigen::VectorXd& p, Eigen::VectorXd* g) {
        MlpTrainable t(init, train_view);
        t.set_params(p);
        std::vector<int> all(train_view->n());
        std::iota(all.begin(), all.end(), 0);
        if (!g) return t.loss(all);
        return t.loss_and_grad(all, *g);
    };

    // Flatness is probed at the converged (final) models: the desk-scale EMA
    // blend sits at a different train-loss scale and would confound the
    // perturbation comparison.
    FlatnessPair out;
    out.erm_train = loss_of(erm.final_params);
    out.dart_train = loss_of(dart.final_params);
    out.erm_worst = worst_case_flatness(erm.final_params, loss_grad, radius, probes, ascent_steps,
                                        rng.derive("probe:erm"));
    out.dart_worst = worst_case_flatness(dart.final_params, loss_grad, radius, probes,
                                         ascent_steps, rng.derive("probe:dart"));
    out.erm_avg = average_flatness(erm.final_params, loss_of, noise_std, radius, noise_samples,
                                   rng.derive("avg:erm"));
    out.dart_avg = average_flatness(dart.final_params, loss_of, noise_std, radius, noise_samples,
                                    rng.derive("avg:dart"));
    return out;
}

}  // namespace dartlab
