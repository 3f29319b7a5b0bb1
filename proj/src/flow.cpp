#include "fairflow/flow.hpp"

#include "fairflow/errors.hpp"
#include "fairflow/io.hpp"
#include "fairflow/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace fairflow {

namespace {

constexpr char kFlowMagic[] = "FFFLOW";
constexpr std::uint32_t kFlowVersion = 1;

Matrix rows_to_matrix(const std::vector<const std::vector<double>*>& rows, std::size_t d) {
    Matrix m(rows.size(), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(rows[i]->begin(), rows[i]->end(), m.row(i).begin());
    }
    return m;
}

void check_finite(std::span<const double> v, std::size_t layer) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError("non-finite value in flow", layer);
    }
}

std::size_t width_of(const FlowArchitecture& a) { return a.width ? a.width : 2 * a.dim; }

void check_data(const LabeledVectors& data) {
    if (data.vectors.empty()) throw PreconditionError("flow training needs data");
    if (data.vectors.size() != data.groups.size()) throw PreconditionError("vectors/groups size mismatch");
    const std::size_t d = data.dim();
    for (const auto& v : data.vectors) {
        if (v.size() != d) throw DimensionMismatch(d, v.size());
    }
    const bool has_a = std::ranges::count(data.groups, Group::a) > 0;
    const bool has_b = std::ranges::count(data.groups, Group::b) > 0;
    if (!has_a || !has_b) throw PreconditionError("flow training needs both attribute groups");
}

}  // namespace

void validate(const FlowTrainConfig& cfg) {
    if (!(cfg.sigma > 0.0 && cfg.sigma < 1.0)) throw PreconditionError("sigma must lie strictly inside (0, 1)");
    if (cfg.batch_size == 0) throw PreconditionError("batch size must be positive");
    if (!(cfg.noise_std >= 0.0 && std::isfinite(cfg.noise_std))) throw PreconditionError("noise_std must be finite and non-negative");
}

FlowModel::FlowModel(const FlowArchitecture& arch, std::size_t k) : arch_(arch) {
    if (arch_.dim < 2) throw PreconditionError("flow dimension must be at least 2");
    if (arch_.depth == 0) throw PreconditionError("flow depth must be positive");
    set_k(k);
    arch_.width = width_of(arch_);
    std::mt19937_64 rng(arch_.seed);
    const std::size_t d = arch_.dim;
    const std::size_t split = d / 2;
    const std::size_t rest = d - split;
    for (std::size_t b = 0; b < arch_.depth; ++b) {
        CouplingBlock blk;
        blk.perm.resize(d);
        std::iota(blk.perm.begin(), blk.perm.end(), 0);
        std::shuffle(blk.perm.begin(), blk.perm.end(), rng);
        blk.inverse_perm.resize(d);
        for (std::size_t j = 0; j < d; ++j) blk.inverse_perm[blk.perm[j]] = j;
        blk.split = split;
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(split)));
        Matrix w1(split, arch_.width);
        for (double& x : w1.data()) x = normal(rng);
        blk.w1 = nn::Parameter("w1", std::move(w1));
        blk.b1 = nn::Parameter("b1", Matrix(1, arch_.width));
        blk.w2 = nn::Parameter("w2", Matrix(arch_.width, 2 * rest));
        blk.b2 = nn::Parameter("b2", Matrix(1, 2 * rest));
        blocks_.push_back(std::move(blk));
    }
}

void FlowModel::set_k(std::size_t k) {
    if (k < 1 || k >= arch_.dim) {
        throw PreconditionError("attribute block size k must satisfy 1 <= k < d");
    }
    k_ = k;
}

void FlowModel::set_prototypes(std::vector<double> a, std::vector<double> b) {
    if (a.size() != k_) throw DimensionMismatch(k_, a.size());
    if (b.size() != k_) throw DimensionMismatch(k_, b.size());
    check_finite(a, blocks_.size());
    check_finite(b, blocks_.size());
    prototype_a_ = std::move(a);
    prototype_b_ = std::move(b);
}

FlowForward FlowModel::forward(std::span<const double> z) const {
    const std::size_t d = arch_.dim;
    if (z.size() != d) throw DimensionMismatch(d, z.size());
    check_finite(z, 0);
    FlowForward out;
    std::vector<double> x(z.begin(), z.end());
    std::vector<double> u(d), hidden(arch_.width);
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        const CouplingBlock& blk = blocks_[bi];
        const std::size_t split = blk.split;
        const std::size_t rest = d - split;
        for (std::size_t j = 0; j < d; ++j) u[j] = x[blk.perm[j]];
        for (std::size_t h = 0; h < arch_.width; ++h) hidden[h] = blk.b1.value(0, h);
        for (std::size_t i = 0; i < split; ++i) {
            for (std::size_t h = 0; h < arch_.width; ++h) hidden[h] += u[i] * blk.w1.value(i, h);
        }
        for (double& h : hidden) h = std::tanh(h);
        for (std::size_t c = 0; c < rest; ++c) {
            double raw = blk.b2.value(0, c);
            double shift = blk.b2.value(0, rest + c);
            for (std::size_t h = 0; h < arch_.width; ++h) {
                raw += hidden[h] * blk.w2.value(h, c);
                shift += hidden[h] * blk.w2.value(h, rest + c);
            }
            const double s = arch_.scale_bound * std::tanh(raw / arch_.scale_bound);
            u[split + c] = u[split + c] * std::exp(s) + shift;
            out.log_det += s;
        }
        for (std::size_t j = 0; j < d; ++j) x[blk.perm[j]] = u[j];
        check_finite(x, bi);
        if (!std::isfinite(out.log_det)) throw NumericError("non-finite log-determinant", bi);
    }
    out.z_tilde = std::move(x);
    return out;
}

std::vector<double> FlowModel::inverse(std::span<const double> z_tilde) const {
    const std::size_t d = arch_.dim;
    if (z_tilde.size() != d) throw DimensionMismatch(d, z_tilde.size());
    check_finite(z_tilde, blocks_.size());
    std::vector<double> x(z_tilde.begin(), z_tilde.end());
    std::vector<double> u(d), hidden(arch_.width);
    for (std::size_t bi = blocks_.size(); bi-- > 0;) {
        const CouplingBlock& blk = blocks_[bi];
        const std::size_t split = blk.split;
        const std::size_t rest = d - split;
        for (std::size_t j = 0; j < d; ++j) u[j] = x[blk.perm[j]];
        for (std::size_t h = 0; h < arch_.width; ++h) hidden[h] = blk.b1.value(0, h);
        for (std::size_t i = 0; i < split; ++i) {
            for (std::size_t h = 0; h < arch_.width; ++h) hidden[h] += u[i] * blk.w1.value(i, h);
        }
        for (double& h : hidden) h = std::tanh(h);
        for (std::size_t c = 0; c < rest; ++c) {
            double raw = blk.b2.value(0, c);
            double shift = blk.b2.value(0, rest + c);
            for (std::size_t h = 0; h < arch_.width; ++h) {
                raw += hidden[h] * blk.w2.value(h, c);
                shift += hidden[h] * blk.w2.value(h, rest + c);
            }
            const double s = arch_.scale_bound * std::tanh(raw / arch_.scale_bound);
            u[split + c] = (u[split + c] - shift) * std::exp(-s);
        }
        for (std::size_t j = 0; j < d; ++j) x[blk.perm[j]] = u[j];
        check_finite(x, bi);
    }
    return x;
}

double log_standard_normal(std::span<const double> x) {
    double sq = 0.0;
    for (double v : x) sq += v * v;
    return -0.5 * (sq + static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi));
}

double FlowModel::log_likelihood(std::span<const double> z) const {
    const FlowForward f = forward(z);
    return log_standard_normal(f.z_tilde) + f.log_det;
}

FlowModel::BatchOutput FlowModel::forward(nn::Graph& g, nn::Var x) {
    const std::size_t d = arch_.dim;
    if (g.value(x).cols() != d) throw DimensionMismatch(d, g.value(x).cols());
    std::optional<nn::Var> log_det;
    for (CouplingBlock& blk : blocks_) {
        const std::size_t rest = d - blk.split;
        auto u = g.gather_cols(x, blk.perm);
        auto x1 = g.slice_cols(u, 0, blk.split);
        auto x2 = g.slice_cols(u, blk.split, rest);
        auto hidden = g.tanh(g.add_row(g.matmul(x1, g.param(blk.w1)), g.param(blk.b1)));
        auto st = g.add_row(g.matmul(hidden, g.param(blk.w2)), g.param(blk.b2));
        auto raw = g.slice_cols(st, 0, rest);
        auto shift = g.slice_cols(st, rest, rest);
        auto s = g.scale(g.tanh(g.scale(raw, 1.0 / arch_.scale_bound)), arch_.scale_bound);
        auto y2 = g.add(g.mul(x2, g.exp(s)), shift);
        x = g.gather_cols(g.concat_cols(x1, y2), blk.inverse_perm);
        auto ld = g.row_sum(s);
        log_det = log_det ? g.add(*log_det, ld) : ld;
    }
    return {x, *log_det};
}

std::vector<nn::Parameter*> FlowModel::parameters() {
    std::vector<nn::Parameter*> ps;
    for (auto& b : blocks_) {
        for (auto* p : {&b.w1, &b.b1, &b.w2, &b.b2}) ps.push_back(p);
    }
    return ps;
}

std::string FlowModel::serialize() const {
    io::BinaryWriter w;
    w.raw(kFlowMagic, sizeof kFlowMagic - 1);
    w.u32(kFlowVersion);
    w.str("affine-coupling/tanh-net/clamped-scale");
    w.u64(arch_.dim);
    w.u64(arch_.depth);
    w.u64(arch_.width);
    w.f64(arch_.scale_bound);
    w.u64(arch_.seed);
    w.u64(k_);
    w.str(k_rule);
    w.f64(sigma);
    for (const auto& b : blocks_) {
        w.u64(b.split);
        for (std::size_t p : b.perm) w.u64(p);
        for (const auto* p : {&b.w1, &b.b1, &b.w2, &b.b2}) w.matrix(p->value);
    }
    w.u32(has_prototypes() ? 1 : 0);
    if (has_prototypes()) {
        w.doubles(*prototype_a_);
        w.doubles(*prototype_b_);
    }
    w.doubles(loss_history);
    return w.bytes();
}

FlowModel FlowModel::deserialize(std::string bytes) {
    io::BinaryReader r(std::move(bytes));
    r.expect_magic(std::string_view(kFlowMagic, sizeof kFlowMagic - 1));
    if (r.u32() != kFlowVersion) throw Error("unsupported flow checkpoint version");
    r.str();  // architecture descriptor
    FlowModel m;
    m.arch_.dim = r.u64();
    m.arch_.depth = r.u64();
    m.arch_.width = r.u64();
    m.arch_.scale_bound = r.f64();
    m.arch_.seed = r.u64();
    m.k_ = r.u64();
    if (m.arch_.dim < 2 || m.k_ < 1 || m.k_ >= m.arch_.dim) throw Error("invalid flow checkpoint header");
    m.k_rule = r.str();
    m.sigma = r.f64();
    const std::size_t d = m.arch_.dim;
    for (std::size_t i = 0; i < m.arch_.depth; ++i) {
        CouplingBlock b;
        b.split = r.u64();
        b.perm.resize(d);
        b.inverse_perm.assign(d, d);
        for (auto& p : b.perm) {
            p = r.u64();
            if (p >= d) throw Error("invalid permutation in flow checkpoint");
        }
        for (std::size_t j = 0; j < d; ++j) b.inverse_perm[b.perm[j]] = j;
        if (std::ranges::count(b.inverse_perm, d) != 0) throw Error("invalid permutation in flow checkpoint");
        b.w1 = nn::Parameter("w1", r.matrix());
        b.b1 = nn::Parameter("b1", r.matrix());
        b.w2 = nn::Parameter("w2", r.matrix());
        b.b2 = nn::Parameter("b2", r.matrix());
        const std::size_t rest = d - b.split;
        if (b.w1.value.rows() != b.split || b.w1.value.cols() != m.arch_.width ||
            b.w2.value.rows() != m.arch_.width || b.w2.value.cols() != 2 * rest) {
            throw Error("flow checkpoint shapes do not match header");
        }
        m.blocks_.push_back(std::move(b));
    }
    if (r.u32() == 1) {
        auto a = r.doubles();
        auto b = r.doubles();
        m.set_prototypes(std::move(a), std::move(b));
    }
    m.loss_history = r.doubles();
    return m;
}

void FlowModel::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

FlowModel FlowModel::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

double correlation_penalty(std::span<const double> t1_k, std::span<const double> t2_k, double sigma) {
    if (t1_k.size() != t2_k.size()) throw DimensionMismatch(t1_k.size(), t2_k.size());
    double s = 0.0;
    for (std::size_t i = 0; i < t1_k.size(); ++i) {
        const double diff = t2_k[i] - sigma * t1_k[i];
        s += diff * diff;
    }
    return s / (1.0 - sigma * sigma);
}

double pair_loss(const FlowModel& t, std::span<const double> z1, std::span<const double> z2, double sigma) {
    const auto f1 = t.forward(z1);
    const auto f2 = t.forward(z2);
    const std::size_t k = t.k();
    double loss = 0.0;
    for (double v : f1.z_tilde) loss += v * v;
    loss -= f1.log_det;
    for (std::size_t i = k; i < f2.z_tilde.size(); ++i) loss += f2.z_tilde[i] * f2.z_tilde[i];
    loss -= f2.log_det;
    loss += correlation_penalty(std::span(f1.z_tilde).first(k), std::span(f2.z_tilde).first(k), sigma);
    return loss;
}

nn::Var pair_loss(nn::Graph& g, FlowModel& t, const Matrix& z1, const Matrix& z2, double sigma) {
    const std::size_t n = z1.rows();
    const std::size_t d = t.dim();
    const std::size_t k = t.k();
    auto o1 = t.forward(g, g.input(z1));
    auto o2 = t.forward(g, g.input(z2));
    auto full1 = g.sum(g.mul(o1.z_tilde, o1.z_tilde));
    auto rest2 = g.slice_cols(o2.z_tilde, k, d - k);
    auto tail2 = g.sum(g.mul(rest2, rest2));
    auto diff = g.sub(g.slice_cols(o2.z_tilde, 0, k), g.scale(g.slice_cols(o1.z_tilde, 0, k), sigma));
    auto corr = g.scale(g.sum(g.mul(diff, diff)), 1.0 / (1.0 - sigma * sigma));
    auto ld = g.add(g.sum(o1.log_det), g.sum(o2.log_det));
    auto total = g.sub(g.add(g.add(full1, tail2), corr), ld);
    return g.scale(total, 1.0 / static_cast<double>(n));
}

nn::Var nll_loss(nn::Graph& g, FlowModel& t, const Matrix& z) {
    const double n = static_cast<double>(z.rows());
    const double d = static_cast<double>(t.dim());
    auto o = t.forward(g, g.input(z));
    auto sq = g.scale(g.sum(g.mul(o.z_tilde, o.z_tilde)), 0.5);
    auto total = g.sub(sq, g.sum(o.log_det));
    auto mean = g.scale(total, 1.0 / n);
    // constant term keeps the value equal to the true mean NLL
    return g.add(mean, g.input(Matrix(1, 1, 0.5 * d * std::log(2.0 * std::numbers::pi))));
}

void fit_prototypes(FlowModel& t, const LabeledVectors& data) {
    const std::size_t k = t.k();
    std::vector<double> sum_a(k, 0.0), sum_b(k, 0.0);
    std::size_t n_a = 0, n_b = 0;
    for (std::size_t i = 0; i < data.vectors.size(); ++i) {
        const auto f = t.forward(data.vectors[i]);
        auto& sum = data.groups[i] == Group::a ? sum_a : sum_b;
        (data.groups[i] == Group::a ? n_a : n_b) += 1;
        for (std::size_t j = 0; j < k; ++j) sum[j] += f.z_tilde[j];
    }
    if (n_a == 0 || n_b == 0) throw PreconditionError("prototypes need both attribute groups");
    for (double& x : sum_a) x /= static_cast<double>(n_a);
    for (double& x : sum_b) x /= static_cast<double>(n_b);
    t.set_prototypes(std::move(sum_a), std::move(sum_b));
}

FlowModel train_flow(const LabeledVectors& data, std::size_t k, const FlowArchitecture& arch_in,
                     const FlowTrainConfig& cfg) {
    validate(cfg);
    check_data(data);
    FlowArchitecture arch = arch_in;
    arch.dim = data.dim();
    FlowModel model(arch, k);
    model.sigma = cfg.sigma;

    std::vector<std::size_t> idx_a, idx_b;
    for (std::size_t i = 0; i < data.groups.size(); ++i) {
        (data.groups[i] == Group::a ? idx_a : idx_b).push_back(i);
    }
    std::mt19937_64 rng(cfg.seed);
    // Uniform random same-group pairing, redrawn every epoch.
    auto draw_pairs = [&] {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (const auto* idx : {&idx_a, &idx_b}) {
            std::vector<std::size_t> order = *idx;
            std::shuffle(order.begin(), order.end(), rng);
            std::uniform_int_distribution<std::size_t> pick(0, order.size() - 1);
            for (std::size_t i : order) {
                std::size_t j = (*idx)[pick(rng)];
                if (idx->size() > 1) {
                    while (j == i) j = (*idx)[pick(rng)];
                }
                pairs.emplace_back(i, j);
            }
        }
        std::shuffle(pairs.begin(), pairs.end(), rng);
        return pairs;
    };
    auto batch_matrices = [&](const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                              std::size_t start, std::size_t end) {
        std::vector<const std::vector<double>*> r1, r2;
        for (std::size_t i = start; i < end; ++i) {
            r1.push_back(&data.vectors[pairs[i].first]);
            r2.push_back(&data.vectors[pairs[i].second]);
        }
        return std::pair{rows_to_matrix(r1, arch.dim), rows_to_matrix(r2, arch.dim)};
    };
    std::mt19937_64 noise_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> unit(0.0, 1.0);
    auto perturb = [&](Matrix& m) {
        if (cfg.noise_std == 0.0) return;
        for (auto& x : m.data()) x += cfg.noise_std * unit(noise_rng);
    };

    nn::AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg.learning_rate;
    adam_cfg.clip_norm = cfg.clip_norm;
    nn::Adam opt(model.parameters(), adam_cfg);

    {
        const auto pairs = draw_pairs();
        auto [m1, m2] = batch_matrices(pairs, 0, pairs.size());
        nn::Graph g(false);
        model.loss_history.push_back(g.value(pair_loss(g, model, m1, m2, cfg.sigma))(0, 0));
    }
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto pairs = draw_pairs();
        double total = 0.0;
        for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(pairs.size(), start + cfg.batch_size);
            auto [m1, m2] = batch_matrices(pairs, start, end);
            perturb(m1);
            perturb(m2);
            opt.zero_grad();
            nn::Graph g;
            auto loss = pair_loss(g, model, m1, m2, cfg.sigma);
            const double v = g.value(loss)(0, 0);
            if (!std::isfinite(v)) throw DivergenceError("flow training", epoch);
            g.backward(loss);
            opt.step();
            total += v * static_cast<double>(end - start);
        }
        model.loss_history.push_back(total / static_cast<double>(pairs.size()));
    }
    fit_prototypes(model, data);
    return model;
}

FlowModel train_density(const std::vector<std::vector<double>>& data, const FlowArchitecture& arch_in,
                        const FlowTrainConfig& cfg) {
    if (cfg.batch_size == 0) throw PreconditionError("batch size must be positive");
    if (data.empty()) throw PreconditionError("density training needs data");
    FlowArchitecture arch = arch_in;
    arch.dim = data.front().size();
    FlowModel model(arch, 1);
    nn::AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg.learning_rate;
    adam_cfg.clip_norm = cfg.clip_norm;
    nn::Adam opt(model.parameters(), adam_cfg);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const std::vector<double>*> rows;
            for (std::size_t i = start; i < end; ++i) rows.push_back(&data[order[i]]);
            opt.zero_grad();
            nn::Graph g;
            auto loss = nll_loss(g, model, rows_to_matrix(rows, arch.dim));
            const double v = g.value(loss)(0, 0);
            if (!std::isfinite(v)) throw DivergenceError("density training", epoch);
            g.backward(loss);
            opt.step();
            total += v * static_cast<double>(end - start);
        }
        model.loss_history.push_back(total / static_cast<double>(order.size()));
    }
    return model;
}

std::vector<double> variance_ratios(const std::vector<std::vector<double>>& rows,
                                    const std::vector<Group>& groups) {
    const std::size_t d = rows.front().size();
    std::vector<double> ratios(d, 0.0);
    const double n = static_cast<double>(rows.size());
    for (std::size_t j = 0; j < d; ++j) {
        double sum[2] = {0, 0};
        double cnt[2] = {0, 0};
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const int gi = groups[i] == Group::a ? 0 : 1;
            sum[gi] += rows[i][j];
            cnt[gi] += 1;
        }
        const double mean = (sum[0] + sum[1]) / n;
        const double m[2] = {sum[0] / cnt[0], sum[1] / cnt[1]};
        double between = cnt[0] * (m[0] - mean) * (m[0] - mean) + cnt[1] * (m[1] - mean) * (m[1] - mean);
        double within = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const int gi = groups[i] == Group::a ? 0 : 1;
            within += (rows[i][j] - m[gi]) * (rows[i][j] - m[gi]);
        }
        between /= n;
        within /= n;
        ratios[j] = within > 0.0 ? between / within : (between > 0.0 ? INFINITY : 0.0);
    }
    return ratios;
}

KEstimate estimate_k(const LabeledVectors& data, const FlowArchitecture& arch_in,
                     const FlowTrainConfig& cfg, double threshold) {
    check_data(data);
    const std::size_t d = data.dim();
    if (d < 2) throw PreconditionError("k estimation needs d >= 2");
    double total_var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (const auto& v : data.vectors) mean += v[j];
        mean /= static_cast<double>(data.vectors.size());
        for (const auto& v : data.vectors) total_var += (v[j] - mean) * (v[j] - mean);
    }
    if (total_var == 0.0) throw Error("k estimation: data has zero variance");

    const FlowModel prelim = train_flow(data, std::max<std::size_t>(1, d / 2), arch_in, cfg);
    std::vector<std::vector<double>> out;
    out.reserve(data.vectors.size());
    for (const auto& v : data.vectors) out.push_back(prelim.forward(v).z_tilde);
    KEstimate est;
    est.threshold = threshold;
    est.ratios = variance_ratios(out, data.groups);
    const auto above = static_cast<std::size_t>(
        std::ranges::count_if(est.ratios, [&](double r) { return r > threshold; }));
    est.k = std::clamp<std::size_t>(above, 1, d - 1);
    return est;
}

std::vector<double> swap_attribute_block(std::span<const double> z_tilde,
                                         std::span<const double> prototype) {
    if (prototype.size() > z_tilde.size()) throw DimensionMismatch(z_tilde.size(), prototype.size());
    std::vector<double> out(z_tilde.begin(), z_tilde.end());
    std::copy(prototype.begin(), prototype.end(), out.begin());
    return out;
}

std::vector<double> counterfactual_embedding(const FlowModel& t, std::span<const double> z, Group target) {
    const auto& proto = t.prototype(target);
    if (!proto) throw NotFittedError("flow model has no group prototypes");
    return t.inverse(swap_attribute_block(t.forward(z).z_tilde, *proto));
}

std::string decode_word(const VocabularyTable& table, std::span<const double> z, kernels::Exec exec) {
    if (table.words.empty()) throw PreconditionError("decode_word: empty vocabulary table");
    if (z.size() != table.dim()) throw DimensionMismatch(table.dim(), z.size());
    return table.words[kernels::cosine_argmax(table.vectors, table.norms, z, exec)];
}

std::pair<std::string, std::size_t> majority_vote(const std::vector<std::string>& decoded) {
    std::map<std::string, std::size_t> counts;
    for (const auto& w : decoded) ++counts[w];
    std::pair<std::string, std::size_t> best{"", 0};
    for (const auto& [w, c] : counts) {
        if (c > best.second) best = {w, c};  // map order gives the lexicographic tie-break
    }
    return best;
}

}  // namespace fairflow
