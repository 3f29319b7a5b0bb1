#include "fairflow/nn/graph.hpp"

#include "fairflow/kernels.hpp"

#include <cassert>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fairflow::nn {

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Var Graph::push(Matrix value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, {}});
    return Var{nodes_.size() - 1};
}

Matrix& Graph::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

Var Graph::input(Matrix m) { return push(std::move(m), false); }

Var Graph::param(Parameter& p) {
    Var out = push(p.value, true);
    if (record_) {
        nodes_[out.id].backward = [this, out, &p] {
            const Matrix& g = nodes_[out.id].grad;
            for (std::size_t i = 0; i < g.size(); ++i) p.grad.data()[i] += g.data()[i];
        };
    }
    return out;
}

void Graph::backward(Var out) {
    if (!record_) throw std::logic_error("backward on a non-recording graph");
    assert(nodes_[out.id].value.size() == 1);
    grad_buffer(out.id).fill(1.0);
    for (std::size_t i = out.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.backward && !n.grad.empty()) n.backward();
    }
}

Var Graph::matmul(Var a, Var b) {
    Matrix out;
    kernels::gemm(value(a), value(b), out);
    const bool rg = needs(a) || needs(b);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, b, o] {
            const Matrix& g = nodes_[o.id].grad;
            if (needs(a)) kernels::gemm_nt(g, value(b), grad_buffer(a.id), true);
            if (needs(b)) kernels::gemm_tn(value(a), g, grad_buffer(b.id), true);
        };
    }
    return o;
}

Var Graph::add(Var a, Var b) {
    assert(value(a).same_shape(value(b)));
    Matrix out = value(a);
    const auto& bv = value(b).data();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += bv[i];
    const bool rg = needs(a) || needs(b);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, b, o] {
            const Matrix& g = nodes_[o.id].grad;
            for (Var x : {a, b}) {
                if (!needs(x)) continue;
                Matrix& gx = grad_buffer(x.id);
                for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i];
            }
        };
    }
    return o;
}

Var Graph::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Graph::mul(Var a, Var b) {
    assert(value(a).same_shape(value(b)));
    Matrix out = value(a);
    const auto& bv = value(b).data();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= bv[i];
    const bool rg = needs(a) || needs(b);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, b, o] {
            const Matrix& g = nodes_[o.id].grad;
            if (needs(a)) {
                Matrix& ga = grad_buffer(a.id);
                const auto& bv = value(b).data();
                for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * bv[i];
            }
            if (needs(b)) {
                Matrix& gb = grad_buffer(b.id);
                const auto& av = value(a).data();
                for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * av[i];
            }
        };
    }
    return o;
}

Var Graph::scale(Var a, double s) {
    Matrix out = value(a);
    for (double& x : out.data()) x *= s;
    const bool rg = needs(a);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, o, s] {
            const Matrix& g = nodes_[o.id].grad;
            Matrix& ga = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += s * g.data()[i];
        };
    }
    return o;
}

Var Graph::add_row(Var a, Var row) {
    const Matrix& av = value(a);
    const Matrix& rv = value(row);
    assert(rv.rows() == 1 && rv.cols() == av.cols());
    Matrix out = av;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto dst = out.row(r);
        for (std::size_t c = 0; c < out.cols(); ++c) dst[c] += rv(0, c);
    }
    const bool rg = needs(a) || needs(row);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, row, o] {
            const Matrix& g = nodes_[o.id].grad;
            if (needs(a)) {
                Matrix& ga = grad_buffer(a.id);
                for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
            }
            if (needs(row)) {
                Matrix& gr = grad_buffer(row.id);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
                }
            }
        };
    }
    return o;
}

Var Graph::tanh(Var a) {
    Matrix out = value(a);
    for (double& x : out.data()) x = std::tanh(x);
    const bool rg = needs(a);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, o] {
            const Matrix& g = nodes_[o.id].grad;
            const Matrix& y = value(o);
            Matrix& ga = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.data()[i] += g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
            }
        };
    }
    return o;
}

Var Graph::gelu(Var a) {
    Matrix out = value(a);
    for (double& x : out.data()) x = gelu_value(x);
    const bool rg = needs(a);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, o] {
            const Matrix& g = nodes_[o.id].grad;
            const Matrix& x = value(a);
            Matrix& ga = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.data()[i] += g.data()[i] * gelu_derivative(x.data()[i]);
            }
        };
    }
    return o;
}

Var Graph::relu(Var a) {
    Matrix out = value(a);
    for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
    const bool rg = needs(a);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, o] {
            const Matrix& g = nodes_[o.id].grad;
            const Matrix& x = value(a);
            Matrix& ga = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
            }
        };
    }
    return o;
}

Var Graph::exp(Var a) {
    Matrix out = value(a);
    for (double& x : out.data()) x = std::exp(x);
    const bool rg = needs(a);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, o] {
            const Matrix& g = nodes_[o.id].grad;
            const Matrix& y = value(o);
            Matrix& ga = grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * y.data()[i];
        };
    }
    return o;
}

Var Graph::slice_cols(Var a, std::size_t start, std::size_t count) {
    const Matrix& av = value(a);
    assert(start + count <= av.cols());
    Matrix out(av.rows(), count);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, start + c);
    }
    const bool rg = needs(a);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, o, start, count] {
            const Matrix& g = nodes_[o.id].grad;
            Matrix& ga = grad_buffer(a.id);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < count; ++c) ga(r, start + c) += g(r, c);
            }
        };
    }
    return o;
}

Var Graph::concat_cols(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    assert(av.rows() == bv.rows());
    const std::size_t ca = av.cols();
    Matrix out(av.rows(), ca + bv.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < ca; ++c) out(r, c) = av(r, c);
        for (std::size_t c = 0; c < bv.cols(); ++c) out(r, ca + c) = bv(r, c);
    }
    const bool rg = needs(a) || needs(b);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, b, o, ca] {
            const Matrix& g = nodes_[o.id].grad;
            if (needs(a)) {
                Matrix& ga = grad_buffer(a.id);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < ca; ++c) ga(r, c) += g(r, c);
                }
            }
            if (needs(b)) {
                Matrix& gb = grad_buffer(b.id);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < gb.cols(); ++c) gb(r, c) += g(r, ca + c);
                }
            }
        };
    }
    return o;
}

Var Graph::gather_cols(Var a, std::span<const std::size_t> index) {
    const Matrix& av = value(a);
    std::vector<std::size_t> idx(index.begin(), index.end());
    Matrix out(av.rows(), idx.size());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < idx.size(); ++c) out(r, c) = av(r, idx[c]);
    }
    const bool rg = needs(a);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, o, idx = std::move(idx)] {
            const Matrix& g = nodes_[o.id].grad;
            Matrix& ga = grad_buffer(a.id);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < idx.size(); ++c) ga(r, idx[c]) += g(r, c);
            }
        };
    }
    return o;
}

Var Graph::sum(Var a) {
    double s = 0.0;
    for (double x : value(a).data()) s += x;
    const bool rg = needs(a);
    Var o = push(Matrix(1, 1, s), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, o] {
            const double g = nodes_[o.id].grad(0, 0);
            Matrix& ga = grad_buffer(a.id);
            for (double& x : ga.data()) x += g;
        };
    }
    return o;
}

Var Graph::row_sum(Var a) {
    const Matrix& av = value(a);
    Matrix out(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        double s = 0.0;
        for (double x : av.row(r)) s += x;
        out(r, 0) = s;
    }
    const bool rg = needs(a);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, o] {
            const Matrix& g = nodes_[o.id].grad;
            Matrix& ga = grad_buffer(a.id);
            for (std::size_t r = 0; r < ga.rows(); ++r) {
                for (double& x : ga.row(r)) x += g(r, 0);
            }
        };
    }
    return o;
}

Var Graph::layer_norm(Var a, Var gamma, Var beta, double eps) {
    const Matrix& x = value(a);
    const Matrix& gm = value(gamma);
    const Matrix& bt = value(beta);
    const std::size_t n = x.cols();
    Matrix xhat(x.rows(), n);
    std::vector<double> inv_std(x.rows());
    Matrix out(x.rows(), n);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (double v : x.row(r)) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : x.row(r)) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (x(r, c) - mean) * inv_std[r];
            out(r, c) = xhat(r, c) * gm(0, c) + bt(0, c);
        }
    }
    const bool rg = needs(a) || needs(gamma) || needs(beta);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, a, gamma, beta, o, xhat = std::move(xhat),
                                 inv_std = std::move(inv_std)] {
            const Matrix& g = nodes_[o.id].grad;
            const Matrix& gm = value(gamma);
            const std::size_t n = g.cols();
            if (needs(gamma) || needs(beta)) {
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < n; ++c) {
                        if (needs(gamma)) grad_buffer(gamma.id)(0, c) += g(r, c) * xhat(r, c);
                        if (needs(beta)) grad_buffer(beta.id)(0, c) += g(r, c);
                    }
                }
            }
            if (needs(a)) {
                Matrix& ga = grad_buffer(a.id);
                std::vector<double> dxhat(n);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    double sum_d = 0.0;
                    double sum_dx = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                        dxhat[c] = g(r, c) * gm(0, c);
                        sum_d += dxhat[c];
                        sum_dx += dxhat[c] * xhat(r, c);
                    }
                    const double k = inv_std[r] / static_cast<double>(n);
                    for (std::size_t c = 0; c < n; ++c) {
                        ga(r, c) += k * (static_cast<double>(n) * dxhat[c] - sum_d -
                                         xhat(r, c) * sum_dx);
                    }
                }
            }
        };
    }
    return o;
}

Var Graph::embedding(Var table, std::span<const std::size_t> ids) {
    const Matrix& t = value(table);
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    Matrix out(idv.size(), t.cols());
    for (std::size_t r = 0; r < idv.size(); ++r) {
        assert(idv[r] < t.rows());
        auto src = t.row(idv[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    const bool rg = needs(table);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, table, o, idv = std::move(idv)] {
            const Matrix& g = nodes_[o.id].grad;
            Matrix& gt = grad_buffer(table.id);
            for (std::size_t r = 0; r < idv.size(); ++r) {
                auto dst = gt.row(idv[r]);
                auto src = g.row(r);
                for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
            }
        };
    }
    return o;
}

Var Graph::attention(Var q, Var k, Var v, std::vector<Segment> q_segments,
                     std::vector<Segment> k_segments, std::size_t heads, bool causal) {
    const Matrix& qv = value(q);
    const Matrix& kv = value(k);
    const Matrix& vv = value(v);
    assert(q_segments.size() == k_segments.size());
    assert(qv.cols() == kv.cols() && kv.cols() == vv.cols() && kv.rows() == vv.rows());
    const std::size_t dm = qv.cols();
    assert(heads > 0 && dm % heads == 0);
    const std::size_t dh = dm / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    // probs[b * heads + h] is the (lq x lk) attention matrix of segment b, head h.
    std::vector<Matrix> probs(q_segments.size() * heads);
    Matrix out(qv.rows(), dm);
    for (std::size_t b = 0; b < q_segments.size(); ++b) {
        const Segment qs = q_segments[b];
        const Segment ks = k_segments[b];
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            Matrix p(qs.length, ks.length);
            for (std::size_t i = 0; i < qs.length; ++i) {
                const std::size_t visible = causal ? std::min(i + 1, ks.length) : ks.length;
                double mx = -1e300;
                for (std::size_t j = 0; j < visible; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) {
                        s += qv(qs.offset + i, c0 + c) * kv(ks.offset + j, c0 + c);
                    }
                    p(i, j) = s * sc;
                    mx = std::max(mx, p(i, j));
                }
                double z = 0.0;
                for (std::size_t j = 0; j < visible; ++j) {
                    p(i, j) = std::exp(p(i, j) - mx);
                    z += p(i, j);
                }
                for (std::size_t j = 0; j < visible; ++j) p(i, j) /= z;
                for (std::size_t j = visible; j < ks.length; ++j) p(i, j) = 0.0;
                for (std::size_t j = 0; j < visible; ++j) {
                    const double pij = p(i, j);
                    for (std::size_t c = 0; c < dh; ++c) {
                        out(qs.offset + i, c0 + c) += pij * vv(ks.offset + j, c0 + c);
                    }
                }
            }
            probs[b * heads + h] = std::move(p);
        }
    }

    const bool rg = needs(q) || needs(k) || needs(v);
    Var o = push(std::move(out), rg);
    if (rg) {
        nodes_[o.id].backward = [this, q, k, v, o, heads, dh, sc, qsegs = std::move(q_segments),
                                 ksegs = std::move(k_segments), probs = std::move(probs)] {
            const Matrix& g = nodes_[o.id].grad;
            const Matrix& qv = value(q);
            const Matrix& kv = value(k);
            const Matrix& vv = value(v);
            Matrix* gq = needs(q) ? &grad_buffer(q.id) : nullptr;
            Matrix* gk = needs(k) ? &grad_buffer(k.id) : nullptr;
            Matrix* gv = needs(v) ? &grad_buffer(v.id) : nullptr;
            for (std::size_t b = 0; b < qsegs.size(); ++b) {
                const Segment qs = qsegs[b];
                const Segment ks = ksegs[b];
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t c0 = h * dh;
                    const Matrix& p = probs[b * heads + h];
                    std::vector<double> dp(ks.length);
                    for (std::size_t i = 0; i < qs.length; ++i) {
                        double row_dot = 0.0;
                        for (std::size_t j = 0; j < ks.length; ++j) {
                            const double pij = p(i, j);
                            double d = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) {
                                const double go = g(qs.offset + i, c0 + c);
                                d += go * vv(ks.offset + j, c0 + c);
                                if (gv && pij != 0.0) (*gv)(ks.offset + j, c0 + c) += pij * go;
                            }
                            dp[j] = d;
                            row_dot += pij * d;
                        }
                        for (std::size_t j = 0; j < ks.length; ++j) {
                            const double ds = p(i, j) * (dp[j] - row_dot) * sc;
                            if (ds == 0.0) continue;
                            for (std::size_t c = 0; c < dh; ++c) {
                                if (gq) (*gq)(qs.offset + i, c0 + c) += ds * kv(ks.offset + j, c0 + c);
                                if (gk) (*gk)(ks.offset + j, c0 + c) += ds * qv(qs.offset + i, c0 + c);
                            }
                        }
                    }
                }
            }
        };
    }
    return o;
}

Var Graph::cross_entropy(Var logits, std::span<const std::size_t> targets) {
    const Matrix& lv = value(logits);
    assert(targets.size() == lv.rows());
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    Matrix softmax(lv.rows(), lv.cols());
    double loss = 0.0;
    for (std::size_t r = 0; r < lv.rows(); ++r) {
        auto row = lv.row(r);
        double mx = row[0];
        for (double x : row) mx = std::max(mx, x);
        double z = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            softmax(r, c) = std::exp(row[c] - mx);
            z += softmax(r, c);
        }
        for (std::size_t c = 0; c < row.size(); ++c) softmax(r, c) /= z;
        loss += -(row[tg[r]] - mx - std::log(z));
    }
    const bool rg = needs(logits);
    Var o = push(Matrix(1, 1, loss), rg);
    if (rg) {
        nodes_[o.id].backward = [this, logits, o, tg = std::move(tg), softmax = std::move(softmax)] {
            const double g = nodes_[o.id].grad(0, 0);
            Matrix& gl = grad_buffer(logits.id);
            for (std::size_t r = 0; r < softmax.rows(); ++r) {
                for (std::size_t c = 0; c < softmax.cols(); ++c) {
                    const double onehot = c == tg[r] ? 1.0 : 0.0;
                    gl(r, c) += g * (softmax(r, c) - onehot);
                }
            }
        };
    }
    return o;
}

}  // namespace fairflow::nn
