// SPDX-License-Identifier: Apache-2.0
#include "volsurf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "volsurf/kernels.hpp"

namespace volsurf::ad {

namespace {

std::uint64_t next_node_id() {
    static std::uint64_t counter = 0;
    return ++counter;
}

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0)
            throw ShapeError("tensor: non-positive dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

double phi_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }
double phi_pdf(double x) { return 0.3989422804014326779 * std::exp(-0.5 * x * x); }

std::shared_ptr<Node> new_node(std::vector<int> shape, std::vector<double> values,
                               bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw ShapeError("tensor: value count does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(values);
    n->requires_grad = requires_grad;
    n->id = next_node_id();
    return n;
}

} // namespace

Tensor make_op(std::vector<int> shape, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val.assign(shape_numel(n->shape), 0.0);
    n->id = next_node_id();
    bool rg = false;
    for (const Tensor& p : parents) {
        n->parents.push_back(p.node());
        rg = rg || p.requires_grad();
    }
    n->requires_grad = rg;
    if (rg)
        n->backward_fn = std::move(backward_fn);
    Tensor out;
    // Tensor's private constructor is visible here via friendship.
    out = Tensor(n);
    return out;
}

Tensor Tensor::constant(std::vector<int> shape, std::vector<double> values) {
    return Tensor(new_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::param(std::vector<int> shape, std::vector<double> values) {
    return Tensor(new_node(std::move(shape), std::move(values), true));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor(new_node(std::move(shape), std::move(v), requires_grad));
}

double Tensor::scalar_value() const {
    if (numel() != 1)
        throw ShapeError("scalar_value: tensor is not a scalar");
    return n_->val[0];
}

void Tensor::backward() const {
    if (!n_)
        throw InvalidInputError("backward: undefined tensor");
    if (numel() != 1)
        throw ShapeError("backward: root must be a scalar");

    // Reachable subgraph; creation order is a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{n_.get()};
    seen.insert(n_.get());
    while (!stack.empty()) {
        Node* cur = stack.back();
        stack.pop_back();
        order.push_back(cur);
        for (auto& p : cur->parents)
            if (seen.insert(p.get()).second)
                stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

    for (Node* node : order)
        if (node->requires_grad)
            node->grad.assign(node->val.size(), 0.0);

    if (!n_->requires_grad)
        return;
    n_->grad[0] = 1.0;
    for (Node* node : order)
        if (node->requires_grad && node->backward_fn)
            node->backward_fn(*node);
}

// ---------------------------------------------------------------- shape ops

Tensor reshape(const Tensor& t, std::vector<int> shape) {
    if (shape_numel(shape) != t.numel())
        throw ShapeError("reshape: element count mismatch");
    auto parent = t.node();
    Tensor out = make_op(std::move(shape), {t}, [parent](Node& self) {
        if (!parent->requires_grad)
            return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            parent->grad[i] += self.grad[i];
    });
    out.values() = t.values();
    return out;
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != sb.size() || sa.empty())
        throw ShapeError("concat_lastdim: rank mismatch");
    for (std::size_t i = 0; i + 1 < sa.size(); ++i)
        if (sa[i] != sb[i])
            throw ShapeError("concat_lastdim: leading dimension mismatch");
    const int la = sa.back(), lb = sb.back();
    std::vector<int> shape = sa;
    shape.back() = la + lb;
    const std::size_t rows = a.numel() / la;

    auto pa = a.node();
    auto pb = b.node();
    Tensor out = make_op(shape, {a, b}, [pa, pb, rows, la, lb](Node& self) {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = self.grad.data() + r * (la + lb);
            if (pa->requires_grad)
                for (int i = 0; i < la; ++i)
                    pa->grad[r * la + i] += g[i];
            if (pb->requires_grad)
                for (int i = 0; i < lb; ++i)
                    pb->grad[r * lb + i] += g[la + i];
        }
    });
    double* y = out.values().data();
    const double* va = a.values().data();
    const double* vb = b.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(va + r * la, va + (r + 1) * la, y + r * (la + lb));
        std::copy(vb + r * lb, vb + (r + 1) * lb, y + r * (la + lb) + la);
    }
    return out;
}

Tensor repeat_batch(const Tensor& t, int batch) {
    if (batch <= 0)
        throw ShapeError("repeat_batch: batch must be positive");
    std::vector<int> shape{batch};
    for (int d : t.shape())
        shape.push_back(d);
    const std::size_t n = t.numel();
    auto parent = t.node();
    Tensor out = make_op(std::move(shape), {t}, [parent, batch, n](Node& self) {
        if (!parent->requires_grad)
            return;
        for (int b = 0; b < batch; ++b) {
            const double* g = self.grad.data() + static_cast<std::size_t>(b) * n;
            for (std::size_t i = 0; i < n; ++i)
                parent->grad[i] += g[i];
        }
    });
    for (int b = 0; b < batch; ++b)
        std::copy(t.values().begin(), t.values().end(),
                  out.values().begin() + static_cast<std::size_t>(b) * n);
    return out;
}

// --------------------------------------------------------------- arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch");
    auto pa = a.node();
    auto pb = b.node();
    Tensor out = make_op(a.shape(), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += self.grad[i];
        if (pb->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb->grad[i] += self.grad[i];
    });
    const double* va = a.values().data();
    const double* vb = b.values().data();
    double* y = out.values().data();
    for (std::size_t i = 0; i < out.numel(); ++i)
        y[i] = va[i] + vb[i];
    return out;
}

Tensor sum_all(const Tensor& t) {
    auto parent = t.node();
    Tensor out = make_op({1}, {t}, [parent](Node& self) {
        if (!parent->requires_grad)
            return;
        const double g = self.grad[0];
        for (std::size_t i = 0; i < parent->grad.size(); ++i)
            parent->grad[i] += g;
    });
    double acc = 0.0;
    for (double v : t.values())
        acc += v;
    out.values()[0] = acc;
    return out;
}

Tensor scaled_sum(const std::vector<Tensor>& terms, const std::vector<double>& coeffs) {
    if (terms.empty() || terms.size() != coeffs.size())
        throw ShapeError("scaled_sum: term/coefficient count mismatch");
    std::vector<std::shared_ptr<Node>> nodes;
    for (const Tensor& t : terms) {
        if (t.numel() != 1)
            throw ShapeError("scaled_sum: terms must be scalars");
        nodes.push_back(t.node());
    }
    Tensor out = make_op({1}, terms, [nodes, coeffs](Node& self) {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i]->requires_grad)
                nodes[i]->grad[0] += coeffs[i] * self.grad[0];
    });
    double acc = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i)
        acc += coeffs[i] * terms[i].values()[0];
    out.values()[0] = acc;
    return out;
}

// -------------------------------------------------------------- activations

Tensor relu(const Tensor& t) {
    auto parent = t.node();
    Tensor out = make_op(t.shape(), {t}, [parent](Node& self) {
        if (!parent->requires_grad)
            return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (parent->val[i] > 0.0)
                parent->grad[i] += self.grad[i];
    });
    const double* x = t.values().data();
    double* y = out.values().data();
    for (std::size_t i = 0; i < out.numel(); ++i)
        y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

Tensor gelu(const Tensor& t) {
    auto parent = t.node();
    Tensor out = make_op(t.shape(), {t}, [parent](Node& self) {
        if (!parent->requires_grad)
            return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = parent->val[i];
            parent->grad[i] += self.grad[i] * (phi_cdf(x) + x * phi_pdf(x));
        }
    });
    const double* x = t.values().data();
    double* y = out.values().data();
    for (std::size_t i = 0; i < out.numel(); ++i)
        y[i] = x[i] * phi_cdf(x[i]);
    return out;
}

Tensor elu(const Tensor& t, double alpha) {
    auto parent = t.node();
    Tensor out = make_op(t.shape(), {t}, [parent, alpha](Node& self) {
        if (!parent->requires_grad)
            return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = parent->val[i];
            parent->grad[i] += self.grad[i] * (x > 0.0 ? 1.0 : alpha * std::exp(x));
        }
    });
    const double* x = t.values().data();
    double* y = out.values().data();
    for (std::size_t i = 0; i < out.numel(); ++i)
        y[i] = x[i] > 0.0 ? x[i] : alpha * (std::exp(x[i]) - 1.0);
    return out;
}

// ---------------------------------------------------- softmax / layer norm

Tensor softmax_lastdim(const Tensor& t, const std::vector<std::uint8_t>* mask) {
    const int last = t.shape().back();
    const std::size_t rows = t.numel() / last;
    if (mask && static_cast<int>(mask->size()) != last)
        throw ShapeError("softmax_lastdim: mask length must equal the last dimension");

    auto parent = t.node();
    std::vector<std::uint8_t> allowed(last, 1);
    if (mask)
        allowed = *mask;
    int n_allowed = 0;
    for (std::uint8_t a : allowed)
        n_allowed += a;
    if (n_allowed == 0)
        throw AllMaskedError("softmax_lastdim: every position is masked");

    Tensor out = make_op(t.shape(), {t}, [parent, rows, last, allowed](Node& self) {
        if (!parent->requires_grad)
            return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* p = self.val.data() + r * last;
            const double* g = self.grad.data() + r * last;
            double dot = 0.0;
            for (int i = 0; i < last; ++i)
                if (allowed[i])
                    dot += p[i] * g[i];
            for (int i = 0; i < last; ++i)
                if (allowed[i])
                    parent->grad[r * last + i] += p[i] * (g[i] - dot);
        }
    });

    const double* x = t.values().data();
    double* y = out.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * last;
        double* yr = y + r * last;
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < last; ++i)
            if (allowed[i])
                mx = std::max(mx, xr[i]);
        double sum = 0.0;
        for (int i = 0; i < last; ++i) {
            yr[i] = allowed[i] ? std::exp(xr[i] - mx) : 0.0;
            sum += yr[i];
        }
        for (int i = 0; i < last; ++i)
            yr[i] /= sum;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int d = x.shape().back();
    if (gamma.numel() != static_cast<std::size_t>(d) || beta.numel() != static_cast<std::size_t>(d))
        throw ShapeError("layer_norm: gamma/beta must match the last dimension");
    const std::size_t rows = x.numel() / d;

    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();

    Tensor out = make_op(x.shape(), {x, gamma, beta}, [px, pg, pb, rows, d, eps](Node& self) {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = px->val.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double mu = 0.0;
            for (int i = 0; i < d; ++i)
                mu += xr[i];
            mu /= d;
            double var = 0.0;
            for (int i = 0; i < d; ++i)
                var += (xr[i] - mu) * (xr[i] - mu);
            var /= d;
            const double inv = 1.0 / std::sqrt(var + eps);

            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int i = 0; i < d; ++i) {
                const double xhat = (xr[i] - mu) * inv;
                const double dxhat = g[i] * pg->val[i];
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xhat;
            }
            mean_dxhat /= d;
            mean_dxhat_xhat /= d;

            for (int i = 0; i < d; ++i) {
                const double xhat = (xr[i] - mu) * inv;
                if (px->requires_grad)
                    px->grad[r * d + i] +=
                        inv * (g[i] * pg->val[i] - mean_dxhat - xhat * mean_dxhat_xhat);
                if (pg->requires_grad)
                    pg->grad[i] += g[i] * xhat;
                if (pb->requires_grad)
                    pb->grad[i] += g[i];
            }
        }
    });

    const double* xv = x.values().data();
    double* y = out.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv + r * d;
        double mu = 0.0;
        for (int i = 0; i < d; ++i)
            mu += xr[i];
        mu /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i)
            var += (xr[i] - mu) * (xr[i] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < d; ++i)
            y[r * d + i] = gamma.values()[i] * (xr[i] - mu) * inv + beta.values()[i];
    }
    return out;
}

// ------------------------------------------------------------ dense / conv

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    const auto& ws = w.shape();
    if (ws.size() != 2)
        throw ShapeError("linear: weight must be [out, in]");
    const int in_dim = ws[1], out_dim = ws[0];
    if (x.shape().back() != in_dim)
        throw ShapeError("linear: input last dimension does not match weight");
    if (b.numel() != static_cast<std::size_t>(out_dim))
        throw ShapeError("linear: bias size mismatch");
    const int n = static_cast<int>(x.numel() / in_dim);

    std::vector<int> out_shape = x.shape();
    out_shape.back() = out_dim;

    auto px = x.node();
    auto pw = w.node();
    auto pbias = b.node();

    Tensor out = make_op(out_shape, {x, w, b}, [px, pw, pbias, n, in_dim, out_dim](Node& self) {
        if (px->requires_grad)
            kernels::linear_grad_input(self.grad.data(), pw->val.data(), px->grad.data(), n,
                                       in_dim, out_dim);
        if (pw->requires_grad)
            kernels::linear_grad_params(px->val.data(), self.grad.data(), pw->grad.data(),
                                        pbias->grad.data(), n, in_dim, out_dim);
    });
    kernels::linear_forward(x.values().data(), w.values().data(), b.values().data(),
                            out.values().data(), n, in_dim, out_dim);
    return out;
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4)
        throw ShapeError("conv2d_3x3: input must be [B, C, H, W]");
    if (ws.size() != 4 || ws[2] != 3 || ws[3] != 3)
        throw ShapeError("conv2d_3x3: weight must be [Cout, Cin, 3, 3]");
    if (ws[1] != xs[1])
        throw ShapeError("conv2d_3x3: channel mismatch");
    const int batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3], cout = ws[0];
    if (b.numel() != static_cast<std::size_t>(cout))
        throw ShapeError("conv2d_3x3: bias size mismatch");

    auto px = x.node();
    auto pw = w.node();
    auto pbias = b.node();

    Tensor out =
        make_op({batch, cout, h, wd}, {x, w, b}, [px, pw, pbias, batch, cin, cout, h, wd](Node& self) {
            if (px->requires_grad)
                kernels::conv3x3_grad_input(self.grad.data(), pw->val.data(), px->grad.data(),
                                            batch, cin, cout, h, wd);
            if (pw->requires_grad)
                kernels::conv3x3_grad_params(px->val.data(), self.grad.data(), pw->grad.data(),
                                             pbias->grad.data(), batch, cin, cout, h, wd);
        });
    kernels::conv3x3_forward(x.values().data(), w.values().data(), b.values().data(),
                             out.values().data(), batch, cin, cout, h, wd);
    return out;
}

// ----------------------------------------------------------------- attention

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const std::vector<std::uint8_t>* key_allowed, AttentionTrace* trace,
                 const std::string& trace_label) {
    const auto& qs = q.shape();
    const auto& ks = k.shape();
    const auto& vs = v.shape();
    if (qs.size() != 3 || ks.size() != 3 || vs.size() != 3)
        throw ShapeError("attention: q, k, v must be [B, T, D]");
    const int batch = qs[0], tq = qs[1], d = qs[2];
    const int tk = ks[1];
    if (ks[0] != batch || vs[0] != batch || vs[1] != tk || ks[2] != d || vs[2] != d)
        throw ShapeError("attention: inconsistent q/k/v shapes");
    if (heads <= 0 || d % heads != 0)
        throw ShapeError("attention: heads must divide the model dimension");
    if (key_allowed && static_cast<int>(key_allowed->size()) != batch * tk)
        throw ShapeError("attention: key mask must be [B, Tk]");
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Attention probabilities are kept for the reverse pass.
    auto probs = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(batch) * heads * tq * tk, 0.0);
    std::vector<std::uint8_t> allowed;
    if (key_allowed)
        allowed = *key_allowed;
    else
        allowed.assign(static_cast<std::size_t>(batch) * tk, 1);

    for (int b = 0; b < batch; ++b) {
        int n_allowed = 0;
        for (int t = 0; t < tk; ++t)
            n_allowed += allowed[static_cast<std::size_t>(b) * tk + t];
        if (n_allowed == 0)
            throw AllMaskedError("attention: a batch item has no attendable key");
    }

    auto pq = q.node();
    auto pk = k.node();
    auto pv = v.node();

    Tensor out = make_op(
        {batch, tq, d}, {q, k, v},
        [pq, pk, pv, probs, batch, heads, tq, tk, dh, d, scale](Node& self) {
            const bool need_q = pq->requires_grad, need_k = pk->requires_grad,
                       need_v = pv->requires_grad;
#pragma omp parallel for schedule(static)
            for (int bh = 0; bh < batch * heads; ++bh) {
                const int b = bh / heads, hd = bh % heads;
                const int off = hd * dh;
                std::vector<double> dprob(tk), dscore(tk);
                for (int iq = 0; iq < tq; ++iq) {
                    const double* p =
                        probs->data() + ((static_cast<std::size_t>(b) * heads + hd) * tq + iq) * tk;
                    const double* go = self.grad.data() + (static_cast<std::size_t>(b) * tq + iq) * d + off;
                    // dV and dprob
                    double dot = 0.0;
                    for (int ik = 0; ik < tk; ++ik) {
                        const double* vrow =
                            pv->val.data() + (static_cast<std::size_t>(b) * tk + ik) * d + off;
                        double acc = 0.0;
                        for (int e = 0; e < dh; ++e)
                            acc += go[e] * vrow[e];
                        dprob[ik] = acc;
                        dot += p[ik] * acc;
                        if (need_v && p[ik] != 0.0) {
                            double* dvrow =
                                pv->grad.data() + (static_cast<std::size_t>(b) * tk + ik) * d + off;
                            for (int e = 0; e < dh; ++e)
                                dvrow[e] += p[ik] * go[e];
                        }
                    }
                    // softmax backward; zero-prob (masked) keys stay zero
                    for (int ik = 0; ik < tk; ++ik)
                        dscore[ik] = p[ik] * (dprob[ik] - dot);
                    const double* qrow =
                        pq->val.data() + (static_cast<std::size_t>(b) * tq + iq) * d + off;
                    double* dqrow =
                        need_q ? pq->grad.data() + (static_cast<std::size_t>(b) * tq + iq) * d + off
                               : nullptr;
                    for (int ik = 0; ik < tk; ++ik) {
                        if (dscore[ik] == 0.0)
                            continue;
                        const double ds = dscore[ik] * scale;
                        const double* krow =
                            pk->val.data() + (static_cast<std::size_t>(b) * tk + ik) * d + off;
                        if (need_q)
                            for (int e = 0; e < dh; ++e)
                                dqrow[e] += ds * krow[e];
                        if (need_k) {
                            double* dkrow =
                                pk->grad.data() + (static_cast<std::size_t>(b) * tk + ik) * d + off;
                            for (int e = 0; e < dh; ++e)
                                dkrow[e] += ds * qrow[e];
                        }
                    }
                }
            }
        });

    // Forward pass.
    const double* qv = q.values().data();
    const double* kv = k.values().data();
    const double* vv = v.values().data();
    double* y = out.values().data();
#pragma omp parallel for schedule(static)
    for (int bh = 0; bh < batch * heads; ++bh) {
        const int b = bh / heads, hd = bh % heads;
        const int off = hd * dh;
        const std::uint8_t* arow = allowed.data() + static_cast<std::size_t>(b) * tk;
        std::vector<double> score(tk);
        for (int iq = 0; iq < tq; ++iq) {
            const double* qrow = qv + (static_cast<std::size_t>(b) * tq + iq) * d + off;
            double mx = -std::numeric_limits<double>::infinity();
            for (int ik = 0; ik < tk; ++ik) {
                if (!arow[ik])
                    continue;
                const double* krow = kv + (static_cast<std::size_t>(b) * tk + ik) * d + off;
                double acc = 0.0;
                for (int e = 0; e < dh; ++e)
                    acc += qrow[e] * krow[e];
                score[ik] = acc * scale;
                mx = std::max(mx, score[ik]);
            }
            double* p = probs->data() + ((static_cast<std::size_t>(b) * heads + hd) * tq + iq) * tk;
            double sum = 0.0;
            for (int ik = 0; ik < tk; ++ik) {
                p[ik] = arow[ik] ? std::exp(score[ik] - mx) : 0.0;
                sum += p[ik];
            }
            double* yrow = y + (static_cast<std::size_t>(b) * tq + iq) * d + off;
            for (int e = 0; e < dh; ++e)
                yrow[e] = 0.0;
            for (int ik = 0; ik < tk; ++ik) {
                p[ik] /= sum;
                if (p[ik] == 0.0)
                    continue;
                const double* vrow = vv + (static_cast<std::size_t>(b) * tk + ik) * d + off;
                for (int e = 0; e < dh; ++e)
                    yrow[e] += p[ik] * vrow[e];
            }
        }
    }

    if (trace) {
        AttentionTrace::Entry entry;
        entry.label = trace_label;
        entry.batch = batch;
        entry.heads = heads;
        entry.n_queries = tq;
        entry.n_keys = tk;
        entry.probs = *probs;
        trace->entries.push_back(std::move(entry));
    }
    return out;
}

// -------------------------------------------------------------------- losses

Tensor masked_mse(const Tensor& pred, const std::vector<Matrix>& targets,
                  const std::vector<MaskMatrix>& loss_masks) {
    const auto& ps = pred.shape();
    if (ps.size() != 3)
        throw ShapeError("masked_mse: prediction must be [B, R, C]");
    const int batch = ps[0], rows = ps[1], cols = ps[2];
    if (targets.size() != static_cast<std::size_t>(batch) || loss_masks.size() != targets.size())
        throw ShapeError("masked_mse: batch size mismatch");
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;

    std::vector<long> counts(batch);
    for (int b = 0; b < batch; ++b) {
        if (targets[b].rows() != rows || targets[b].cols() != cols ||
            loss_masks[b].rows() != rows || loss_masks[b].cols() != cols)
            throw ShapeError("masked_mse: target/mask shape mismatch");
        counts[b] = loss_masks[b].count_ones();
        if (counts[b] == 0)
            throw NoMissingPointsError("masked_mse: a sample has no missing point with ground truth");
    }

    auto pp = pred.node();
    auto tg = std::make_shared<std::vector<Matrix>>(targets);
    auto lm = std::make_shared<std::vector<MaskMatrix>>(loss_masks);
    auto cnt = std::make_shared<std::vector<long>>(counts);

    Tensor out = make_op({1}, {pred}, [pp, tg, lm, cnt, batch, rows, cols, plane](Node& self) {
        if (!pp->requires_grad)
            return;
        const double g = self.grad[0] / batch;
        for (int b = 0; b < batch; ++b) {
            const double inv = 2.0 / static_cast<double>((*cnt)[b]);
            const double* pv = pp->val.data() + static_cast<std::size_t>(b) * plane;
            double* pg = pp->grad.data() + static_cast<std::size_t>(b) * plane;
            const Matrix& t = (*tg)[b];
            const MaskMatrix& m = (*lm)[b];
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    if (m(i, j))
                        pg[static_cast<std::size_t>(i) * cols + j] +=
                            g * inv * (pv[static_cast<std::size_t>(i) * cols + j] - t(i, j));
        }
    });

    double total = 0.0;
    const double* pv = pred.values().data();
    for (int b = 0; b < batch; ++b) {
        double acc = 0.0;
        const double* pb = pv + static_cast<std::size_t>(b) * plane;
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                if (loss_masks[b](i, j)) {
                    const double e = pb[static_cast<std::size_t>(i) * cols + j] - targets[b](i, j);
                    acc += e * e;
                }
        total += acc / static_cast<double>(counts[b]);
    }
    out.values()[0] = total / batch;
    return out;
}

} // namespace volsurf::ad
