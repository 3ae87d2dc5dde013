#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "melstyle/common.hpp"
#include "melstyle/parallel.hpp"
#include "melstyle/tensor.hpp"

// Reverse-mode autodiff on a per-step tape. Parameters live outside the
// tape (nn.hpp); their gradients accumulate across backward() calls.
// Everything is templated on the scalar so gradient checks can run the
// exact same code at 64-bit precision.
namespace melstyle::ad {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

template <typename T>
struct Param {
    std::string name;
    Ten<T> value;
    Ten<T> grad;
    Ten<T> adam_m, adam_v;
    bool trainable = true;

    void ensure_grad() {
        if (grad.v.size() != value.v.size()) grad = Ten<T>(value.shape);
    }
    void zero_grad() {
        ensure_grad();
        std::fill(grad.v.begin(), grad.v.end(), T(0));
    }
};

template <typename T>
class Tape {
public:
    struct Node {
        Ten<T> val;
        Ten<T> grad;
        std::function<void(Tape&)> back;
        bool needs_grad = false;
        Param<T>* bound = nullptr;
    };

    Var input(Ten<T> value, bool needs_grad = false) {
        Node n;
        n.val = std::move(value);
        n.needs_grad = needs_grad && !inference_;
        nodes_.push_back(std::move(n));
        return {int(nodes_.size()) - 1};
    }

    Var param(Param<T>& p) {
        Node n;
        n.val = p.value;
        n.needs_grad = p.trainable && !inference_;
        n.bound = &p;
        nodes_.push_back(std::move(n));
        return {int(nodes_.size()) - 1};
    }

    // inference mode: no backward closures are recorded at all
    void set_inference(bool b) { inference_ = b; }

    // id the next created node will receive; ops capture it in closures
    int next_id() const { return int(nodes_.size()); }

    Var make(Ten<T> value, bool needs_grad, std::function<void(Tape&)> back) {
        Node n;
        n.val = std::move(value);
        n.needs_grad = needs_grad && !inference_;
        if (n.needs_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return {int(nodes_.size()) - 1};
    }

    const Ten<T>& val(Var v) const { return nodes_[size_t(v.id)].val; }
    Ten<T>& grad(Var v) {
        auto& n = nodes_[size_t(v.id)];
        if (n.grad.v.size() != n.val.v.size()) n.grad = Ten<T>(n.val.shape);
        return n.grad;
    }
    bool has_grad(Var v) const {
        const auto& n = nodes_[size_t(v.id)];
        return n.grad.v.size() == n.val.v.size();
    }
    bool needs_grad(Var v) const { return nodes_[size_t(v.id)].needs_grad; }

    void backward(Var loss) {
        if (val(loss).size() != 1) throw ShapeError("backward target must be scalar");
        grad(loss).v[0] = T(1);
        for (int i = loss.id; i >= 0; --i) {
            auto& n = nodes_[size_t(i)];
            if (n.needs_grad && n.back && n.grad.v.size() == n.val.v.size())
                n.back(*this);
        }
        for (auto& n : nodes_) {
            if (n.bound && n.bound->trainable && n.grad.v.size() == n.val.v.size()) {
                n.bound->ensure_grad();
                for (size_t i = 0; i < n.grad.v.size(); ++i)
                    n.bound->grad.v[i] += n.grad.v[i];
            }
        }
    }

    void reset() { nodes_.clear(); }
    size_t node_count() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    bool inference_ = false;
};

// ------------------------------------------------------------- elementwise

template <typename T>
Var add(Tape<T>& tp, Var a, Var b) {
    if (!tp.val(a).same_shape(tp.val(b))) throw ShapeError("add shape mismatch");
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    Ten<T> out(av.shape);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = av.v[i] + bv.v[i];
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        if (t.needs_grad(a)) {
            auto& ga = t.grad(a);
            for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i];
        }
    });
}

template <typename T>
Var sub(Tape<T>& tp, Var a, Var b) {
    if (!tp.val(a).same_shape(tp.val(b))) throw ShapeError("sub shape mismatch");
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    Ten<T> out(av.shape);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = av.v[i] - bv.v[i];
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        if (t.needs_grad(a)) {
            auto& ga = t.grad(a);
            for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] -= g.v[i];
        }
    });
}

template <typename T>
Var mul(Tape<T>& tp, Var a, Var b) {
    if (!tp.val(a).same_shape(tp.val(b))) throw ShapeError("mul shape mismatch");
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    Ten<T> out(av.shape);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = av.v[i] * bv.v[i];
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        if (t.needs_grad(a)) {
            auto& ga = t.grad(a);
            const auto& bb = t.val(b);
            for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * bb.v[i];
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            const auto& aa = t.val(a);
            for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i] * aa.v[i];
        }
    });
}

template <typename T>
Var scale(Tape<T>& tp, Var a, double c) {
    const auto& av = tp.val(a);
    Ten<T> out(av.shape);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = av.v[i] * T(c);
    const bool ng = tp.needs_grad(a);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        auto& ga = t.grad(a);
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * T(c);
    });
}

template <typename T>
Var silu(Tape<T>& tp, Var a) {
    const auto& av = tp.val(a);
    Ten<T> out(av.shape);
    for (size_t i = 0; i < out.v.size(); ++i) {
        T s = T(1) / (T(1) + std::exp(-av.v[i]));
        out.v[i] = av.v[i] * s;
    }
    const bool ng = tp.needs_grad(a);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        const auto& x = t.val(a);
        auto& ga = t.grad(a);
        for (size_t i = 0; i < g.v.size(); ++i) {
            T s = T(1) / (T(1) + std::exp(-x.v[i]));
            ga.v[i] += g.v[i] * s * (T(1) + x.v[i] * (T(1) - s));
        }
    });
}

// ------------------------------------------------------------------ reshape

template <typename T>
Var reshape(Tape<T>& tp, Var a, std::vector<int> shape) {
    const auto& av = tp.val(a);
    if (Ten<T>::count(shape) != av.size()) throw ShapeError("reshape element count");
    Ten<T> out(std::move(shape), av.v);
    const bool ng = tp.needs_grad(a);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        auto& ga = t.grad(a);
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
    });
}

// stack N same-shape tensors along a new leading dim
template <typename T>
Var stack0(Tape<T>& tp, const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("stack0 needs at least one part");
    const auto& first = tp.val(parts[0]);
    std::vector<int> shape;
    shape.push_back(int(parts.size()));
    for (int d : first.shape) shape.push_back(d);
    Ten<T> out(shape);
    const size_t stride = first.v.size();
    bool ng = false;
    for (size_t p = 0; p < parts.size(); ++p) {
        const auto& pv = tp.val(parts[p]);
        if (!pv.same_shape(first)) throw ShapeError("stack0 shape mismatch");
        std::copy(pv.v.begin(), pv.v.end(), out.v.begin() + long(p * stride));
        ng = ng || tp.needs_grad(parts[p]);
    }
    const int oid = tp.next_id();
    auto parts_copy = parts;
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        for (size_t p = 0; p < parts_copy.size(); ++p) {
            if (!t.needs_grad(parts_copy[p])) continue;
            auto& gp = t.grad(parts_copy[p]);
            const T* src = g.v.data() + p * stride;
            for (size_t i = 0; i < stride; ++i) gp.v[i] += src[i];
        }
    });
}

// ----------------------------------------------------------------- matmul

// [m,k] x [k,n] -> [m,n]
template <typename T>
Var matmul(Tape<T>& tp, Var a, Var b) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw ShapeError("matmul shape mismatch");
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Ten<T> out({m, n});
    EMap<T>(out.data(), m, n).noalias() =
        ECMap<T>(av.data(), m, k) * ECMap<T>(bv.data(), k, n);
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        ECMap<T> gm(g.data(), m, n);
        if (t.needs_grad(a)) {
            EMap<T> ga(t.grad(a).data(), m, k);
            ga.noalias() += gm * ECMap<T>(t.val(b).data(), k, n).transpose();
        }
        if (t.needs_grad(b)) {
            EMap<T> gb(t.grad(b).data(), k, n);
            gb.noalias() += ECMap<T>(t.val(a).data(), m, k).transpose() * gm;
        }
    });
}

// x[..., d_in] . W[d_out, d_in]^T + b  ->  [..., d_out]
template <typename T>
Var linear(Tape<T>& tp, Var x, Var w, Var b) {
    const auto& xv = tp.val(x);
    const auto& wv = tp.val(w);
    if (wv.rank() != 2) throw ShapeError("linear weight must be 2-d");
    const int d_in = wv.dim(1), d_out = wv.dim(0);
    if (xv.shape.back() != d_in) throw ShapeError("linear input width mismatch");
    const int rows = int(xv.size() / d_in);

    std::vector<int> oshape = xv.shape;
    oshape.back() = d_out;
    Ten<T> out(oshape);
    EMap<T> om(out.data(), rows, d_out);
    om.noalias() = ECMap<T>(xv.data(), rows, d_in) *
                   ECMap<T>(wv.data(), d_out, d_in).transpose();
    if (b.valid()) {
        const auto& bvv = tp.val(b);
        if (bvv.size() != d_out) throw ShapeError("linear bias size mismatch");
        om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
            bvv.data(), d_out);
    }
    const bool ng =
        tp.needs_grad(x) || tp.needs_grad(w) || (b.valid() && tp.needs_grad(b));
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        ECMap<T> gm(g.data(), rows, d_out);
        if (t.needs_grad(x)) {
            EMap<T> gx(t.grad(x).data(), rows, d_in);
            gx.noalias() += gm * ECMap<T>(t.val(w).data(), d_out, d_in);
        }
        if (t.needs_grad(w)) {
            EMap<T> gw(t.grad(w).data(), d_out, d_in);
            gw.noalias() += gm.transpose() * ECMap<T>(t.val(x).data(), rows, d_in);
        }
        if (b.valid() && t.needs_grad(b)) {
            auto& gb = t.grad(b);
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), d_out) +=
                gm.colwise().sum();
        }
    });
}

// ---------------------------------------------------------------- softmax

// row-wise softmax on [n, m]
template <typename T>
Var softmax_rows(Tape<T>& tp, Var x) {
    const auto& xv = tp.val(x);
    if (xv.rank() != 2) throw ShapeError("softmax_rows expects rank 2");
    const int n = xv.dim(0), m = xv.dim(1);
    Ten<T> out(xv.shape);
    for (int i = 0; i < n; ++i) {
        const T* row = xv.data() + size_t(i) * size_t(m);
        T* orow = out.data() + size_t(i) * size_t(m);
        T mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < m; ++j) orow[j] /= sum;
    }
    const bool ng = tp.needs_grad(x);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        const auto& y = t.val({oid});
        auto& gx = t.grad(x);
        for (int i = 0; i < n; ++i) {
            const T* yr = y.data() + size_t(i) * size_t(m);
            const T* gr = g.data() + size_t(i) * size_t(m);
            T* gxr = gx.data() + size_t(i) * size_t(m);
            T dot = T(0);
            for (int j = 0; j < m; ++j) dot += yr[j] * gr[j];
            for (int j = 0; j < m; ++j) gxr[j] += yr[j] * (gr[j] - dot);
        }
    });
}

// ------------------------------------------------------------ normalization

// LayerNorm over the last dim of [n, d]
template <typename T>
Var layernorm(Tape<T>& tp, Var x, Var gamma, Var beta, double eps = 1e-5) {
    const auto& xv = tp.val(x);
    if (xv.rank() != 2) throw ShapeError("layernorm expects rank 2");
    const int n = xv.dim(0), d = xv.dim(1);
    if (tp.val(gamma).size() != d || tp.val(beta).size() != d)
        throw ShapeError("layernorm affine size mismatch");

    Ten<T> out(xv.shape);
    auto xhat = std::make_shared<Ten<T>>(xv.shape);
    auto inv_std = std::make_shared<std::vector<T>>(size_t(n));
    const auto& gv = tp.val(gamma);
    const auto& bv = tp.val(beta);
    for (int i = 0; i < n; ++i) {
        const T* row = xv.data() + size_t(i) * size_t(d);
        T mu = T(0);
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= T(d);
        T var = T(0);
        for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= T(d);
        T is = T(1) / std::sqrt(var + T(eps));
        (*inv_std)[size_t(i)] = is;
        for (int j = 0; j < d; ++j) {
            T xh = (row[j] - mu) * is;
            xhat->v[size_t(i) * size_t(d) + size_t(j)] = xh;
            out.v[size_t(i) * size_t(d) + size_t(j)] = gv.v[size_t(j)] * xh + bv.v[size_t(j)];
        }
    }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(gamma) || tp.needs_grad(beta);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        const auto& gv2 = t.val(gamma);
        if (t.needs_grad(gamma)) {
            auto& gg = t.grad(gamma);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    gg.v[size_t(j)] += g.v[size_t(i) * size_t(d) + size_t(j)] *
                                       xhat->v[size_t(i) * size_t(d) + size_t(j)];
        }
        if (t.needs_grad(beta)) {
            auto& gb = t.grad(beta);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    gb.v[size_t(j)] += g.v[size_t(i) * size_t(d) + size_t(j)];
        }
        if (t.needs_grad(x)) {
            auto& gx = t.grad(x);
            for (int i = 0; i < n; ++i) {
                const T* gr = g.data() + size_t(i) * size_t(d);
                const T* xh = xhat->v.data() + size_t(i) * size_t(d);
                T* gxr = gx.data() + size_t(i) * size_t(d);
                T m1 = T(0), m2 = T(0);
                for (int j = 0; j < d; ++j) {
                    T gh = gr[j] * gv2.v[size_t(j)];
                    m1 += gh;
                    m2 += gh * xh[j];
                }
                m1 /= T(d);
                m2 /= T(d);
                const T is = (*inv_std)[size_t(i)];
                for (int j = 0; j < d; ++j) {
                    T gh = gr[j] * gv2.v[size_t(j)];
                    gxr[j] += is * (gh - m1 - xh[j] * m2);
                }
            }
        }
    });
}

// GroupNorm on [B, C, H, W]
template <typename T>
Var groupnorm(Tape<T>& tp, Var x, int groups, Var gamma, Var beta,
              double eps = 1e-5) {
    const auto& xv = tp.val(x);
    if (xv.rank() != 4) throw ShapeError("groupnorm expects rank 4");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (C % groups != 0) throw ShapeError("groupnorm groups must divide channels");
    if (tp.val(gamma).size() != C || tp.val(beta).size() != C)
        throw ShapeError("groupnorm affine size mismatch");
    const int cg = C / groups;
    const long long hw = (long long)H * W;
    const long long gsize = cg * hw;

    Ten<T> out(xv.shape);
    auto xhat = std::make_shared<Ten<T>>(xv.shape);
    auto inv_std = std::make_shared<std::vector<T>>(size_t(B) * size_t(groups));
    const auto& gv = tp.val(gamma);
    const auto& bv = tp.val(beta);
    for (int b = 0; b < B; ++b) {
        for (int g0 = 0; g0 < groups; ++g0) {
            const size_t base = (size_t(b) * size_t(C) + size_t(g0) * size_t(cg)) * size_t(hw);
            T mu = T(0);
            for (long long i = 0; i < gsize; ++i) mu += xv.v[base + size_t(i)];
            mu /= T(gsize);
            T var = T(0);
            for (long long i = 0; i < gsize; ++i) {
                T d = xv.v[base + size_t(i)] - mu;
                var += d * d;
            }
            var /= T(gsize);
            T is = T(1) / std::sqrt(var + T(eps));
            (*inv_std)[size_t(b) * size_t(groups) + size_t(g0)] = is;
            for (int c = 0; c < cg; ++c) {
                const T gam = gv.v[size_t(g0) * size_t(cg) + size_t(c)];
                const T bet = bv.v[size_t(g0) * size_t(cg) + size_t(c)];
                for (long long i = 0; i < hw; ++i) {
                    size_t idx = base + size_t(c) * size_t(hw) + size_t(i);
                    T xh = (xv.v[idx] - mu) * is;
                    xhat->v[idx] = xh;
                    out.v[idx] = gam * xh + bet;
                }
            }
        }
    }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(gamma) || tp.needs_grad(beta);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        const auto& gv2 = t.val(gamma);
        if (t.needs_grad(gamma) || t.needs_grad(beta)) {
            auto& gg = t.grad(gamma);
            auto& gb = t.grad(beta);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const size_t base = (size_t(b) * size_t(C) + size_t(c)) * size_t(hw);
                    T sg = T(0), sb = T(0);
                    for (long long i = 0; i < hw; ++i) {
                        sg += g.v[base + size_t(i)] * xhat->v[base + size_t(i)];
                        sb += g.v[base + size_t(i)];
                    }
                    if (t.needs_grad(gamma)) gg.v[size_t(c)] += sg;
                    if (t.needs_grad(beta)) gb.v[size_t(c)] += sb;
                }
        }
        if (t.needs_grad(x)) {
            auto& gx = t.grad(x);
            for (int b = 0; b < B; ++b) {
                for (int g0 = 0; g0 < groups; ++g0) {
                    const size_t base =
                        (size_t(b) * size_t(C) + size_t(g0) * size_t(cg)) * size_t(hw);
                    T m1 = T(0), m2 = T(0);
                    for (int c = 0; c < cg; ++c) {
                        const T gam = gv2.v[size_t(g0) * size_t(cg) + size_t(c)];
                        for (long long i = 0; i < hw; ++i) {
                            size_t idx = base + size_t(c) * size_t(hw) + size_t(i);
                            T gh = g.v[idx] * gam;
                            m1 += gh;
                            m2 += gh * xhat->v[idx];
                        }
                    }
                    m1 /= T(gsize);
                    m2 /= T(gsize);
                    const T is = (*inv_std)[size_t(b) * size_t(groups) + size_t(g0)];
                    for (int c = 0; c < cg; ++c) {
                        const T gam = gv2.v[size_t(g0) * size_t(cg) + size_t(c)];
                        for (long long i = 0; i < hw; ++i) {
                            size_t idx = base + size_t(c) * size_t(hw) + size_t(i);
                            T gh = g.v[idx] * gam;
                            gx.v[idx] += is * (gh - m1 - xhat->v[idx] * m2);
                        }
                    }
                }
            }
        }
    });
}

// ------------------------------------------------------------------- conv

namespace detail {

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, T* col) {
    // col layout: [C*kh*kw, Ho*Wo]
    const int N = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* dst = col + (size_t(c) * size_t(kh) * size_t(kw) +
                                size_t(ki) * size_t(kw) + size_t(kj)) *
                                   size_t(N);
                for (int ho = 0; ho < Ho; ++ho) {
                    const int hi = ho * stride - pad + ki;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int wi = wo * stride - pad + kj;
                        T v = T(0);
                        if (hi >= 0 && hi < H && wi >= 0 && wi < W)
                            v = x[(size_t(c) * size_t(H) + size_t(hi)) * size_t(W) +
                                  size_t(wi)];
                        dst[size_t(ho) * size_t(Wo) + size_t(wo)] = v;
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride,
                int pad, int Ho, int Wo, T* x) {
    const int N = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* src = col + (size_t(c) * size_t(kh) * size_t(kw) +
                                      size_t(ki) * size_t(kw) + size_t(kj)) *
                                         size_t(N);
                for (int ho = 0; ho < Ho; ++ho) {
                    const int hi = ho * stride - pad + ki;
                    if (hi < 0 || hi >= H) continue;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int wi = wo * stride - pad + kj;
                        if (wi < 0 || wi >= W) continue;
                        x[(size_t(c) * size_t(H) + size_t(hi)) * size_t(W) + size_t(wi)] +=
                            src[size_t(ho) * size_t(Wo) + size_t(wo)];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x[B,Cin,H,W] * w[Cout,Cin,kh,kw] + b[Cout]
template <typename T>
Var conv2d(Tape<T>& tp, Var x, Var w, Var b, int stride, int pad) {
    const auto& xv = tp.val(x);
    const auto& wv = tp.val(w);
    if (xv.rank() != 4 || wv.rank() != 4) throw ShapeError("conv2d expects rank 4");
    const int B = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != Cin) throw ShapeError("conv2d channel mismatch");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    const int K = Cin * kh * kw;
    const int N = Ho * Wo;

    Ten<T> out({B, Cout, Ho, Wo});
    {
        std::vector<Ten<T>> cols(static_cast<size_t>(B));
        parallel_for(B, [&](int bi) {
            Ten<T> col({K, N});
            detail::im2col(xv.data() + size_t(bi) * size_t(Cin) * size_t(H) * size_t(W),
                           Cin, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
            EMap<T> om(out.data() + size_t(bi) * size_t(Cout) * size_t(N), Cout, N);
            om.noalias() = ECMap<T>(wv.data(), Cout, K) * ECMap<T>(col.data(), K, N);
            if (b.valid()) {
                const auto& bv = tp.val(b);
                for (int co = 0; co < Cout; ++co)
                    om.row(co).array() += bv.v[size_t(co)];
            }
        });
    }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(w) || (b.valid() && tp.needs_grad(b));
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        const auto& xv2 = t.val(x);
        const auto& wv2 = t.val(w);
        const bool need_x = t.needs_grad(x);
        const bool need_w = t.needs_grad(w);
        std::vector<Ten<T>> dw_parts;
        if (need_w) dw_parts.assign(size_t(B), Ten<T>({Cout, K}));
        std::vector<Ten<T>> dx_parts(static_cast<size_t>(B));

        parallel_for(B, [&](int bi) {
            Ten<T> col({K, N});
            detail::im2col(xv2.data() + size_t(bi) * size_t(Cin) * size_t(H) * size_t(W),
                           Cin, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
            ECMap<T> gm(g.data() + size_t(bi) * size_t(Cout) * size_t(N), Cout, N);
            if (need_w) {
                EMap<T> dw(dw_parts[size_t(bi)].data(), Cout, K);
                dw.noalias() = gm * ECMap<T>(col.data(), K, N).transpose();
            }
            if (need_x) {
                Ten<T> dcol({K, N});
                EMap<T>(dcol.data(), K, N).noalias() =
                    ECMap<T>(wv2.data(), Cout, K).transpose() * gm;
                dx_parts[size_t(bi)] = Ten<T>({Cin, H, W});
                detail::col2im_add(dcol.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                                   dx_parts[size_t(bi)].data());
            }
        });

        if (need_w) {
            auto& gw = t.grad(w);
            for (int bi = 0; bi < B; ++bi)
                for (size_t i = 0; i < gw.v.size(); ++i)
                    gw.v[i] += dw_parts[size_t(bi)].v[i];
        }
        if (need_x) {
            auto& gx = t.grad(x);
            const size_t per = size_t(Cin) * size_t(H) * size_t(W);
            for (int bi = 0; bi < B; ++bi)
                for (size_t i = 0; i < per; ++i)
                    gx.v[size_t(bi) * per + i] += dx_parts[size_t(bi)].v[i];
        }
        if (b.valid() && t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (int bi = 0; bi < B; ++bi)
                for (int co = 0; co < Cout; ++co) {
                    const T* row = g.data() + (size_t(bi) * size_t(Cout) + size_t(co)) * size_t(N);
                    T acc = T(0);
                    for (int i = 0; i < N; ++i) acc += row[i];
                    gb.v[size_t(co)] += acc;
                }
        }
    });
}

// nearest-neighbor 2x upsample of [B,C,H,W]
template <typename T>
Var upsample2x(Tape<T>& tp, Var x) {
    const auto& xv = tp.val(x);
    if (xv.rank() != 4) throw ShapeError("upsample2x expects rank 4");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Ten<T> out({B, C, 2 * H, 2 * W});
    for (int bc = 0; bc < B * C; ++bc) {
        const T* src = xv.data() + size_t(bc) * size_t(H) * size_t(W);
        T* dst = out.data() + size_t(bc) * size_t(4) * size_t(H) * size_t(W);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                T v = src[size_t(i) * size_t(W) + size_t(j)];
                dst[size_t(2 * i) * size_t(2 * W) + size_t(2 * j)] = v;
                dst[size_t(2 * i) * size_t(2 * W) + size_t(2 * j + 1)] = v;
                dst[size_t(2 * i + 1) * size_t(2 * W) + size_t(2 * j)] = v;
                dst[size_t(2 * i + 1) * size_t(2 * W) + size_t(2 * j + 1)] = v;
            }
    }
    const bool ng = tp.needs_grad(x);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        auto& gx = t.grad(x);
        for (int bc = 0; bc < B * C; ++bc) {
            const T* src = g.data() + size_t(bc) * size_t(4) * size_t(H) * size_t(W);
            T* dst = gx.data() + size_t(bc) * size_t(H) * size_t(W);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    dst[size_t(i) * size_t(W) + size_t(j)] +=
                        src[size_t(2 * i) * size_t(2 * W) + size_t(2 * j)] +
                        src[size_t(2 * i) * size_t(2 * W) + size_t(2 * j + 1)] +
                        src[size_t(2 * i + 1) * size_t(2 * W) + size_t(2 * j)] +
                        src[size_t(2 * i + 1) * size_t(2 * W) + size_t(2 * j + 1)];
        }
    });
}

// concat along channel dim: [B,C1,H,W] + [B,C2,H,W] -> [B,C1+C2,H,W]
template <typename T>
Var concat_ch(Tape<T>& tp, Var a, Var b) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) ||
        av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
        throw ShapeError("concat_ch shape mismatch");
    const int B = av.dim(0), C1 = av.dim(1), C2 = bv.dim(1), H = av.dim(2), W = av.dim(3);
    const size_t hw = size_t(H) * size_t(W);
    Ten<T> out({B, C1 + C2, H, W});
    for (int bi = 0; bi < B; ++bi) {
        std::copy(av.v.begin() + long(size_t(bi) * C1 * hw),
                  av.v.begin() + long((size_t(bi) + 1) * C1 * hw),
                  out.v.begin() + long(size_t(bi) * (C1 + C2) * hw));
        std::copy(bv.v.begin() + long(size_t(bi) * C2 * hw),
                  bv.v.begin() + long((size_t(bi) + 1) * C2 * hw),
                  out.v.begin() + long(size_t(bi) * (C1 + C2) * hw + C1 * hw));
    }
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        if (t.needs_grad(a)) {
            auto& ga = t.grad(a);
            for (int bi = 0; bi < B; ++bi)
                for (size_t i = 0; i < size_t(C1) * hw; ++i)
                    ga.v[size_t(bi) * C1 * hw + i] += g.v[size_t(bi) * (C1 + C2) * hw + i];
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (int bi = 0; bi < B; ++bi)
                for (size_t i = 0; i < size_t(C2) * hw; ++i)
                    gb.v[size_t(bi) * C2 * hw + i] +=
                        g.v[size_t(bi) * (C1 + C2) * hw + C1 * hw + i];
        }
    });
}

// x[B,C,H,W] + v[B,C] broadcast over spatial dims
template <typename T>
Var add_bias_bc(Tape<T>& tp, Var x, Var v) {
    const auto& xv = tp.val(x);
    const auto& vv = tp.val(v);
    if (xv.rank() != 4 || vv.rank() != 2 || vv.dim(0) != xv.dim(0) ||
        vv.dim(1) != xv.dim(1))
        throw ShapeError("add_bias_bc shape mismatch");
    const int B = xv.dim(0), C = xv.dim(1);
    const size_t hw = size_t(xv.dim(2)) * size_t(xv.dim(3));
    Ten<T> out(xv.shape);
    for (int bc = 0; bc < B * C; ++bc) {
        const T bias = vv.v[size_t(bc)];
        const T* src = xv.data() + size_t(bc) * hw;
        T* dst = out.data() + size_t(bc) * hw;
        for (size_t i = 0; i < hw; ++i) dst[i] = src[i] + bias;
    }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(v);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        if (t.needs_grad(x)) {
            auto& gx = t.grad(x);
            for (size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i];
        }
        if (t.needs_grad(v)) {
            auto& gv = t.grad(v);
            for (int bc = 0; bc < B * C; ++bc) {
                const T* src = g.data() + size_t(bc) * hw;
                T acc = T(0);
                for (size_t i = 0; i < hw; ++i) acc += src[i];
                gv.v[size_t(bc)] += acc;
            }
        }
    });
}

// --------------------------------------------------------------- attention

// scaled dot-product attention with pre-projected q,k,v
// q[B,nq,C], k[B,nk,C], v[B,nk,C], C % heads == 0; scale 1/sqrt(C/heads)
template <typename T>
Var attention(Tape<T>& tp, Var q, Var k, Var v, int heads) {
    const auto& qv = tp.val(q);
    const auto& kv = tp.val(k);
    const auto& vv = tp.val(v);
    if (qv.rank() != 3 || kv.rank() != 3 || vv.rank() != 3)
        throw ShapeError("attention expects rank-3 inputs");
    const int B = qv.dim(0), nq = qv.dim(1), C = qv.dim(2);
    const int nk = kv.dim(1);
    if (kv.dim(0) != B || vv.dim(0) != B || kv.dim(2) != C || vv.dim(2) != C ||
        vv.dim(1) != nk)
        throw ShapeError("attention shape mismatch");
    if (C % heads != 0) throw ShapeError("attention heads must divide width");
    const int dh = C / heads;
    const T sc = T(1) / std::sqrt(T(dh));

    Ten<T> out({B, nq, C});
    auto probs = std::make_shared<std::vector<Ten<T>>>();
    probs->assign(size_t(B) * size_t(heads), Ten<T>());

    // strided per-head views: row stride of token matrices is C
    using SMat = Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>>;
    using SMatW = Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>>;
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < heads; ++h) {
            SMat Qh(qv.data() + (size_t(b) * size_t(nq)) * size_t(C) + size_t(h) * size_t(dh),
                    nq, dh, Eigen::OuterStride<>(C));
            SMat Kh(kv.data() + (size_t(b) * size_t(nk)) * size_t(C) + size_t(h) * size_t(dh),
                    nk, dh, Eigen::OuterStride<>(C));
            SMat Vh(vv.data() + (size_t(b) * size_t(nk)) * size_t(C) + size_t(h) * size_t(dh),
                    nk, dh, Eigen::OuterStride<>(C));
            Ten<T>& P = (*probs)[size_t(b) * size_t(heads) + size_t(h)];
            P = Ten<T>({nq, nk});
            EMap<T> Pm(P.data(), nq, nk);
            Pm.noalias() = Qh * Kh.transpose();
            Pm *= sc;
            for (int i = 0; i < nq; ++i) {
                T mx = Pm(i, 0);
                for (int j = 1; j < nk; ++j) mx = std::max(mx, Pm(i, j));
                T sum = T(0);
                for (int j = 0; j < nk; ++j) {
                    Pm(i, j) = std::exp(Pm(i, j) - mx);
                    sum += Pm(i, j);
                }
                for (int j = 0; j < nk; ++j) Pm(i, j) /= sum;
            }
            SMatW Oh(out.data() + (size_t(b) * size_t(nq)) * size_t(C) + size_t(h) * size_t(dh),
                     nq, dh, Eigen::OuterStride<>(C));
            Oh.noalias() = Pm * Vh;
        }
    }
    const bool ng = tp.needs_grad(q) || tp.needs_grad(k) || tp.needs_grad(v);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        const auto& qv2 = t.val(q);
        const auto& kv2 = t.val(k);
        const auto& vv2 = t.val(v);
        const bool nq_grad = t.needs_grad(q);
        const bool nk_grad = t.needs_grad(k);
        const bool nv_grad = t.needs_grad(v);
        auto* gq = nq_grad ? &t.grad(q) : nullptr;
        auto* gk = nk_grad ? &t.grad(k) : nullptr;
        auto* gv = nv_grad ? &t.grad(v) : nullptr;
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < heads; ++h) {
                SMat Qh(qv2.data() + (size_t(b) * size_t(nq)) * size_t(C) + size_t(h) * size_t(dh),
                        nq, dh, Eigen::OuterStride<>(C));
                SMat Kh(kv2.data() + (size_t(b) * size_t(nk)) * size_t(C) + size_t(h) * size_t(dh),
                        nk, dh, Eigen::OuterStride<>(C));
                SMat Vh(vv2.data() + (size_t(b) * size_t(nk)) * size_t(C) + size_t(h) * size_t(dh),
                        nk, dh, Eigen::OuterStride<>(C));
                SMat Gh(g.data() + (size_t(b) * size_t(nq)) * size_t(C) + size_t(h) * size_t(dh),
                        nq, dh, Eigen::OuterStride<>(C));
                const Ten<T>& P = (*probs)[size_t(b) * size_t(heads) + size_t(h)];
                ECMap<T> Pm(P.data(), nq, nk);

                EMat<T> dP(nq, nk);
                dP.noalias() = Gh * Vh.transpose();
                // softmax backward
                EMat<T> dS(nq, nk);
                for (int i = 0; i < nq; ++i) {
                    T dot = T(0);
                    for (int j = 0; j < nk; ++j) dot += dP(i, j) * Pm(i, j);
                    for (int j = 0; j < nk; ++j)
                        dS(i, j) = Pm(i, j) * (dP(i, j) - dot);
                }
                dS *= sc;
                if (nv_grad) {
                    SMatW gVh(gv->data() + (size_t(b) * size_t(nk)) * size_t(C) +
                                  size_t(h) * size_t(dh),
                              nk, dh, Eigen::OuterStride<>(C));
                    gVh.noalias() += Pm.transpose() * Gh;
                }
                if (nq_grad) {
                    SMatW gQh(gq->data() + (size_t(b) * size_t(nq)) * size_t(C) +
                                  size_t(h) * size_t(dh),
                              nq, dh, Eigen::OuterStride<>(C));
                    gQh.noalias() += dS * Kh;
                }
                if (nk_grad) {
                    SMatW gKh(gk->data() + (size_t(b) * size_t(nk)) * size_t(C) +
                                  size_t(h) * size_t(dh),
                              nk, dh, Eigen::OuterStride<>(C));
                    gKh.noalias() += dS.transpose() * Qh;
                }
            }
        }
    });
}

// [B,C,H,W] -> [B,H*W,C]
template <typename T>
Var chw_to_tokens(Tape<T>& tp, Var x) {
    const auto& xv = tp.val(x);
    if (xv.rank() != 4) throw ShapeError("chw_to_tokens expects rank 4");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int N = H * W;
    Ten<T> out({B, N, C});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < N; ++i)
                out.v[(size_t(b) * size_t(N) + size_t(i)) * size_t(C) + size_t(c)] =
                    xv.v[(size_t(b) * size_t(C) + size_t(c)) * size_t(N) + size_t(i)];
    const bool ng = tp.needs_grad(x);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        auto& gx = t.grad(x);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < N; ++i)
                    gx.v[(size_t(b) * size_t(C) + size_t(c)) * size_t(N) + size_t(i)] +=
                        g.v[(size_t(b) * size_t(N) + size_t(i)) * size_t(C) + size_t(c)];
    });
}

// [B,H*W,C] -> [B,C,H,W]
template <typename T>
Var tokens_to_chw(Tape<T>& tp, Var x, int H, int W) {
    const auto& xv = tp.val(x);
    if (xv.rank() != 3 || xv.dim(1) != H * W)
        throw ShapeError("tokens_to_chw shape mismatch");
    const int B = xv.dim(0), N = xv.dim(1), C = xv.dim(2);
    Ten<T> out({B, C, H, W});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < N; ++i)
                out.v[(size_t(b) * size_t(C) + size_t(c)) * size_t(N) + size_t(i)] =
                    xv.v[(size_t(b) * size_t(N) + size_t(i)) * size_t(C) + size_t(c)];
    const bool ng = tp.needs_grad(x);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        auto& gx = t.grad(x);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < N; ++i)
                    gx.v[(size_t(b) * size_t(N) + size_t(i)) * size_t(C) + size_t(c)] +=
                        g.v[(size_t(b) * size_t(C) + size_t(c)) * size_t(N) + size_t(i)];
    });
}

// ----------------------------------------------------------- table lookups

template <typename T>
Var gather_rows(Tape<T>& tp, Var table, const std::vector<int>& indices) {
    const auto& tv = tp.val(table);
    if (tv.rank() != 2) throw ShapeError("gather_rows expects rank-2 table");
    const int V = tv.dim(0), d = tv.dim(1);
    Ten<T> out({int(indices.size()), d});
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= V) throw InputError("row index out of range");
        std::copy(tv.data() + size_t(indices[i]) * size_t(d),
                  tv.data() + (size_t(indices[i]) + 1) * size_t(d),
                  out.data() + i * size_t(d));
    }
    const bool ng = tp.needs_grad(table);
    const int oid = tp.next_id();
    auto idx = indices;
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        auto& gt = t.grad(table);
        for (size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < d; ++j)
                gt.v[size_t(idx[i]) * size_t(d) + size_t(j)] +=
                    g.v[i * size_t(d) + size_t(j)];
    });
}

// replace one row of x[n,d] with r (shape [d] or [1,d])
template <typename T>
Var replace_row(Tape<T>& tp, Var x, int row, Var r) {
    const auto& xv = tp.val(x);
    const auto& rv = tp.val(r);
    if (xv.rank() != 2) throw ShapeError("replace_row expects rank 2");
    const int n = xv.dim(0), d = xv.dim(1);
    if (row < 0 || row >= n) throw InputError("replace_row index out of range");
    if (rv.size() != d) throw ShapeError("replace_row width mismatch");
    Ten<T> out = xv;
    std::copy(rv.v.begin(), rv.v.end(), out.v.begin() + long(size_t(row) * size_t(d)));
    const bool ng = tp.needs_grad(x) || tp.needs_grad(r);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const auto& g = t.grad({oid});
        if (t.needs_grad(x)) {
            auto& gx = t.grad(x);
            for (int i = 0; i < n; ++i) {
                if (i == row) continue;
                for (int j = 0; j < d; ++j)
                    gx.v[size_t(i) * size_t(d) + size_t(j)] +=
                        g.v[size_t(i) * size_t(d) + size_t(j)];
            }
        }
        if (t.needs_grad(r)) {
            auto& gr = t.grad(r);
            for (int j = 0; j < d; ++j)
                gr.v[size_t(j)] += g.v[size_t(row) * size_t(d) + size_t(j)];
        }
    });
}

// --------------------------------------------------------------------- loss

// mean over all elements of (a - b)^2
template <typename T>
Var mse(Tape<T>& tp, Var a, Var b) {
    if (!tp.val(a).same_shape(tp.val(b))) throw ShapeError("mse shape mismatch");
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    const size_t n = av.v.size();
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) {
        T d = av.v[i] - bv.v[i];
        acc += d * d;
    }
    Ten<T> out({1});
    out.v[0] = acc / T(n);
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.next_id();
    return tp.make(std::move(out), ng, [=](Tape<T>& t) {
        const T g = t.grad({oid}).v[0];
        const auto& aa = t.val(a);
        const auto& bb = t.val(b);
        const T c = g * T(2) / T(n);
        if (t.needs_grad(a)) {
            auto& ga = t.grad(a);
            for (size_t i = 0; i < n; ++i) ga.v[i] += c * (aa.v[i] - bb.v[i]);
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (size_t i = 0; i < n; ++i) gb.v[i] -= c * (aa.v[i] - bb.v[i]);
        }
    });
}

}  // namespace melstyle::ad
