#pragma once

#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "melstyle/autodiff.hpp"
#include "melstyle/rng.hpp"

namespace melstyle::nn {

using ad::Param;
using ad::Tape;
using ad::Var;

// Owning registry of named parameters; stable addresses, ordered iteration
// (checkpoint layout and optimizer order follow creation order).
template <typename T>
class ParamSet {
public:
    Param<T>& add(const std::string& name, Ten<T> init, bool trainable = true) {
        for (auto& p : params_)
            if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
        Param<T> p;
        p.name = name;
        p.value = std::move(init);
        p.trainable = trainable;
        params_.push_back(std::move(p));
        return params_.back();
    }

    Param<T>* find(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    std::vector<Param<T>*> all() {
        std::vector<Param<T>*> out;
        for (auto& p : params_) out.push_back(&p);
        return out;
    }

    void zero_grads() {
        for (auto& p : params_) p.zero_grad();
    }

    void set_trainable(bool t) {
        for (auto& p : params_) p.trainable = t;
    }

    long long count_scalars() const {
        long long n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    // order- and content-sensitive hash of all parameter values
    uint64_t value_hash() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        auto mix_bytes = [&h](const void* data, size_t len) {
            const unsigned char* b = static_cast<const unsigned char*>(data);
            for (size_t i = 0; i < len; ++i) {
                h ^= b[i];
                h *= 0x100000001b3ULL;
            }
        };
        for (const auto& p : params_) {
            mix_bytes(p.name.data(), p.name.size());
            mix_bytes(p.value.v.data(), p.value.v.size() * sizeof(T));
        }
        return h;
    }

private:
    std::deque<Param<T>> params_;
};

// ------------------------------------------------------------------- init

template <typename T>
Ten<T> normal_init(std::vector<int> shape, Rng& rng, double stddev) {
    Ten<T> t(std::move(shape));
    for (auto& x : t.v) x = T(rng.normal() * stddev);
    return t;
}

template <typename T>
Ten<T> he_init(std::vector<int> shape, Rng& rng, long long fan_in) {
    return normal_init<T>(std::move(shape), rng, std::sqrt(2.0 / double(fan_in)));
}

// ------------------------------------------------------------------ layers

template <typename T>
struct Linear {
    Param<T>* w = nullptr;
    Param<T>* b = nullptr;

    static Linear create(ParamSet<T>& ps, const std::string& name, int d_in,
                         int d_out, Rng& rng, bool bias = true,
                         bool zero_init = false) {
        Linear l;
        Ten<T> wv = zero_init ? Ten<T>({d_out, d_in})
                              : he_init<T>({d_out, d_in}, rng, d_in);
        l.w = &ps.add(name + ".w", std::move(wv));
        if (bias) l.b = &ps.add(name + ".b", Ten<T>({d_out}));
        return l;
    }

    Var fwd(Tape<T>& tp, Var x) const {
        Var bb = b ? tp.param(*b) : Var{};
        return ad::linear(tp, x, tp.param(*w), bb);
    }
};

template <typename T>
struct Conv2d {
    Param<T>* w = nullptr;
    Param<T>* b = nullptr;
    int stride = 1, pad = 1;

    static Conv2d create(ParamSet<T>& ps, const std::string& name, int c_in,
                         int c_out, int k, Rng& rng, int stride = 1, int pad = 1,
                         bool zero_init = false) {
        Conv2d c;
        c.stride = stride;
        c.pad = pad;
        Ten<T> wv = zero_init
                        ? Ten<T>({c_out, c_in, k, k})
                        : he_init<T>({c_out, c_in, k, k}, rng, (long long)c_in * k * k);
        c.w = &ps.add(name + ".w", std::move(wv));
        c.b = &ps.add(name + ".b", Ten<T>({c_out}));
        return c;
    }

    Var fwd(Tape<T>& tp, Var x) const {
        return ad::conv2d(tp, x, tp.param(*w), tp.param(*b), stride, pad);
    }
};

template <typename T>
struct GroupNorm {
    Param<T>* gamma = nullptr;
    Param<T>* beta = nullptr;
    int groups = 8;

    static GroupNorm create(ParamSet<T>& ps, const std::string& name, int channels,
                            int groups) {
        GroupNorm g;
        g.groups = groups;
        Ten<T> ones({channels});
        for (auto& x : ones.v) x = T(1);
        g.gamma = &ps.add(name + ".gamma", std::move(ones));
        g.beta = &ps.add(name + ".beta", Ten<T>({channels}));
        return g;
    }

    Var fwd(Tape<T>& tp, Var x) const {
        return ad::groupnorm(tp, x, groups, tp.param(*gamma), tp.param(*beta));
    }
};

template <typename T>
struct LayerNorm {
    Param<T>* gamma = nullptr;
    Param<T>* beta = nullptr;

    static LayerNorm create(ParamSet<T>& ps, const std::string& name, int d) {
        LayerNorm l;
        Ten<T> ones({d});
        for (auto& x : ones.v) x = T(1);
        l.gamma = &ps.add(name + ".gamma", std::move(ones));
        l.beta = &ps.add(name + ".beta", Ten<T>({d}));
        return l;
    }

    Var fwd(Tape<T>& tp, Var x) const {
        return ad::layernorm(tp, x, tp.param(*gamma), tp.param(*beta));
    }
};

// -------------------------------------------------------------- optimizer

template <typename T>
struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long step_count = 0;

    void step(const std::vector<Param<T>*>& params) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, double(step_count));
        const double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (Param<T>* p : params) {
            if (!p->trainable) continue;
            p->ensure_grad();
            if (p->adam_m.v.size() != p->value.v.size()) {
                p->adam_m = Ten<T>(p->value.shape);
                p->adam_v = Ten<T>(p->value.shape);
            }
            for (size_t i = 0; i < p->value.v.size(); ++i) {
                const double g = double(p->grad.v[i]);
                double m = beta1 * double(p->adam_m.v[i]) + (1.0 - beta1) * g;
                double v = beta2 * double(p->adam_v.v[i]) + (1.0 - beta2) * g * g;
                p->adam_m.v[i] = T(m);
                p->adam_v.v[i] = T(v);
                p->value.v[i] -=
                    T(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
            }
        }
    }
};

// ------------------------------------------------------- timestep embedding

// standard sinusoidal embedding of a (possibly fractional) timestep
template <typename T>
Ten<T> sinusoidal_embedding(double t, int dim) {
    Ten<T> e({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half - 1));
        e.v[size_t(i)] = T(std::sin(t * freq));
        e.v[size_t(half + i)] = T(std::cos(t * freq));
    }
    return e;
}

}  // namespace melstyle::nn
