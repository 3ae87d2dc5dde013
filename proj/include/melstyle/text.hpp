#pragma once

#include <optional>
#include <string>
#include <vector>

#include "melstyle/nn.hpp"
#include "melstyle/tensor.hpp"

namespace melstyle::text {

// Token table with reserved specials. 32 tokens total in the standard build;
// "*" is the style placeholder whose embedding is produced by the TVE.
class Vocabulary {
public:
    static Vocabulary standard();
    static Vocabulary from_tokens(std::vector<std::string> tokens);
    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    int index(const std::string& token) const;  // throws InputError on unknown
    bool has(const std::string& token) const;
    const std::string& token(int idx) const;
    int size() const { return int(tokens_.size()); }

    int pad_id() const { return pad_; }
    int bos_id() const { return bos_; }
    int eos_id() const { return eos_; }
    int star_id() const { return star_; }

    // BOS + words + EOS, padded to max_len; whitespace-tokenized caption
    std::vector<int> encode_caption(const std::string& caption, int max_len) const;

private:
    std::vector<std::string> tokens_;
    int pad_ = -1, bos_ = -1, eos_ = -1, star_ = -1;
    void index_specials();
};

// Plain scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V.
// Reference implementation used directly by the TVE math tests.
Ten<double> attention(const Ten<double>& q, const Ten<double>& k,
                      const Ten<double>& v);

struct TveConfig {
    int d = 128;          // embedding width, matches the text encoder
    int groups = 8;       // v0 is reshaped into `groups` rows of d/groups
    int t_embed_dim = 128;
    int mlp_hidden = 128;
    int n_stacks = 1;     // self+cross attention pairs
};

// Time-varying encoder: timestep MLP added to the initial placeholder
// embedding, then grouped self-attention and cross-attention (queries from
// the self-attention output, keys/values from the pre-attention vector).
// The MLP output layer starts at zero, so an untrained TVE is exactly
// timestep-independent.
template <typename T>
struct Tve {
    TveConfig cfg;
    nn::Linear<T> mlp1, mlp2;
    struct Stack {
        nn::Linear<T> wq_s, wk_s, wv_s;  // self-attention projections
        nn::Linear<T> wq_c, wk_c, wv_c;  // cross-attention projections
    };
    std::vector<Stack> stacks;

    static Tve create(nn::ParamSet<T>& ps, const std::string& prefix,
                      const TveConfig& cfg, Rng& rng) {
        if (cfg.d % cfg.groups != 0)
            throw ConfigError("tve groups must divide embedding width");
        Tve t;
        t.cfg = cfg;
        t.mlp1 = nn::Linear<T>::create(ps, prefix + ".mlp1", cfg.t_embed_dim,
                                       cfg.mlp_hidden, rng);
        t.mlp2 = nn::Linear<T>::create(ps, prefix + ".mlp2", cfg.mlp_hidden, cfg.d,
                                       rng, true, /*zero_init=*/true);
        const int dg = cfg.d / cfg.groups;
        for (int s = 0; s < cfg.n_stacks; ++s) {
            std::string p = prefix + ".stack" + std::to_string(s);
            typename Tve::Stack st;
            st.wq_s = nn::Linear<T>::create(ps, p + ".wq_s", dg, dg, rng, false);
            st.wk_s = nn::Linear<T>::create(ps, p + ".wk_s", dg, dg, rng, false);
            st.wv_s = nn::Linear<T>::create(ps, p + ".wv_s", dg, dg, rng, false);
            st.wq_c = nn::Linear<T>::create(ps, p + ".wq_c", dg, dg, rng, false);
            st.wk_c = nn::Linear<T>::create(ps, p + ".wk_c", dg, dg, rng, false);
            st.wv_c = nn::Linear<T>::create(ps, p + ".wv_c", dg, dg, rng, false);
            t.stacks.push_back(st);
        }
        return t;
    }

    // graph-building forward; v_o_star is a tape var of shape [d]
    ad::Var fwd(ad::Tape<T>& tp, double t, ad::Var v_o_star) const {
        using namespace ad;
        Var te = tp.input(nn::sinusoidal_embedding<T>(t, cfg.t_embed_dim));
        Var h = mlp1.fwd(tp, te);
        h = silu(tp, h);
        h = mlp2.fwd(tp, h);
        Var v0 = add(tp, v_o_star, h);
        const int g = cfg.groups, dg = cfg.d / g;
        Var seq = reshape(tp, v0, {g, dg});
        for (const auto& st : stacks) {
            // self attention over the g groups
            Var qs = st.wq_s.fwd(tp, seq);
            Var ks = st.wk_s.fwd(tp, seq);
            Var vs = st.wv_s.fwd(tp, seq);
            Var v1 = attention(tp, reshape(tp, qs, {1, g, dg}),
                               reshape(tp, ks, {1, g, dg}),
                               reshape(tp, vs, {1, g, dg}), 1);
            v1 = reshape(tp, v1, {g, dg});
            // cross attention: queries from v1, keys/values from the stack input
            Var qc = st.wq_c.fwd(tp, v1);
            Var kc = st.wk_c.fwd(tp, seq);
            Var vc = st.wv_c.fwd(tp, seq);
            Var vi = attention(tp, reshape(tp, qc, {1, g, dg}),
                               reshape(tp, kc, {1, g, dg}),
                               reshape(tp, vc, {1, g, dg}), 1);
            seq = reshape(tp, vi, {g, dg});
        }
        return reshape(tp, seq, {cfg.d});
    }
};

struct TextEncoderConfig {
    int d = 128;
    int n_layers = 2;
    int n_heads = 4;
    int max_len = 8;
    int mlp_ratio = 2;
    int vocab_size = 32;
};

template <typename T>
struct TextEncoder {
    TextEncoderConfig cfg;
    ad::Param<T>* tok_table = nullptr;  // [V, d]
    ad::Param<T>* pos_table = nullptr;  // [max_len, d]
    struct Layer {
        nn::LayerNorm<T> ln1, ln2;
        nn::Linear<T> wq, wk, wv, wo, fc1, fc2;
    };
    std::vector<Layer> layers;
    nn::LayerNorm<T> ln_final;

    static TextEncoder create(nn::ParamSet<T>& ps, const std::string& prefix,
                              const TextEncoderConfig& cfg, Rng& rng) {
        TextEncoder e;
        e.cfg = cfg;
        e.tok_table = &ps.add(prefix + ".tok",
                              nn::normal_init<T>({cfg.vocab_size, cfg.d}, rng, 0.02));
        e.pos_table = &ps.add(prefix + ".pos",
                              nn::normal_init<T>({cfg.max_len, cfg.d}, rng, 0.02));
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string p = prefix + ".layer" + std::to_string(l);
            Layer ly;
            ly.ln1 = nn::LayerNorm<T>::create(ps, p + ".ln1", cfg.d);
            ly.wq = nn::Linear<T>::create(ps, p + ".wq", cfg.d, cfg.d, rng);
            ly.wk = nn::Linear<T>::create(ps, p + ".wk", cfg.d, cfg.d, rng);
            ly.wv = nn::Linear<T>::create(ps, p + ".wv", cfg.d, cfg.d, rng);
            ly.wo = nn::Linear<T>::create(ps, p + ".wo", cfg.d, cfg.d, rng);
            ly.ln2 = nn::LayerNorm<T>::create(ps, p + ".ln2", cfg.d);
            ly.fc1 = nn::Linear<T>::create(ps, p + ".fc1", cfg.d,
                                           cfg.d * cfg.mlp_ratio, rng);
            ly.fc2 = nn::Linear<T>::create(ps, p + ".fc2", cfg.d * cfg.mlp_ratio,
                                           cfg.d, rng);
            e.layers.push_back(ly);
        }
        e.ln_final = nn::LayerNorm<T>::create(ps, prefix + ".ln_f", cfg.d);
        return e;
    }

    // graph-building encode; star_emb replaces the row at star_pos when set
    ad::Var encode(ad::Tape<T>& tp, const std::vector<int>& tokens, int star_pos,
                   ad::Var star_emb) const {
        using namespace ad;
        if (int(tokens.size()) != cfg.max_len)
            throw ShapeError("token sequence must be padded to max_len");
        Var emb = gather_rows(tp, tp.param(*tok_table), tokens);
        if (star_pos >= 0) {
            if (!star_emb.valid())
                throw UsageError("placeholder token requires a TVE embedding");
            emb = replace_row(tp, emb, star_pos, star_emb);
        }
        std::vector<int> pos_idx(size_t(cfg.max_len));
        for (int i = 0; i < cfg.max_len; ++i) pos_idx[size_t(i)] = i;
        emb = add(tp, emb, gather_rows(tp, tp.param(*pos_table), pos_idx));

        const int L = cfg.max_len;
        Var x = emb;  // [L, d]
        for (const auto& ly : layers) {
            Var h = ly.ln1.fwd(tp, x);
            Var q = reshape(tp, ly.wq.fwd(tp, h), {1, L, cfg.d});
            Var k = reshape(tp, ly.wk.fwd(tp, h), {1, L, cfg.d});
            Var v = reshape(tp, ly.wv.fwd(tp, h), {1, L, cfg.d});
            Var att = attention(tp, q, k, v, cfg.n_heads);
            att = ly.wo.fwd(tp, reshape(tp, att, {L, cfg.d}));
            x = add(tp, x, att);
            Var m = ly.ln2.fwd(tp, x);
            m = ly.fc1.fwd(tp, m);
            m = silu(tp, m);
            m = ly.fc2.fwd(tp, m);
            x = add(tp, x, m);
        }
        return ln_final.fwd(tp, x);  // [L, d]
    }
};

// Per-token condition vectors handed to the denoiser.
struct ConditionSet {
    TenF rows;  // [n_tokens, d]
    bool timestep_dependent = false;
};

// find the placeholder position in a padded token sequence, -1 if absent
int find_star(const std::vector<int>& tokens, int star_id);

// Convenience non-graph wrappers (float models).
TenF tve_forward(const Tve<float>& tve, double t, const ad::Param<float>& v_o_star);

ConditionSet encode_text(const TextEncoder<float>& enc, const Vocabulary& vocab,
                         const std::string& caption, double t,
                         const Tve<float>* tve, const ad::Param<float>* v_o_star);

}  // namespace melstyle::text
