#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "melstyle/checkpoint.hpp"
#include "melstyle/corpus.hpp"
#include "melstyle/dsp.hpp"
#include "melstyle/nn.hpp"
#include "melstyle/text.hpp"

namespace melstyle::diff {

// ------------------------------------------------------------- schedule

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // index 1..T (beta[0] unused, = 0)
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // cumulative product, alpha_bar[0] = 1
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// closed-form forward diffusion: sqrt(ab_t) z0 + sqrt(1-ab_t) eps
template <typename S>
Ten<S> q_sample(const Ten<S>& z0, int t, const Ten<S>& eps,
                const NoiseSchedule& s) {
    if (t < 0 || t > s.T) throw InputError("q_sample timestep out of range");
    if (!z0.same_shape(eps)) throw ShapeError("q_sample eps shape mismatch");
    const double ab = s.alpha_bar[size_t(t)];
    const S c0 = S(std::sqrt(ab)), c1 = S(std::sqrt(1.0 - ab));
    Ten<S> out(z0.shape);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = c0 * z0.v[i] + c1 * eps.v[i];
    return out;
}

// one deterministic (eta = 0) DDIM update from t to t_prev
template <typename S>
Ten<S> ddim_step(const Ten<S>& z_t, const Ten<S>& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s) {
    if (t_prev >= t) throw InputError("ddim_step requires t_prev < t");
    if (t < 1 || t > s.T) throw InputError("ddim_step timestep out of range");
    if (!z_t.same_shape(eps_hat)) throw ShapeError("ddim_step shape mismatch");
    const double ab_t = s.alpha_bar[size_t(t)];
    const double ab_p = s.alpha_bar[size_t(t_prev)];
    const S inv_sqrt_ab = S(1.0 / std::sqrt(ab_t));
    const S sig_t = S(std::sqrt(1.0 - ab_t));
    const S c_p = S(std::sqrt(ab_p));
    const S sig_p = S(std::sqrt(1.0 - ab_p));
    Ten<S> out(z_t.shape);
    for (size_t i = 0; i < out.v.size(); ++i) {
        const S x0 = (z_t.v[i] - sig_t * eps_hat.v[i]) * inv_sqrt_ab;
        out.v[i] = c_p * x0 + sig_p * eps_hat.v[i];
    }
    return out;
}

// uniformly spaced timestep grid from t_start down to 0 (n_steps intervals,
// clipped to t_start when fewer timesteps are available)
std::vector<int> ddim_timesteps(int t_start, int n_steps, bool* clipped = nullptr);

// -------------------------------------------------------------- guidance

// single conditional model call: eps = model(z[1,h,w] or [c,h,w], t, cond)
using EpsFn =
    std::function<TenF(const TenF& z, int t, const text::ConditionSet& cond)>;

// paired call evaluating the conditional and unconditional branches
using EpsPairFn = std::function<std::pair<TenF, TenF>(
    const TenF& z, int t, const text::ConditionSet& cond,
    const text::ConditionSet& uncond)>;

EpsPairFn pair_from_single(const EpsFn& f);

// classifier-free guidance: eps_u + scale * (eps_c - eps_u)
TenF guided_eps(const TenF& z_t, int t, const text::ConditionSet& cond,
                const text::ConditionSet& uncond, double scale,
                const EpsPairFn& model);

// condition provider; re-queried at every sampler step so TVE conditions
// can vary along the trajectory
using CondFn = std::function<text::ConditionSet(double t)>;

struct SamplerConfig {
    int n_steps = 50;
    double eta = 0.0;  // fixed 0; asserted
    double guidance_scale = 4.0;
    uint64_t seed = 0;
};

TenF ddim_sample(const TenF& z_start, int t_start, const CondFn& cond,
                 const CondFn& uncond, const SamplerConfig& cfg,
                 const EpsPairFn& model, const NoiseSchedule& s);

// ------------------------------------------------------------------ unet

struct UNetConfig {
    int in_ch = 1;
    int base = 64;                       // input resolution (square)
    std::vector<int> widths = {32, 64, 128};
    int t_embed_dim = 128;
    int cond_dim = 128;
    int gn_groups = 8;
    int attn_heads = 4;
};

// U-shaped eps predictor: three resolutions, timestep injection per block,
// one cross-attention block onto the condition rows at the bottleneck.
template <typename T>
struct UNet {
    UNetConfig cfg;

    struct ResBlock {
        nn::GroupNorm<T> gn1, gn2;
        nn::Conv2d<T> conv1, conv2;
        nn::Linear<T> temb;
        nn::Conv2d<T> skip;
        bool has_skip = false;

        static ResBlock create(nn::ParamSet<T>& ps, const std::string& p, int c_in,
                               int c_out, int t_dim, int gn_groups, Rng& rng) {
            ResBlock rb;
            rb.gn1 = nn::GroupNorm<T>::create(ps, p + ".gn1", c_in, gn_groups);
            rb.conv1 = nn::Conv2d<T>::create(ps, p + ".conv1", c_in, c_out, 3, rng);
            rb.temb = nn::Linear<T>::create(ps, p + ".temb", t_dim, c_out, rng);
            rb.gn2 = nn::GroupNorm<T>::create(ps, p + ".gn2", c_out, gn_groups);
            rb.conv2 = nn::Conv2d<T>::create(ps, p + ".conv2", c_out, c_out, 3, rng);
            if (c_in != c_out) {
                rb.skip = nn::Conv2d<T>::create(ps, p + ".skip", c_in, c_out, 1, rng,
                                                1, 0);
                rb.has_skip = true;
            }
            return rb;
        }

        ad::Var fwd(ad::Tape<T>& tp, ad::Var x, ad::Var temb_act) const {
            using namespace ad;
            Var h = conv1.fwd(tp, silu(tp, gn1.fwd(tp, x)));
            h = add_bias_bc(tp, h, temb.fwd(tp, temb_act));
            h = conv2.fwd(tp, silu(tp, gn2.fwd(tp, h)));
            Var sk = has_skip ? skip.fwd(tp, x) : x;
            return add(tp, h, sk);
        }
    };

    nn::Linear<T> tm1, tm2;
    nn::Conv2d<T> stem;
    ResBlock rb_d0, rb_d1, rb_d2, rb_mid, rb_u1, rb_u2;
    nn::Conv2d<T> down1, down2, up1_conv, up2_conv;
    nn::GroupNorm<T> attn_gn;
    nn::Linear<T> attn_q, attn_k, attn_v, attn_o;
    nn::GroupNorm<T> head_gn;
    nn::Conv2d<T> head;

    static UNet create(nn::ParamSet<T>& ps, const std::string& prefix,
                       const UNetConfig& cfg, Rng& rng) {
        if (cfg.widths.size() != 3) throw ConfigError("unet expects 3 widths");
        UNet u;
        u.cfg = cfg;
        const int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
        const int td = cfg.t_embed_dim;
        u.tm1 = nn::Linear<T>::create(ps, prefix + ".tm1", td, td, rng);
        u.tm2 = nn::Linear<T>::create(ps, prefix + ".tm2", td, td, rng);
        u.stem = nn::Conv2d<T>::create(ps, prefix + ".stem", cfg.in_ch, w0, 3, rng);
        u.rb_d0 = ResBlock::create(ps, prefix + ".rb_d0", w0, w0, td, cfg.gn_groups, rng);
        u.down1 = nn::Conv2d<T>::create(ps, prefix + ".down1", w0, w1, 3, rng, 2, 1);
        u.rb_d1 = ResBlock::create(ps, prefix + ".rb_d1", w1, w1, td, cfg.gn_groups, rng);
        u.down2 = nn::Conv2d<T>::create(ps, prefix + ".down2", w1, w2, 3, rng, 2, 1);
        u.rb_d2 = ResBlock::create(ps, prefix + ".rb_d2", w2, w2, td, cfg.gn_groups, rng);
        u.attn_gn = nn::GroupNorm<T>::create(ps, prefix + ".attn_gn", w2, cfg.gn_groups);
        u.attn_q = nn::Linear<T>::create(ps, prefix + ".attn_q", w2, w2, rng, false);
        u.attn_k = nn::Linear<T>::create(ps, prefix + ".attn_k", cfg.cond_dim, w2, rng, false);
        u.attn_v = nn::Linear<T>::create(ps, prefix + ".attn_v", cfg.cond_dim, w2, rng, false);
        u.attn_o = nn::Linear<T>::create(ps, prefix + ".attn_o", w2, w2, rng, true,
                                         /*zero_init=*/true);
        u.rb_mid = ResBlock::create(ps, prefix + ".rb_mid", w2, w2, td, cfg.gn_groups, rng);
        u.up1_conv = nn::Conv2d<T>::create(ps, prefix + ".up1", w2, w1, 3, rng);
        u.rb_u1 = ResBlock::create(ps, prefix + ".rb_u1", w1 * 2, w1, td, cfg.gn_groups, rng);
        u.up2_conv = nn::Conv2d<T>::create(ps, prefix + ".up2", w1, w0, 3, rng);
        u.rb_u2 = ResBlock::create(ps, prefix + ".rb_u2", w0 * 2, w0, td, cfg.gn_groups, rng);
        u.head_gn = nn::GroupNorm<T>::create(ps, prefix + ".head_gn", w0, cfg.gn_groups);
        u.head = nn::Conv2d<T>::create(ps, prefix + ".head", w0, cfg.in_ch, 3, rng, 1, 1,
                                       /*zero_init=*/true);
        return u;
    }

    // z [B,in_ch,H,W], ts: per-sample timesteps, cond [B,L,cond_dim]
    ad::Var fwd(ad::Tape<T>& tp, ad::Var z, const std::vector<double>& ts,
                ad::Var cond) const {
        using namespace ad;
        const auto& zv = tp.val(z);
        const int B = zv.dim(0), H = zv.dim(2), W = zv.dim(3);
        if (int(ts.size()) != B) throw ShapeError("unet timestep count mismatch");

        Ten<T> te({B, cfg.t_embed_dim});
        for (int b = 0; b < B; ++b) {
            auto e = nn::sinusoidal_embedding<T>(ts[size_t(b)], cfg.t_embed_dim);
            std::copy(e.v.begin(), e.v.end(),
                      te.v.begin() + long(size_t(b) * size_t(cfg.t_embed_dim)));
        }
        Var temb = tm2.fwd(tp, silu(tp, tm1.fwd(tp, tp.input(std::move(te)))));
        Var tact = silu(tp, temb);  // [B, td]

        Var h0 = stem.fwd(tp, z);
        h0 = rb_d0.fwd(tp, h0, tact);                 // [B,w0,H,W]
        Var h1 = down1.fwd(tp, h0);
        h1 = rb_d1.fwd(tp, h1, tact);                 // [B,w1,H/2,W/2]
        Var h2 = down2.fwd(tp, h1);
        h2 = rb_d2.fwd(tp, h2, tact);                 // [B,w2,H/4,W/4]

        // cross-attention onto the condition rows
        {
            Var xn = attn_gn.fwd(tp, h2);
            Var tok = chw_to_tokens(tp, xn);          // [B,HW/16,w2]
            Var q = attn_q.fwd(tp, tok);
            Var k = attn_k.fwd(tp, cond);
            Var v = attn_v.fwd(tp, cond);
            Var att = attention(tp, q, k, v, cfg.attn_heads);
            att = attn_o.fwd(tp, att);
            h2 = add(tp, h2, tokens_to_chw(tp, att, H / 4, W / 4));
        }
        h2 = rb_mid.fwd(tp, h2, tact);

        Var u1 = up1_conv.fwd(tp, upsample2x(tp, h2));   // [B,w1,H/2,W/2]
        u1 = rb_u1.fwd(tp, concat_ch(tp, u1, h1), tact);
        Var u2 = up2_conv.fwd(tp, upsample2x(tp, u1));   // [B,w0,H,W]
        u2 = rb_u2.fwd(tp, concat_ch(tp, u2, h0), tact);

        return head.fwd(tp, silu(tp, head_gn.fwd(tp, u2)));
    }
};

// ----------------------------------------------------------- latent codec

// identity by default; optional small conv autoencoder with 4x spatial
// compression, trained before the diffusion stage and frozen afterwards
struct CodecConfig {
    bool learned = false;
    int latent_ch = 4;
    int hidden = 32;
};

struct LatentCodec {
    CodecConfig cfg;
    nn::ParamSet<float> ps;
    nn::Conv2d<float> e1, e2, e3, d1, d2, d3;

    static LatentCodec create(const CodecConfig& cfg, uint64_t init_seed);
    // mel values in [-1,1], shape [1,H,W] -> latent [C,H/4,W/4] (or identity)
    TenF encode(const TenF& x) const;
    TenF decode(const TenF& z) const;
    int latent_channels() const { return cfg.learned ? cfg.latent_ch : 1; }
    int spatial_factor() const { return cfg.learned ? 4 : 1; }
};

// --------------------------------------------------------------- bundle

struct ScheduleConfig {
    int T = 256;
    double beta_start = 1e-4 * 1000.0 / 256.0;  // reference schedule rescaled
    double beta_end = 0.02 * 1000.0 / 256.0;
};

struct ModelConfig {
    UNetConfig unet;
    text::TextEncoderConfig enc;
    text::TveConfig tve;  // recorded so inversion artifacts stay compatible
    ScheduleConfig sched;
    CodecConfig codec;
    dsp::DspConfig dsp;
    int frames = 64;  // model window length in mel frames
};

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& json_text);

// Runtime bundle: frozen pretrained backbone + schedule + vocab + codec.
struct Checkpoint {
    ModelConfig cfg;
    NoiseSchedule schedule;
    text::Vocabulary vocab;
    nn::ParamSet<float> enc_ps, unet_ps;
    text::TextEncoder<float> enc;
    UNet<float> unet;
    LatentCodec codec;
    uint64_t corpus_hash = 0;
    uint64_t init_seed = 0;

    static Checkpoint create(const ModelConfig& cfg, uint64_t init_seed);
    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    uint64_t model_hash() const;  // over backbone parameter values
    EpsPairFn eps_pair() const;   // batched cond+uncond denoiser call
    EpsFn eps_single() const;
    text::ConditionSet encode_caption(const std::string& caption, double t) const;
};

// -------------------------------------------------------------- pretrain

struct PretrainConfig {
    int epochs = 60;
    int batch_size = 4;
    double lr = 1e-4;
    double p_uncond = 0.1;
    uint64_t seed = 0;
    int save_every = 500;             // training-state snapshot interval
    std::string state_path;           // optional resumable state file
    bool resume = false;
    int codec_steps = 1500;           // autoencoder pretraining (learned codec)
    std::function<void(int, double)> progress;  // (step, running loss)
};

struct PretrainResult {
    std::vector<float> loss_curve;    // per-step batch loss
    double final_loss = 0.0;          // mean over the last 100 steps
    int steps = 0;
};

// trains text encoder + denoiser (+ codec when learned) from scratch
PretrainResult pretrain(Checkpoint& ckpt, const corpus::CorpusManifest& manifest,
                        const std::string& corpus_dir, const PretrainConfig& cfg);

// load every clip's mel once (keyed by record id)
std::vector<std::pair<const corpus::ClipRecord*, dsp::MelSpectrogram>>
load_corpus_mels(const corpus::CorpusManifest& manifest,
                 const std::string& corpus_dir);

}  // namespace melstyle::diff
