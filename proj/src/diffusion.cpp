#include "melstyle/diffusion.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "melstyle/rng.hpp"

namespace melstyle::diff {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw ConfigError("schedule needs T >= 2");
    if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
        throw ConfigError("need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(size_t(T) + 1, 0.0);
    s.alpha.assign(size_t(T) + 1, 1.0);
    s.alpha_bar.assign(size_t(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        s.beta[size_t(t)] =
            beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
        s.alpha[size_t(t)] = 1.0 - s.beta[size_t(t)];
        s.alpha_bar[size_t(t)] = s.alpha_bar[size_t(t) - 1] * s.alpha[size_t(t)];
    }
    return s;
}

std::vector<int> ddim_timesteps(int t_start, int n_steps, bool* clipped) {
    if (t_start < 0) throw InputError("t_start must be non-negative");
    if (clipped) *clipped = false;
    if (t_start == 0) return {0};
    int n = n_steps;
    if (n > t_start) {
        n = t_start;
        if (clipped) *clipped = true;
    }
    std::vector<int> ts(size_t(n) + 1);
    for (int i = 0; i <= n; ++i)
        ts[size_t(i)] = int(std::lround(double(t_start) * double(n - i) / double(n)));
    return ts;
}

EpsPairFn pair_from_single(const EpsFn& f) {
    return [f](const TenF& z, int t, const text::ConditionSet& c,
               const text::ConditionSet& u) {
        return std::make_pair(f(z, t, c), f(z, t, u));
    };
}

TenF guided_eps(const TenF& z_t, int t, const text::ConditionSet& cond,
                const text::ConditionSet& uncond, double scale,
                const EpsPairFn& model) {
    if (scale < 0) throw InputError("guidance scale must be >= 0");
    auto [ec, eu] = model(z_t, t, cond, uncond);
    if (!ec.same_shape(z_t) || !eu.same_shape(z_t))
        throw ShapeError("denoiser output shape mismatch");
    if (scale == 1.0) return ec;  // keep the trivial algebra exact
    if (scale == 0.0) return eu;
    TenF out(z_t.shape);
    const float s = float(scale);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = eu.v[i] + s * (ec.v[i] - eu.v[i]);
    return out;
}

TenF ddim_sample(const TenF& z_start, int t_start, const CondFn& cond,
                 const CondFn& uncond, const SamplerConfig& cfg,
                 const EpsPairFn& model, const NoiseSchedule& s) {
    if (cfg.eta != 0.0) throw ConfigError("sampler supports only eta = 0");
    if (t_start < 0 || t_start > s.T)
        throw InputError("sampler t_start out of range");
    if (t_start == 0) return z_start;

    bool clipped = false;
    auto ts = ddim_timesteps(t_start, cfg.n_steps, &clipped);
    if (clipped)
        std::fprintf(stderr,
                     "warning: ddim steps clipped to %d (t_start=%d)\n",
                     int(ts.size()) - 1, t_start);

    TenF z = z_start;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        const int t = ts[i], t_prev = ts[i + 1];
        auto c = cond(double(t));
        auto u = uncond(double(t));
        TenF eps = guided_eps(z, t, c, u, cfg.guidance_scale, model);
        z = ddim_step(z, eps, t, t_prev, s);
    }
    return z;
}

// ----------------------------------------------------------- latent codec

LatentCodec LatentCodec::create(const CodecConfig& cfg, uint64_t init_seed) {
    LatentCodec c;
    c.cfg = cfg;
    if (!cfg.learned) return c;
    Rng rng(Rng::mix(init_seed, Rng::hash_name("init.codec")));
    const int h = cfg.hidden;
    c.e1 = nn::Conv2d<float>::create(c.ps, "e1", 1, h / 2, 3, rng, 2, 1);
    c.e2 = nn::Conv2d<float>::create(c.ps, "e2", h / 2, h, 3, rng, 2, 1);
    c.e3 = nn::Conv2d<float>::create(c.ps, "e3", h, cfg.latent_ch, 3, rng, 1, 1);
    c.d1 = nn::Conv2d<float>::create(c.ps, "d1", cfg.latent_ch, h, 3, rng, 1, 1);
    c.d2 = nn::Conv2d<float>::create(c.ps, "d2", h, h / 2, 3, rng, 1, 1);
    c.d3 = nn::Conv2d<float>::create(c.ps, "d3", h / 2, 1, 3, rng, 1, 1);
    return c;
}

TenF LatentCodec::encode(const TenF& x) const {
    if (!cfg.learned) return x;
    ad::Tape<float> tp;
    tp.set_inference(true);
    auto& self = const_cast<LatentCodec&>(*this);
    std::vector<int> s = x.shape;
    ad::Var h = tp.input(Ten<float>({1, s[0], s[1], s[2]}, x.v));
    h = ad::silu(tp, self.e1.fwd(tp, h));
    h = ad::silu(tp, self.e2.fwd(tp, h));
    h = self.e3.fwd(tp, h);
    const auto& o = tp.val(h);
    return TenF({o.dim(1), o.dim(2), o.dim(3)}, o.v);
}

TenF LatentCodec::decode(const TenF& z) const {
    if (!cfg.learned) return z;
    ad::Tape<float> tp;
    tp.set_inference(true);
    auto& self = const_cast<LatentCodec&>(*this);
    std::vector<int> s = z.shape;
    ad::Var h = tp.input(Ten<float>({1, s[0], s[1], s[2]}, z.v));
    h = ad::silu(tp, self.d1.fwd(tp, h));
    h = ad::upsample2x(tp, h);
    h = ad::silu(tp, self.d2.fwd(tp, h));
    h = ad::upsample2x(tp, h);
    h = self.d3.fwd(tp, h);
    const auto& o = tp.val(h);
    return TenF({o.dim(1), o.dim(2), o.dim(3)}, o.v);
}

// ----------------------------------------------------------------- bundle

std::string model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["unet"] = {{"in_ch", c.unet.in_ch},
                 {"base", c.unet.base},
                 {"widths", c.unet.widths},
                 {"t_embed_dim", c.unet.t_embed_dim},
                 {"cond_dim", c.unet.cond_dim},
                 {"gn_groups", c.unet.gn_groups},
                 {"attn_heads", c.unet.attn_heads}};
    j["enc"] = {{"d", c.enc.d},
                {"n_layers", c.enc.n_layers},
                {"n_heads", c.enc.n_heads},
                {"max_len", c.enc.max_len},
                {"mlp_ratio", c.enc.mlp_ratio},
                {"vocab_size", c.enc.vocab_size}};
    j["tve"] = {{"d", c.tve.d},
                {"groups", c.tve.groups},
                {"t_embed_dim", c.tve.t_embed_dim},
                {"mlp_hidden", c.tve.mlp_hidden},
                {"n_stacks", c.tve.n_stacks}};
    j["sched"] = {{"T", c.sched.T},
                  {"beta_start", c.sched.beta_start},
                  {"beta_end", c.sched.beta_end}};
    j["codec"] = {{"learned", c.codec.learned},
                  {"latent_ch", c.codec.latent_ch},
                  {"hidden", c.codec.hidden}};
    j["dsp"] = {{"sample_rate", c.dsp.sample_rate}, {"n_fft", c.dsp.n_fft},
                {"hop", c.dsp.hop},                 {"n_mels", c.dsp.n_mels},
                {"fmin", c.dsp.fmin},               {"fmax", c.dsp.fmax},
                {"log_floor", c.dsp.log_floor},     {"p_ref", c.dsp.p_ref},
                {"gl_iters", c.dsp.gl_iters}};
    j["frames"] = c.frames;
    return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& json_text) {
    auto j = nlohmann::json::parse(json_text);
    ModelConfig c;
    c.unet.in_ch = j["unet"]["in_ch"];
    c.unet.base = j["unet"]["base"];
    c.unet.widths = j["unet"]["widths"].get<std::vector<int>>();
    c.unet.t_embed_dim = j["unet"]["t_embed_dim"];
    c.unet.cond_dim = j["unet"]["cond_dim"];
    c.unet.gn_groups = j["unet"]["gn_groups"];
    c.unet.attn_heads = j["unet"]["attn_heads"];
    c.enc.d = j["enc"]["d"];
    c.enc.n_layers = j["enc"]["n_layers"];
    c.enc.n_heads = j["enc"]["n_heads"];
    c.enc.max_len = j["enc"]["max_len"];
    c.enc.mlp_ratio = j["enc"]["mlp_ratio"];
    c.enc.vocab_size = j["enc"]["vocab_size"];
    c.tve.d = j["tve"]["d"];
    c.tve.groups = j["tve"]["groups"];
    c.tve.t_embed_dim = j["tve"]["t_embed_dim"];
    c.tve.mlp_hidden = j["tve"]["mlp_hidden"];
    c.tve.n_stacks = j["tve"]["n_stacks"];
    c.sched.T = j["sched"]["T"];
    c.sched.beta_start = j["sched"]["beta_start"];
    c.sched.beta_end = j["sched"]["beta_end"];
    c.codec.learned = j["codec"]["learned"];
    c.codec.latent_ch = j["codec"]["latent_ch"];
    c.codec.hidden = j["codec"]["hidden"];
    c.dsp.sample_rate = j["dsp"]["sample_rate"];
    c.dsp.n_fft = j["dsp"]["n_fft"];
    c.dsp.hop = j["dsp"]["hop"];
    c.dsp.n_mels = j["dsp"]["n_mels"];
    c.dsp.fmin = j["dsp"]["fmin"];
    c.dsp.fmax = j["dsp"]["fmax"];
    c.dsp.log_floor = j["dsp"]["log_floor"];
    c.dsp.p_ref = j["dsp"]["p_ref"];
    c.dsp.gl_iters = j["dsp"]["gl_iters"];
    c.frames = j["frames"];
    return c;
}

Checkpoint Checkpoint::create(const ModelConfig& cfg, uint64_t init_seed) {
    Checkpoint c;
    c.cfg = cfg;
    c.init_seed = init_seed;
    c.schedule = make_schedule(cfg.sched.T, cfg.sched.beta_start, cfg.sched.beta_end);
    c.vocab = text::Vocabulary::standard();
    if (c.vocab.size() != cfg.enc.vocab_size)
        throw ConfigError("vocab size does not match encoder config");
    Rng enc_rng(Rng::mix(init_seed, Rng::hash_name("init.enc")));
    Rng unet_rng(Rng::mix(init_seed, Rng::hash_name("init.unet")));
    c.enc = text::TextEncoder<float>::create(c.enc_ps, "enc", cfg.enc, enc_rng);
    c.unet = UNet<float>::create(c.unet_ps, "unet", cfg.unet, unet_rng);
    c.codec = LatentCodec::create(cfg.codec, init_seed);
    return c;
}

void Checkpoint::save(const std::string& path) const {
    auto& self = const_cast<Checkpoint&>(*this);
    io::NamedBlocks nb;
    io::store_params(nb, "enc", self.enc_ps);
    io::store_params(nb, "unet", self.unet_ps);
    if (cfg.codec.learned) io::store_params(nb, "codec", self.codec.ps);
    nb.scalars_u64["corpus_hash"] = corpus_hash;
    nb.scalars_u64["init_seed"] = init_seed;
    nb.write(path);

    nlohmann::json side;
    side["config"] = nlohmann::json::parse(model_config_to_json(cfg));
    side["vocab"] = vocab.tokens();
    side["corpus_hash"] = corpus_hash;
    side["init_seed"] = init_seed;
    side["model_hash"] = model_hash();
    std::ofstream f(path + ".json");
    if (!f) throw IoError("cannot write sidecar: " + path + ".json");
    f << side.dump(2) << "\n";
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path + ".json");
    if (!f) throw IoError("cannot open sidecar: " + path + ".json");
    nlohmann::json side = nlohmann::json::parse(f);
    ModelConfig cfg = model_config_from_json(side["config"].dump());

    Checkpoint c = create(cfg, side["init_seed"].get<uint64_t>());
    c.vocab = text::Vocabulary::from_tokens(
        side["vocab"].get<std::vector<std::string>>());

    auto nb = io::NamedBlocks::read(path);
    io::load_params(nb, "enc", c.enc_ps);
    io::load_params(nb, "unet", c.unet_ps);
    if (cfg.codec.learned) io::load_params(nb, "codec", c.codec.ps);
    auto it = nb.scalars_u64.find("corpus_hash");
    c.corpus_hash = it != nb.scalars_u64.end() ? it->second : 0;
    // a loaded backbone is frozen; training code re-enables explicitly
    c.enc_ps.set_trainable(false);
    c.unet_ps.set_trainable(false);
    c.codec.ps.set_trainable(false);
    return c;
}

uint64_t Checkpoint::model_hash() const {
    auto& self = const_cast<Checkpoint&>(*this);
    uint64_t h = Rng::hash_name(model_config_to_json(cfg));
    h = Rng::mix(h, self.enc_ps.value_hash());
    h = Rng::mix(h, self.unet_ps.value_hash());
    if (cfg.codec.learned) h = Rng::mix(h, self.codec.ps.value_hash());
    return h;
}

EpsPairFn Checkpoint::eps_pair() const {
    const Checkpoint* self = this;
    return [self](const TenF& z, int t, const text::ConditionSet& cond,
                  const text::ConditionSet& uncond) {
        const auto& u = self->unet;
        const int C = z.dim(0), H = z.dim(1), W = z.dim(2);
        const int L = cond.rows.dim(0), D = cond.rows.dim(1);
        if (!cond.rows.same_shape(uncond.rows))
            throw ShapeError("cond/uncond row mismatch");

        ad::Tape<float> tp;
        tp.set_inference(true);
        Ten<float> zz({2, C, H, W});
        std::copy(z.v.begin(), z.v.end(), zz.v.begin());
        std::copy(z.v.begin(), z.v.end(), zz.v.begin() + z.size());
        Ten<float> cc({2, L, D});
        std::copy(cond.rows.v.begin(), cond.rows.v.end(), cc.v.begin());
        std::copy(uncond.rows.v.begin(), uncond.rows.v.end(),
                  cc.v.begin() + cond.rows.size());
        ad::Var out = u.fwd(tp, tp.input(std::move(zz)),
                            {double(t), double(t)}, tp.input(std::move(cc)));
        const auto& o = tp.val(out);
        TenF ec({C, H, W}), eu({C, H, W});
        std::copy(o.v.begin(), o.v.begin() + ec.size(), ec.v.begin());
        std::copy(o.v.begin() + ec.size(), o.v.end(), eu.v.begin());
        return std::make_pair(std::move(ec), std::move(eu));
    };
}

EpsFn Checkpoint::eps_single() const {
    const Checkpoint* self = this;
    return [self](const TenF& z, int t, const text::ConditionSet& cond) {
        const int C = z.dim(0), H = z.dim(1), W = z.dim(2);
        ad::Tape<float> tp;
        tp.set_inference(true);
        ad::Var out = self->unet.fwd(
            tp, tp.input(Ten<float>({1, C, H, W}, z.v)), {double(t)},
            tp.input(Ten<float>({1, cond.rows.dim(0), cond.rows.dim(1)},
                                cond.rows.v)));
        const auto& o = tp.val(out);
        return TenF({C, H, W}, o.v);
    };
}

text::ConditionSet Checkpoint::encode_caption(const std::string& caption,
                                              double t) const {
    return text::encode_text(enc, vocab, caption, t, nullptr, nullptr);
}

// --------------------------------------------------------------- pretrain

std::vector<std::pair<const corpus::ClipRecord*, dsp::MelSpectrogram>>
load_corpus_mels(const corpus::CorpusManifest& manifest,
                 const std::string& corpus_dir) {
    namespace fs = std::filesystem;
    std::vector<std::pair<const corpus::ClipRecord*, dsp::MelSpectrogram>> out;
    out.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
        auto w = read_wav((fs::path(corpus_dir) / r.wav_path).string());
        out.emplace_back(&r, dsp::mel_spectrogram(w, manifest.dsp_config));
    }
    return out;
}

namespace {

// random 64-frame crop of a clip mel as a [1,frames,frames]-shaped tensor
TenF crop_mel(const dsp::MelSpectrogram& m, int frames, int start) {
    TenF out({1, m.n_mels(), frames});
    for (int b = 0; b < m.n_mels(); ++b)
        for (int f = 0; f < frames; ++f)
            out.v[size_t(b) * size_t(frames) + size_t(f)] =
                f + start < m.n_frames() ? m.at(b, f + start) : -1.0f;
    return out;
}

struct TrainStateIo {
    static void save(const std::string& path, Checkpoint& ckpt,
                     nn::Adam<float>& opt, int step,
                     const std::vector<float>& curve) {
        io::NamedBlocks nb;
        io::store_params(nb, "enc", ckpt.enc_ps, true);
        io::store_params(nb, "unet", ckpt.unet_ps, true);
        if (ckpt.cfg.codec.learned) io::store_params(nb, "codec", ckpt.codec.ps, true);
        nb.scalars_u64["step"] = uint64_t(step);
        nb.scalars_u64["opt_step"] = uint64_t(opt.step_count);
        nb.tensors["loss_curve"] = TenF({int(curve.size())}, curve);
        nb.write(path);
    }

    static int load(const std::string& path, Checkpoint& ckpt,
                    nn::Adam<float>& opt, std::vector<float>& curve) {
        auto nb = io::NamedBlocks::read(path);
        io::load_params(nb, "enc", ckpt.enc_ps, true);
        io::load_params(nb, "unet", ckpt.unet_ps, true);
        if (ckpt.cfg.codec.learned) io::load_params(nb, "codec", ckpt.codec.ps, true);
        opt.step_count = (long long)(nb.scalars_u64.at("opt_step"));
        const auto& c = nb.tensors.at("loss_curve");
        curve.assign(c.v.begin(), c.v.end());
        return int(nb.scalars_u64.at("step"));
    }
};

void pretrain_codec(Checkpoint& ckpt, const std::vector<TenF>& crops_source,
                    const PretrainConfig& cfg) {
    // small conv autoencoder on random crops, reconstruction MSE
    ckpt.codec.ps.set_trainable(true);
    nn::Adam<float> opt;
    opt.lr = 1e-3;
    Rng rng(Rng::mix(cfg.seed, Rng::hash_name("pretrain.codec")));
    auto& c = ckpt.codec;
    for (int s = 0; s < cfg.codec_steps; ++s) {
        const TenF& x0 = crops_source[rng.uniform_int(crops_source.size())];
        ad::Tape<float> tp;
        ad::Var x = tp.input(Ten<float>({1, x0.dim(0), x0.dim(1), x0.dim(2)}, x0.v));
        ad::Var h = ad::silu(tp, c.e1.fwd(tp, x));
        h = ad::silu(tp, c.e2.fwd(tp, h));
        h = c.e3.fwd(tp, h);
        h = ad::silu(tp, c.d1.fwd(tp, h));
        h = ad::upsample2x(tp, h);
        h = ad::silu(tp, c.d2.fwd(tp, h));
        h = ad::upsample2x(tp, h);
        h = c.d3.fwd(tp, h);
        ad::Var loss = ad::mse(tp, h, x);
        ckpt.codec.ps.zero_grads();
        tp.backward(loss);
        opt.step(ckpt.codec.ps.all());
    }
    ckpt.codec.ps.set_trainable(false);
}

}  // namespace

PretrainResult pretrain(Checkpoint& ckpt, const corpus::CorpusManifest& manifest,
                        const std::string& corpus_dir, const PretrainConfig& cfg) {
    auto mels = load_corpus_mels(manifest, corpus_dir);
    std::vector<std::pair<const corpus::ClipRecord*, const dsp::MelSpectrogram*>>
        usable;
    for (const auto& [rec, mel] : mels)
        if (!rec->held_out) usable.emplace_back(rec, &mel);
    if (usable.empty()) throw InputError("corpus has no pretraining records");

    const int frames = ckpt.cfg.frames;
    const int T = ckpt.schedule.T;

    if (ckpt.cfg.codec.learned) {
        std::vector<TenF> crops;
        Rng crng(Rng::mix(cfg.seed, Rng::hash_name("codec.crops")));
        for (int i = 0; i < 256; ++i) {
            const auto& [rec, mel] = usable[crng.uniform_int(usable.size())];
            int maxs = std::max(mel->n_frames() - frames, 0);
            crops.push_back(crop_mel(*mel, frames, int(crng.uniform_int(uint64_t(maxs) + 1))));
        }
        pretrain_codec(ckpt, crops, cfg);
    }

    ckpt.enc_ps.set_trainable(true);
    ckpt.unet_ps.set_trainable(true);

    nn::Adam<float> opt;
    opt.lr = cfg.lr;
    auto params = ckpt.enc_ps.all();
    for (auto* p : ckpt.unet_ps.all()) params.push_back(p);

    std::vector<float> curve;
    int start_step = 0;
    if (cfg.resume && !cfg.state_path.empty() &&
        std::filesystem::exists(cfg.state_path)) {
        start_step = TrainStateIo::load(cfg.state_path, ckpt, opt, curve);
    }

    const int steps_total =
        cfg.epochs * int((usable.size() + size_t(cfg.batch_size) - 1) /
                         size_t(cfg.batch_size));
    const int B = cfg.batch_size;

    for (int step = start_step; step < steps_total; ++step) {
        // stateless per-step randomness keeps resumed runs on the same path
        Rng rng(Rng::mix(Rng::mix(cfg.seed, Rng::hash_name("pretrain.step")),
                         uint64_t(step)));

        ad::Tape<float> tp;
        std::vector<ad::Var> conds;
        Ten<float> zt_batch;
        Ten<float> eps_batch;
        std::vector<double> ts(static_cast<size_t>(B));

        const int C = ckpt.codec.latent_channels();
        const int LH = ckpt.cfg.dsp.n_mels / ckpt.codec.spatial_factor();
        const int LW = frames / ckpt.codec.spatial_factor();
        zt_batch = Ten<float>({B, C, LH, LW});
        eps_batch = Ten<float>({B, C, LH, LW});

        for (int b = 0; b < B; ++b) {
            const auto& [rec, mel] = usable[rng.uniform_int(usable.size())];
            const int maxs = std::max(mel->n_frames() - frames, 0);
            const int crop = int(rng.uniform_int(uint64_t(maxs) + 1));
            TenF z0 = ckpt.codec.encode(crop_mel(*mel, frames, crop));

            const int t = 1 + int(rng.uniform_int(uint64_t(T)));
            ts[size_t(b)] = double(t);
            TenF eps(z0.shape);
            rng.fill_normal(eps.v);
            TenF zt = q_sample(z0, t, eps, ckpt.schedule);
            std::copy(zt.v.begin(), zt.v.end(),
                      zt_batch.v.begin() + long(size_t(b) * zt.v.size()));
            std::copy(eps.v.begin(), eps.v.end(),
                      eps_batch.v.begin() + long(size_t(b) * eps.v.size()));

            const bool drop = rng.uniform() < cfg.p_uncond;
            const std::string caption = drop ? "" : rec->caption;
            auto tokens = ckpt.vocab.encode_caption(caption, ckpt.cfg.enc.max_len);
            conds.push_back(ckpt.enc.encode(tp, tokens, -1, {}));
        }

        ad::Var cond = ad::stack0(tp, conds);
        ad::Var pred = ckpt.unet.fwd(tp, tp.input(std::move(zt_batch)), ts, cond);
        ad::Var loss = ad::mse(tp, pred, tp.input(std::move(eps_batch)));
        const float loss_val = tp.val(loss).v[0];
        if (!std::isfinite(loss_val))
            throw TrainingError("non-finite pretraining loss at step " +
                                std::to_string(step));

        ckpt.enc_ps.zero_grads();
        ckpt.unet_ps.zero_grads();
        tp.backward(loss);
        opt.step(params);
        curve.push_back(loss_val);

        if (cfg.progress && step % 25 == 0) {
            double avg = 0.0;
            const size_t n = std::min<size_t>(100, curve.size());
            for (size_t i = curve.size() - n; i < curve.size(); ++i) avg += curve[i];
            cfg.progress(step, avg / double(n));
        }
        if (!cfg.state_path.empty() &&
            ((step + 1) % cfg.save_every == 0 || step + 1 == steps_total)) {
            TrainStateIo::save(cfg.state_path, ckpt, opt, step + 1, curve);
        }
    }

    ckpt.enc_ps.set_trainable(false);
    ckpt.unet_ps.set_trainable(false);
    ckpt.corpus_hash = manifest.hash();

    PretrainResult res;
    res.loss_curve = curve;
    res.steps = int(curve.size());
    const size_t n = std::min<size_t>(100, curve.size());
    double avg = 0.0;
    for (size_t i = curve.size() - n; i < curve.size(); ++i) avg += curve[i];
    res.final_loss = n > 0 ? avg / double(n) : 0.0;
    return res;
}

}  // namespace melstyle::diff
