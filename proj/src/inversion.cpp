#include "melstyle/inversion.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "melstyle/png.hpp"
#include "melstyle/rng.hpp"

namespace melstyle::inversion {

InversionArtifact InversionArtifact::create(const diff::Checkpoint& ckpt,
                                            uint64_t seed, bool use_tve) {
    InversionArtifact a;
    a.tve_cfg = ckpt.cfg.tve;
    a.use_tve = use_tve;
    Rng rng(Rng::mix(seed, Rng::hash_name("init.tve")));
    a.tve = text::Tve<float>::create(a.ps, "tve", a.tve_cfg, rng);

    // v_o* starts from the embedding of a coarse category token
    auto& enc_ps = const_cast<diff::Checkpoint&>(ckpt).enc_ps;
    auto* table = enc_ps.find("enc.tok");
    if (!table) throw ConfigError("checkpoint lacks a token table");
    const int d = a.tve_cfg.d;
    const int music_id = ckpt.vocab.index("music");
    TenF init({d});
    std::copy(table->value.v.begin() + long(music_id) * d,
              table->value.v.begin() + long(music_id + 1) * d, init.v.begin());
    a.v_o_star = &a.ps.add("v_o_star", std::move(init));
    a.source_model_hash = ckpt.model_hash();
    return a;
}

TenF InversionArtifact::star_embedding(double t) const {
    if (!use_tve) return v_o_star->value;
    return text::tve_forward(tve, t, *v_o_star);
}

text::ConditionSet InversionArtifact::conditions(const diff::Checkpoint& ckpt,
                                                 double t) const {
    auto tokens = ckpt.vocab.encode_caption("*", ckpt.cfg.enc.max_len);
    const int star_pos = text::find_star(tokens, ckpt.vocab.star_id());
    ad::Tape<float> tp;
    tp.set_inference(true);
    auto& self = const_cast<InversionArtifact&>(*this);
    ad::Var star = use_tve ? tve.fwd(tp, t, tp.param(*self.v_o_star))
                           : tp.param(*self.v_o_star);
    ad::Var rows = ckpt.enc.encode(tp, tokens, star_pos, star);
    text::ConditionSet cs;
    cs.rows = tp.val(rows);
    cs.timestep_dependent = use_tve;
    return cs;
}

diff::CondFn InversionArtifact::cond_fn(const diff::Checkpoint& ckpt) const {
    const InversionArtifact* self = this;
    const diff::Checkpoint* c = &ckpt;
    return [self, c](double t) { return self->conditions(*c, t); };
}

void InversionArtifact::save(const std::string& path) const {
    auto& self = const_cast<InversionArtifact&>(*this);
    io::NamedBlocks nb;
    io::store_params(nb, "inv", self.ps);
    nb.scalars_u64["source_model_hash"] = source_model_hash;
    nb.scalars_u64["use_tve"] = use_tve ? 1 : 0;
    nb.scalars_f64["final_loss"] = final_loss;
    nb.tensors["loss_curve"] = TenF({int(loss_curve.size())}, loss_curve);
    nb.write(path);

    nlohmann::json side;
    side["tve"] = {{"d", tve_cfg.d},
                   {"groups", tve_cfg.groups},
                   {"t_embed_dim", tve_cfg.t_embed_dim},
                   {"mlp_hidden", tve_cfg.mlp_hidden},
                   {"n_stacks", tve_cfg.n_stacks}};
    side["use_tve"] = use_tve;
    side["source_model_hash"] = source_model_hash;
    side["style_clip_ids"] = style_clip_ids;
    side["final_loss"] = final_loss;
    std::ofstream f(path + ".json");
    if (!f) throw IoError("cannot write sidecar: " + path + ".json");
    f << side.dump(2) << "\n";
}

InversionArtifact InversionArtifact::load(const std::string& path) {
    std::ifstream f(path + ".json");
    if (!f) throw IoError("cannot open sidecar: " + path + ".json");
    nlohmann::json side = nlohmann::json::parse(f);

    InversionArtifact a;
    a.tve_cfg.d = side["tve"]["d"];
    a.tve_cfg.groups = side["tve"]["groups"];
    a.tve_cfg.t_embed_dim = side["tve"]["t_embed_dim"];
    a.tve_cfg.mlp_hidden = side["tve"]["mlp_hidden"];
    a.tve_cfg.n_stacks = side["tve"]["n_stacks"];
    a.use_tve = side["use_tve"].get<bool>();
    a.source_model_hash = side["source_model_hash"].get<uint64_t>();
    a.style_clip_ids = side["style_clip_ids"].get<std::vector<std::string>>();
    a.final_loss = side["final_loss"].get<double>();

    Rng rng(0);
    a.tve = text::Tve<float>::create(a.ps, "tve", a.tve_cfg, rng);
    a.v_o_star = &a.ps.add("v_o_star", TenF({a.tve_cfg.d}));

    auto nb = io::NamedBlocks::read(path);
    io::load_params(nb, "inv", a.ps);
    const auto& c = nb.tensors.at("loss_curve");
    a.loss_curve.assign(c.v.begin(), c.v.end());
    a.ps.set_trainable(false);
    return a;
}

InversionArtifact invert_style(const std::vector<dsp::MelSpectrogram>& style_clips,
                               const diff::Checkpoint& ckpt,
                               const InversionConfig& cfg,
                               std::vector<std::string> clip_ids) {
    if (style_clips.empty() || style_clips.size() > 5)
        throw InputError("inversion expects 1-5 style clips");
    for (const auto& m : style_clips) {
        if (m.n_mels() != ckpt.cfg.dsp.n_mels)
            throw ConfigError("style clip mel bands do not match checkpoint");
        if (m.n_frames() < ckpt.cfg.frames)
            throw ConfigError("style clip shorter than the model window");
    }
    if (!(cfg.lr > 0)) throw ConfigError("inversion lr must be positive");

    auto& mckpt = const_cast<diff::Checkpoint&>(ckpt);
    mckpt.enc_ps.set_trainable(false);
    mckpt.unet_ps.set_trainable(false);
    mckpt.codec.ps.set_trainable(false);

    InversionArtifact art = InversionArtifact::create(ckpt, cfg.seed, cfg.train_tve);
    art.style_clip_ids = std::move(clip_ids);
    if (!cfg.train_tve) {
        // fixed-embedding arm: only v_o* moves
        for (auto* p : art.ps.all()) p->trainable = false;
        art.v_o_star->trainable = true;
    }

    nn::Adam<float> opt;
    opt.lr = cfg.lr;
    const int T = ckpt.schedule.T;
    const int frames = ckpt.cfg.frames;
    const auto tokens = ckpt.vocab.encode_caption("*", ckpt.cfg.enc.max_len);
    const int star_pos = text::find_star(tokens, ckpt.vocab.star_id());

    const int B = std::max(cfg.batch_size, 1);
    for (int step = 0; step < cfg.max_steps; ++step) {
        Rng rng(Rng::mix(Rng::mix(cfg.seed, Rng::hash_name("invert.step")),
                         uint64_t(step)));
        ad::Tape<float> tp;
        std::vector<ad::Var> conds;
        std::vector<double> ts(static_cast<size_t>(B));
        const int C = ckpt.codec.latent_channels();
        const int LH = ckpt.cfg.dsp.n_mels / ckpt.codec.spatial_factor();
        const int LW = frames / ckpt.codec.spatial_factor();
        Ten<float> zt_batch({B, C, LH, LW});
        Ten<float> eps_batch({B, C, LH, LW});

        for (int b = 0; b < B; ++b) {
            const auto& mel = style_clips[rng.uniform_int(style_clips.size())];
            const int maxs = std::max(mel.n_frames() - frames, 0);
            const int crop = int(rng.uniform_int(uint64_t(maxs) + 1));
            TenF z0({1, mel.n_mels(), frames});
            for (int bb = 0; bb < mel.n_mels(); ++bb)
                for (int ff = 0; ff < frames; ++ff)
                    z0.v[size_t(bb) * size_t(frames) + size_t(ff)] =
                        mel.at(bb, ff + crop);
            z0 = ckpt.codec.encode(z0);

            const int t = 1 + int(rng.uniform_int(uint64_t(T)));
            ts[size_t(b)] = double(t);
            TenF eps(z0.shape);
            rng.fill_normal(eps.v);
            TenF zt = diff::q_sample(z0, t, eps, ckpt.schedule);
            std::copy(zt.v.begin(), zt.v.end(),
                      zt_batch.v.begin() + long(size_t(b) * zt.v.size()));
            std::copy(eps.v.begin(), eps.v.end(),
                      eps_batch.v.begin() + long(size_t(b) * eps.v.size()));

            ad::Var star = art.use_tve
                               ? art.tve.fwd(tp, double(t), tp.param(*art.v_o_star))
                               : tp.param(*art.v_o_star);
            conds.push_back(mckpt.enc.encode(tp, tokens, star_pos, star));
        }

        ad::Var cond = ad::stack0(tp, conds);
        ad::Var pred =
            mckpt.unet.fwd(tp, tp.input(std::move(zt_batch)), ts, cond);
        ad::Var loss = ad::mse(tp, pred, tp.input(std::move(eps_batch)));
        const float loss_val = tp.val(loss).v[0];
        if (!std::isfinite(loss_val)) {
            const std::string dump = "inversion_failure_dump.msck";
            art.save(dump);
            throw TrainingError("non-finite inversion loss at step " +
                                std::to_string(step) + "; state dumped to " + dump);
        }
        art.ps.zero_grads();
        tp.backward(loss);
        opt.step(art.ps.all());
        art.loss_curve.push_back(loss_val);
    }

    const size_t n = std::min<size_t>(100, art.loss_curve.size());
    double avg = 0.0;
    for (size_t i = art.loss_curve.size() - n; i < art.loss_curve.size(); ++i)
        avg += art.loss_curve[i];
    art.final_loss = n > 0 ? avg / double(n) : 0.0;
    art.ps.set_trainable(false);
    return art;
}

Trajectory embedding_trajectory(const InversionArtifact& a, int n_points, int T) {
    if (n_points < 2) throw InputError("trajectory needs at least 2 points");
    if (T <= 0) T = 256;
    Trajectory tr;
    const int d = a.tve_cfg.d;
    tr.rows = Ten<double>({n_points, d});
    tr.cosine = Ten<double>({n_points, n_points});
    for (int i = 0; i < n_points; ++i) {
        const double t = double(T) * double(i) / double(n_points - 1);
        tr.ts.push_back(t);
        TenF e = a.star_embedding(t);
        for (int j = 0; j < d; ++j)
            tr.rows.v[size_t(i) * size_t(d) + size_t(j)] = double(e.v[size_t(j)]);
    }
    for (int i = 0; i < n_points; ++i) {
        for (int j = 0; j < n_points; ++j) {
            double dot = 0, ni = 0, nj = 0;
            for (int x = 0; x < d; ++x) {
                const double vi = tr.rows.v[size_t(i) * size_t(d) + size_t(x)];
                const double vj = tr.rows.v[size_t(j) * size_t(d) + size_t(x)];
                dot += vi * vj;
                ni += vi * vi;
                nj += vj * vj;
            }
            tr.cosine.v[size_t(i) * size_t(n_points) + size_t(j)] =
                dot / std::max(std::sqrt(ni) * std::sqrt(nj), 1e-12);
        }
    }
    return tr;
}

void save_trajectory_csv(const std::string& path, const Trajectory& t) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write trajectory csv: " + path);
    const int n = int(t.ts.size());
    const int d = t.rows.dim(1);
    f << "t";
    for (double tv : t.ts) f << "," << tv;
    f << "\n";
    for (int j = 0; j < d; ++j) {
        f << "dim" << j;
        for (int i = 0; i < n; ++i)
            f << "," << t.rows.v[size_t(i) * size_t(d) + size_t(j)];
        f << "\n";
    }
}

void save_trajectory_png(const std::string& path, const Trajectory& t) {
    const int n = t.cosine.dim(0);
    const int scale = 8;
    std::vector<uint8_t> px(size_t(n) * size_t(n) * size_t(scale) * size_t(scale));
    for (int i = 0; i < n * scale; ++i)
        for (int j = 0; j < n * scale; ++j) {
            const double v =
                t.cosine.v[size_t(i / scale) * size_t(n) + size_t(j / scale)];
            px[size_t(i) * size_t(n) * size_t(scale) + size_t(j)] =
                uint8_t(std::clamp((v + 1.0) * 0.5, 0.0, 1.0) * 255.0 + 0.5);
        }
    write_png_gray(path, n * scale, n * scale, px);
}

dsp::MelSpectrogram latent_to_mel(const TenF& z, const diff::Checkpoint& ckpt) {
    TenF mel = ckpt.codec.decode(z);
    dsp::MelSpectrogram m;
    m.config = ckpt.cfg.dsp;
    m.values = TenF({mel.dim(1), mel.dim(2)});
    for (size_t i = 0; i < m.values.v.size(); ++i)
        m.values.v[i] = std::clamp(mel.v[i], -1.0f, 1.0f);
    return m;
}

dsp::MelSpectrogram reconstruct(const InversionArtifact& a,
                                const diff::Checkpoint& ckpt, uint64_t seed,
                                double guidance_scale, int n_steps) {
    const int C = ckpt.codec.latent_channels();
    const int LH = ckpt.cfg.dsp.n_mels / ckpt.codec.spatial_factor();
    const int LW = ckpt.cfg.frames / ckpt.codec.spatial_factor();
    TenF z({C, LH, LW});
    Rng rng(Rng::mix(seed, Rng::hash_name("reconstruct.noise")));
    rng.fill_normal(z.v);

    diff::SamplerConfig scfg;
    scfg.n_steps = n_steps;
    scfg.guidance_scale = guidance_scale;
    scfg.seed = seed;
    auto uncond = [&](double t) { return ckpt.encode_caption("", t); };
    TenF out = diff::ddim_sample(z, ckpt.schedule.T, a.cond_fn(ckpt), uncond, scfg,
                                 ckpt.eps_pair(), ckpt.schedule);
    return latent_to_mel(out, ckpt);
}

dsp::MelSpectrogram generate(const diff::Checkpoint& ckpt,
                             const std::string& caption, uint64_t seed,
                             double guidance_scale, int n_steps) {
    const int C = ckpt.codec.latent_channels();
    const int LH = ckpt.cfg.dsp.n_mels / ckpt.codec.spatial_factor();
    const int LW = ckpt.cfg.frames / ckpt.codec.spatial_factor();
    TenF z({C, LH, LW});
    Rng rng(Rng::mix(seed, Rng::hash_name("reconstruct.noise")));
    rng.fill_normal(z.v);

    diff::SamplerConfig scfg;
    scfg.n_steps = n_steps;
    scfg.guidance_scale = guidance_scale;
    scfg.seed = seed;
    auto cond = [&](double t) { return ckpt.encode_caption(caption, t); };
    auto uncond = [&](double t) { return ckpt.encode_caption("", t); };
    TenF out = diff::ddim_sample(z, ckpt.schedule.T, cond, uncond, scfg,
                                 ckpt.eps_pair(), ckpt.schedule);
    return latent_to_mel(out, ckpt);
}

}  // namespace melstyle::inversion
