#include "melstyle/stylize.hpp"

#include <cmath>
#include <json.hpp>

#include "melstyle/rng.hpp"

namespace melstyle::stylize {

uint64_t stylize_gl_seed(uint64_t request_seed, int window_index) {
    return Rng::mix(Rng::mix(request_seed, Rng::hash_name("stylize.gl")),
                    uint64_t(window_index));
}

std::string StylizationResult::params_json() const {
    nlohmann::json j;
    j["strength"] = strength;
    j["scale"] = scale;
    j["n_steps"] = n_steps;
    j["seed"] = seed;
    j["bias_reduced"] = bias_reduced;
    j["t_p"] = t_p;
    return j.dump(2);
}

std::pair<TenF, int> partial_diffuse(const TenF& z_c, double strength,
                                     const diff::NoiseSchedule& s, uint64_t seed) {
    if (strength < 0.0 || strength > 1.0)
        throw InputError("strength must lie in [0,1]");
    const int t_p = int(std::floor(double(s.T) * strength + 0.5));  // round-half-up
    if (t_p == 0) return {z_c, 0};
    TenF eps(z_c.shape);
    Rng rng(Rng::mix(seed, Rng::hash_name("partial_diffuse")));
    rng.fill_normal(eps.v);
    return {diff::q_sample(z_c, t_p, eps, s), t_p};
}

std::pair<TenF, TenF> determined_diffuse(const TenF& z_c, const TenF& m_cn,
                                         int t_p, const text::ConditionSet& cond,
                                         const text::ConditionSet& uncond,
                                         double scale, const diff::EpsPairFn& model,
                                         const diff::NoiseSchedule& s,
                                         bool* skipped) {
    if (skipped) *skipped = false;
    if (t_p == 0) {
        if (skipped) *skipped = true;
        return {z_c, TenF(z_c.shape)};
    }
    if (t_p < 0 || t_p > s.T) throw InputError("t_p out of range");
    TenF eps_hat = diff::guided_eps(m_cn, t_p, cond, uncond, scale, model);
    return {diff::q_sample(z_c, t_p, eps_hat, s), eps_hat};
}

namespace {

TenF crop_window(const dsp::MelSpectrogram& m, int start, int frames) {
    TenF out({1, m.n_mels(), frames});
    for (int b = 0; b < m.n_mels(); ++b)
        for (int f = 0; f < frames; ++f)
            out.v[size_t(b) * size_t(frames) + size_t(f)] =
                start + f < m.n_frames() ? m.at(b, start + f) : -1.0f;
    return out;
}

// crossfade stitch: out = prev + w * (cur - prev), exact when prev == cur
void stitch_mel(dsp::MelSpectrogram& acc, const dsp::MelSpectrogram& win,
                int start, int overlap) {
    const int frames = win.n_frames();
    for (int b = 0; b < acc.n_mels(); ++b) {
        for (int f = 0; f < frames; ++f) {
            const int g = start + f;
            if (g >= acc.n_frames()) break;
            const float cur = win.at(b, f);
            if (start == 0 || f >= overlap) {
                acc.at(b, g) = cur;
            } else {
                const float w = float(f + 1) / float(overlap + 1);
                const float prev = acc.at(b, g);
                acc.at(b, g) = prev + w * (cur - prev);
            }
        }
    }
}

void stitch_wav(std::vector<float>& acc, const std::vector<float>& win,
                size_t start, size_t overlap) {
    for (size_t i = 0; i < win.size(); ++i) {
        const size_t g = start + i;
        if (g >= acc.size()) break;
        if (start == 0 || i >= overlap) {
            acc[g] = win[i];
        } else {
            const float w = float(i + 1) / float(overlap + 1);
            acc[g] = acc[g] + w * (win[i] - acc[g]);
        }
    }
}

}  // namespace

StylizationResult run(const StylizationRequest& req,
                      const inversion::InversionArtifact& artifact,
                      const diff::Checkpoint& ckpt) {
    if (artifact.source_model_hash != ckpt.model_hash())
        throw ConfigError("inversion artifact does not match this checkpoint");
    if (req.content.n_mels() != ckpt.cfg.dsp.n_mels)
        throw ConfigError("content mel bands do not match checkpoint");
    if (req.content.n_frames() < 1) throw InputError("content mel is empty");

    StylizationResult res;
    res.strength = req.strength;
    res.scale = req.scale;
    res.n_steps = req.n_steps;
    res.seed = req.seed;
    res.bias_reduced = req.bias_reduced;

    const auto& dcfg = ckpt.cfg.dsp;

    // strength 0 bypasses noise entirely: strict identity on the mel pathway
    if (req.strength == 0.0) {
        res.t_p = 0;
        res.mel = req.content;
        if (req.render_audio)
            res.wav = dsp::griffin_lim(res.mel, dcfg, stylize_gl_seed(req.seed, 0));
        return res;
    }

    const int frames = ckpt.cfg.frames;
    const int hopf = frames / 2;
    const int nf = req.content.n_frames();
    std::vector<int> starts{0};
    while (starts.back() + frames < nf) starts.push_back(starts.back() + hopf);

    res.mel.config = dcfg;
    res.mel.values = TenF({req.content.n_mels(), nf});

    const auto pair_model = ckpt.eps_pair();
    auto uncond_fn = [&](double t) { return ckpt.encode_caption("", t); };
    const auto cond_fn = artifact.cond_fn(ckpt);

    std::vector<dsp::MelSpectrogram> window_mels;
    for (size_t wi = 0; wi < starts.size(); ++wi) {
        TenF mel_w = crop_window(req.content, starts[wi], frames);
        TenF z_c = ckpt.codec.encode(mel_w);
        const uint64_t wseed = Rng::mix(req.seed, uint64_t(wi));

        auto [m_cn, t_p] = partial_diffuse(z_c, req.strength, ckpt.schedule, wseed);
        res.t_p = t_p;

        TenF start_latent = m_cn;
        TenF eps_hat_first;
        TenF m_hat_first;
        if (req.bias_reduced && t_p >= 1) {
            auto cond_tp = artifact.conditions(ckpt, double(t_p));
            auto unc_tp = uncond_fn(double(t_p));
            auto [m_hat, eps_hat] =
                determined_diffuse(z_c, m_cn, t_p, cond_tp, unc_tp, req.scale,
                                   pair_model, ckpt.schedule);
            start_latent = m_hat;
            eps_hat_first = eps_hat;
            m_hat_first = m_hat;
        }

        diff::SamplerConfig scfg;
        scfg.n_steps = req.n_steps;
        scfg.guidance_scale = req.scale;
        scfg.seed = req.seed;
        TenF z_out = diff::ddim_sample(start_latent, t_p, cond_fn, uncond_fn, scfg,
                                       pair_model, ckpt.schedule);
        auto mel_out = inversion::latent_to_mel(z_out, ckpt);

        if (wi == 0 && req.keep_intermediates) {
            res.m_cn = m_cn;
            if (req.bias_reduced && t_p >= 1) {
                res.eps_hat = eps_hat_first;
                res.m_hat_cn = m_hat_first;
            }
        }
        stitch_mel(res.mel, mel_out, starts[wi], hopf);
        window_mels.push_back(std::move(mel_out));
    }

    if (req.render_audio) {
        const size_t hop_samples = size_t(dcfg.hop);
        const size_t out_len = size_t(std::max(nf - 1, 1)) * hop_samples;
        res.wav.sample_rate = dcfg.sample_rate;
        res.wav.samples.assign(out_len, 0.0f);
        for (size_t wi = 0; wi < window_mels.size(); ++wi) {
            auto w = dsp::griffin_lim(window_mels[wi], dcfg,
                                      stylize_gl_seed(req.seed, int(wi)));
            stitch_wav(res.wav.samples, w.samples,
                       size_t(starts[wi]) * hop_samples,
                       size_t(hopf) * hop_samples);
        }
    }
    return res;
}

}  // namespace melstyle::stylize
