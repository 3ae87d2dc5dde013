#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "melstyle/stylize.hpp"

using namespace melstyle;

namespace {

diff::ModelConfig tiny_model() {
    diff::ModelConfig mc;
    mc.unet.widths = {8, 12, 16};
    mc.unet.t_embed_dim = 32;
    mc.unet.gn_groups = 4;
    mc.unet.attn_heads = 2;
    mc.enc.d = 32;
    mc.enc.n_layers = 1;
    mc.enc.n_heads = 2;
    mc.tve.d = 32;
    mc.tve.t_embed_dim = 32;
    mc.tve.groups = 4;
    mc.tve.mlp_hidden = 32;
    mc.unet.cond_dim = 32;
    mc.frames = 16;
    mc.unet.base = 16;
    mc.sched.T = 64;
    mc.dsp.n_mels = 16;
    mc.dsp.n_fft = 256;
    mc.dsp.hop = 64;
    mc.dsp.fmax = 8000;
    return mc;
}

dsp::MelSpectrogram random_mel(const dsp::DspConfig& cfg, int n_mels, int frames,
                               uint64_t seed) {
    dsp::MelSpectrogram m;
    m.config = cfg;
    m.values = TenF({n_mels, frames});
    Rng rng(seed);
    for (auto& v : m.values.v) v = float(rng.uniform() * 1.6 - 0.8);
    return m;
}

}  // namespace

TEST_CASE("partial_diffuse boundary behavior and rounding") {
    auto s = diff::make_schedule(256, 4e-4, 0.08);
    TenF z({1, 4, 4});
    Rng rng(1);
    rng.fill_normal(z.v);

    auto [m0, t0] = stylize::partial_diffuse(z, 0.0, s, 9);
    CHECK(t0 == 0);
    CHECK(m0.v == z.v);  // bypasses noise entirely

    auto [m1, t1] = stylize::partial_diffuse(z, 1.0, s, 9);
    CHECK(t1 == 256);

    auto [m2, t2] = stylize::partial_diffuse(z, 0.65, s, 9);
    CHECK(t2 == 166);  // round(256 * 0.65) = round(166.4)

    CHECK_THROWS_AS(stylize::partial_diffuse(z, 1.5, s, 9), InputError);

    // deterministic in the seed
    auto [m3, t3] = stylize::partial_diffuse(z, 0.65, s, 9);
    CHECK(m3.v == m2.v);
    auto [m4, t4] = stylize::partial_diffuse(z, 0.65, s, 10);
    CHECK(m4.v != m2.v);
}

TEST_CASE("determined_diffuse with an oracle denoiser reproduces M_cn") {
    auto s = diff::make_schedule(256, 4e-4, 0.08);
    TenF z({1, 4, 4});
    Rng rng(2);
    rng.fill_normal(z.v);
    const uint64_t seed = 33;
    auto [m_cn, t_p] = stylize::partial_diffuse(z, 0.65, s, seed);

    // reconstruct the exact noise the partial step drew
    TenF true_eps(z.shape);
    {
        Rng r2(Rng::mix(seed, Rng::hash_name("partial_diffuse")));
        r2.fill_normal(true_eps.v);
    }
    diff::EpsPairFn oracle = [&](const TenF&, int, const text::ConditionSet&,
                                 const text::ConditionSet&) {
        return std::make_pair(true_eps, true_eps);
    };
    text::ConditionSet dummy;
    dummy.rows = TenF({1, 1});
    auto [m_hat, eps_hat] =
        stylize::determined_diffuse(z, m_cn, t_p, dummy, dummy, 4.0, oracle, s);
    CHECK(m_hat.v == m_cn.v);    // bitwise: same closed form, same inputs
    CHECK(eps_hat.v == true_eps.v);
}

TEST_CASE("determined_diffuse with a zero denoiser scales the clean latent") {
    auto s = diff::make_schedule(256, 4e-4, 0.08);
    TenF z({1, 3, 3});
    Rng rng(3);
    rng.fill_normal(z.v);
    diff::EpsPairFn zero = [&](const TenF& x, int, const text::ConditionSet&,
                               const text::ConditionSet&) {
        return std::make_pair(TenF(x.shape), TenF(x.shape));
    };
    text::ConditionSet dummy;
    dummy.rows = TenF({1, 1});
    const int t_p = 100;
    auto [m_hat, eps_hat] =
        stylize::determined_diffuse(z, z, t_p, dummy, dummy, 4.0, zero, s);
    const float c = float(std::sqrt(s.alpha_bar[t_p]));
    for (size_t i = 0; i < z.v.size(); ++i)
        CHECK(m_hat.v[i] == doctest::Approx(z.v[i] * c).epsilon(1e-6));

    bool skipped = false;
    auto [same, zero_eps] =
        stylize::determined_diffuse(z, z, 0, dummy, dummy, 4.0, zero, s, &skipped);
    CHECK(skipped);
    CHECK(same.v == z.v);
}

TEST_CASE("stylize strength zero is a strict mel no-op") {
    auto mc = tiny_model();
    auto ckpt = diff::Checkpoint::create(mc, 5);
    auto art = inversion::InversionArtifact::create(ckpt, 6);
    auto content = random_mel(mc.dsp, mc.dsp.n_mels, 40, 7);

    stylize::StylizationRequest req;
    req.content = content;
    req.strength = 0.0;
    req.seed = 11;
    auto res = stylize::run(req, art, ckpt);
    CHECK(res.mel.values.v == content.values.v);
    CHECK(res.t_p == 0);
    // waveform is the Griffin-Lim render of the content mel
    auto gl = dsp::griffin_lim(content, mc.dsp, stylize::stylize_gl_seed(11, 0));
    CHECK(res.wav.samples == gl.samples);
}

TEST_CASE("stylize is deterministic and differs only after the BRS insertion") {
    auto mc = tiny_model();
    auto ckpt = diff::Checkpoint::create(mc, 15);
    auto art = inversion::InversionArtifact::create(ckpt, 16);
    auto content = random_mel(mc.dsp, mc.dsp.n_mels, mc.frames, 17);

    stylize::StylizationRequest req;
    req.content = content;
    req.strength = 0.65;
    req.n_steps = 6;
    req.seed = 100;
    req.render_audio = false;
    req.keep_intermediates = true;

    auto a = stylize::run(req, art, ckpt);
    auto b = stylize::run(req, art, ckpt);
    CHECK(a.mel.values.v == b.mel.values.v);  // pipeline determinism

    req.bias_reduced = false;
    auto c = stylize::run(req, art, ckpt);
    // both arms share the partial-diffusion output under a shared seed
    REQUIRE(a.m_cn.has_value());
    REQUIRE(c.m_cn.has_value());
    CHECK(a.m_cn->v == c.m_cn->v);
    // the raw arm records no determined-diffusion intermediates
    CHECK(a.m_hat_cn.has_value());
    CHECK_FALSE(c.m_hat_cn.has_value());
    // and the outputs diverge downstream
    CHECK(a.mel.values.v != c.mel.values.v);

    // parameter echo is complete
    CHECK(a.strength == req.strength);
    CHECK(a.scale == req.scale);
    CHECK(a.n_steps == req.n_steps);
    CHECK(a.seed == req.seed);
    CHECK(a.params_json().find("\"t_p\"") != std::string::npos);
}

TEST_CASE("stylize windows long content and seams stay bounded") {
    auto mc = tiny_model();
    auto ckpt = diff::Checkpoint::create(mc, 25);
    auto art = inversion::InversionArtifact::create(ckpt, 26);
    auto content = random_mel(mc.dsp, mc.dsp.n_mels, 50, 27);  // > 3 windows

    stylize::StylizationRequest req;
    req.content = content;
    req.strength = 0.4;
    req.n_steps = 4;
    req.seed = 1;
    req.render_audio = true;
    auto res = stylize::run(req, art, ckpt);
    CHECK(res.mel.n_frames() == 50);
    CHECK(res.wav.samples.size() == size_t(49) * size_t(mc.dsp.hop));
    for (float v : res.mel.values.v) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("stylize rejects a mismatched artifact") {
    auto mc = tiny_model();
    auto ckpt = diff::Checkpoint::create(mc, 35);
    auto other = diff::Checkpoint::create(mc, 36);
    auto art = inversion::InversionArtifact::create(other, 37);
    stylize::StylizationRequest req;
    req.content = random_mel(mc.dsp, mc.dsp.n_mels, 16, 38);
    CHECK_THROWS_AS(stylize::run(req, art, ckpt), ConfigError);
}
