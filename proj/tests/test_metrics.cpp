#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "melstyle/corpus.hpp"
#include "melstyle/metrics.hpp"

using namespace melstyle;
using namespace melstyle::metrics;

namespace {

dsp::MelSpectrogram clip_mel(uint64_t seed, const std::string& style_name) {
    dsp::DspConfig cfg;
    auto styles = corpus::standard_styles();
    const corpus::StyleSpec content_like{
        "plain", corpus::SynthKind::harmonic_stack,
        {1.0, 1.0, 1.5, 2.0, 0.4, 2.5, 3.0, 0.2, 3.5}, false};
    const auto& spec = style_name == "plain" ? content_like
                                             : corpus::find_style(styles, style_name);
    return dsp::mel_spectrogram(corpus::synth_melody(seed, spec, cfg), cfg);
}

dsp::MelSpectrogram reversed(const dsp::MelSpectrogram& m) {
    dsp::MelSpectrogram out = m;
    for (int b = 0; b < m.n_mels(); ++b)
        for (int f = 0; f < m.n_frames(); ++f)
            out.at(b, f) = m.at(b, m.n_frames() - 1 - f);
    return out;
}

}  // namespace

TEST_CASE("content preservation is exactly 1 on itself") {
    auto m = clip_mel(1, "plain");
    CHECK(content_preservation(m, m) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("time reversal lowers content preservation") {
    for (uint64_t seed : {2ull, 3ull, 4ull}) {
        auto m = clip_mel(seed, "plain");
        CHECK(content_preservation(reversed(m), m) < content_preservation(m, m));
    }
}

TEST_CASE("independent melodies average below 0.5") {
    // null distribution over 50 pairs
    std::vector<dsp::MelSpectrogram> mels;
    for (uint64_t s = 0; s < 12; ++s) mels.push_back(clip_mel(s + 10, "plain"));
    double acc = 0;
    int n = 0;
    for (size_t i = 0; i < mels.size() && n < 50; ++i)
        for (size_t j = 0; j < mels.size() && n < 50; ++j) {
            if (i == j) continue;
            acc += content_preservation(mels[i], mels[j]);
            ++n;
        }
    CHECK(n >= 50);
    CHECK(acc / n < 0.5);
}

TEST_CASE("content preservation rejects degenerate input") {
    dsp::MelSpectrogram flat;
    flat.config = dsp::DspConfig{};
    flat.values = TenF({64, 16});
    for (auto& v : flat.values.v) v = -1.0f;
    CHECK_THROWS_AS(content_preservation(flat, flat), DegenerateInputError);
}

TEST_CASE("style fit is exactly 1 on itself and frame-permutation invariant") {
    auto m = clip_mel(5, "bell");
    CHECK(style_fit(m, m) == doctest::Approx(1.0).epsilon(1e-12));

    // permute frames of one argument
    dsp::MelSpectrogram perm = m;
    Rng rng(6);
    for (int f = m.n_frames() - 1; f > 0; --f) {
        int j = int(rng.uniform_int(uint64_t(f) + 1));
        for (int b = 0; b < m.n_mels(); ++b) std::swap(perm.at(b, f), perm.at(b, j));
    }
    CHECK(style_fit(perm, m) == doctest::Approx(style_fit(m, m)).epsilon(1e-9));
    CHECK(style_fit(m, perm) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("style fit separates timbre classes") {
    auto bell_a = clip_mel(7, "bell");
    auto bell_b = clip_mel(8, "bell");
    auto noise = clip_mel(9, "noiseburst");
    CHECK(style_fit(bell_a, bell_b) > style_fit(bell_a, noise));
}

TEST_CASE("style fit rejects zero-variance spectrograms") {
    dsp::MelSpectrogram flat;
    flat.config = dsp::DspConfig{};
    flat.values = TenF({64, 16});
    auto ok = clip_mel(10, "bell");
    CHECK_THROWS_AS(style_fit(flat, ok), DegenerateInputError);
}

TEST_CASE("metric scores stay within [-1, 1]") {
    for (uint64_t s = 0; s < 6; ++s) {
        auto a = clip_mel(s + 30, "plain");
        auto b = clip_mel(s + 40, s % 2 ? "bell" : "rain");
        const double cp = content_preservation(a, b);
        const double sf = style_fit(a, b);
        CHECK(cp >= -1.0);
        CHECK(cp <= 1.0);
        CHECK(sf >= -1.0);
        CHECK(sf <= 1.0);
    }
}

TEST_CASE("benchmark bookkeeping: one row per arm x pair x seed") {
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
    mc.sched.T = 32;
    mc.dsp.n_mels = 16;
    mc.dsp.n_fft = 256;
    mc.dsp.hop = 64;
    mc.dsp.fmax = 8000;

    auto ckpt = diff::Checkpoint::create(mc, 50);
    auto art_tve = inversion::InversionArtifact::create(ckpt, 51, true);
    auto art_ti = inversion::InversionArtifact::create(ckpt, 52, false);

    BenchmarkPair pair;
    pair.id = "p0";
    pair.content.config = mc.dsp;
    pair.content.values = TenF({16, 16});
    Rng rng(53);
    for (auto& v : pair.content.values.v) v = float(rng.uniform() * 1.4 - 0.7);
    pair.style_ref = pair.content;

    ArmSelector sel;
    sel.tve_artifact = &art_tve;
    sel.ti_artifact = &art_ti;

    BenchmarkConfig bc;
    bc.n_steps = 3;
    std::vector<BenchmarkArm> one_arm = {{"full", true, true}};
    auto rep = run_benchmark({pair}, {sel}, one_arm, {7ull}, ckpt, bc);
    CHECK(rep.rows.size() == 1);
    CHECK(rep.rows[0].arm == "full");
    CHECK(rep.rows[0].pair_id == "p0");
    CHECK(rep.rows[0].seed == 7);
    REQUIRE(rep.arms.size() == 1);
    CHECK(rep.arms[0].n == 1);

    // determinism of the whole report
    auto rep2 = run_benchmark({pair}, {sel}, one_arm, {7ull}, ckpt, bc);
    CHECK(rep2.rows[0].cp == rep.rows[0].cp);
    CHECK(rep2.rows[0].sf == rep.rows[0].sf);

    // csv emission
    rep.save_csv("test_report.csv");
    std::ifstream f("test_report.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header == "arm,pair_id,seed,cp,sf");
    int data_rows = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++data_rows;
    CHECK(data_rows == 1);
    std::remove("test_report.csv");

    CHECK(rep.format_table().find("full") != std::string::npos);
}
