// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.
// Heavy artifacts (corpus, checkpoint, inversions, benchmark runs) are cached
// under --cache and reused when their hashes still match.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "melstyle/config.hpp"
#include "melstyle/corpus.hpp"
#include "melstyle/diffusion.hpp"
#include "melstyle/fft.hpp"
#include "melstyle/inversion.hpp"
#include "melstyle/metrics.hpp"
#include "melstyle/stylize.hpp"

namespace fs = std::filesystem;
using namespace melstyle;

namespace {

constexpr uint64_t kMasterSeed = 42;

struct Ctx {
    std::string cache;
    cli::RunConfig cfg = cli::RunConfig::defaults();
    corpus::CorpusManifest manifest;
    std::unique_ptr<diff::Checkpoint> ckpt;
    std::map<std::string, inversion::InversionArtifact> artifacts;
    double pretrain_wall_s = 0.0;
    std::vector<float> pretrain_curve;

    std::string corpus_dir() const { return (fs::path(cache) / "corpus").string(); }
    std::string ckpt_path() const {
        return (fs::path(cache) / "checkpoint.msck").string();
    }
};

int g_pass = 0, g_fail = 0;

void report(int idx, bool ok, const std::string& what, const std::string& detail) {
    std::printf("criterion %2d: %s — %s (%s)\n", idx, ok ? "PASS" : "FAIL",
                what.c_str(), detail.c_str());
    std::fflush(stdout);
    (ok ? g_pass : g_fail)++;
}

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// ------------------------------------------------------------ stage: corpus

void stage_corpus(Ctx& c) {
    const std::string manifest_path =
        (fs::path(c.corpus_dir()) / "manifest.jsonl").string();
    if (fs::exists(manifest_path)) {
        c.manifest = corpus::CorpusManifest::load(manifest_path);
        if (c.manifest.n_content == c.cfg.n_content &&
            c.manifest.n_style == c.cfg.n_style) {
            std::printf("[stage] corpus: cached (%zu records)\n",
                        c.manifest.records.size());
            return;
        }
    }
    std::printf("[stage] corpus: building %d content + %d style clips...\n",
                c.cfg.n_content, c.cfg.n_style);
    c.manifest = corpus::build_corpus(
        c.corpus_dir(), Rng::substream(kMasterSeed, "corpus").next_u64(),
        c.cfg.n_content, c.cfg.n_style, corpus::standard_styles(), c.cfg.model.dsp);
}

// --------------------------------------------------------- stage: pretrain

void stage_pretrain(Ctx& c) {
    const std::string meta_path = c.ckpt_path() + ".meta.json";
    if (fs::exists(c.ckpt_path()) && fs::exists(meta_path)) {
        auto ck = diff::Checkpoint::load(c.ckpt_path());
        if (ck.corpus_hash == c.manifest.hash()) {
            std::ifstream mf(meta_path);
            auto meta = nlohmann::json::parse(mf);
            c.pretrain_wall_s = meta["wall_s"].get<double>();
            c.pretrain_curve = meta["curve"].get<std::vector<float>>();
            c.ckpt = std::make_unique<diff::Checkpoint>(std::move(ck));
            std::printf("[stage] pretrain: cached (%.0f s, final loss %.4f)\n",
                        c.pretrain_wall_s,
                        meta["final_loss"].get<double>());
            return;
        }
    }
    std::printf("[stage] pretrain: training backbone from scratch...\n");
    auto ck = diff::Checkpoint::create(
        c.cfg.model, Rng::substream(kMasterSeed, "pretrain.init").next_u64());
    diff::PretrainConfig pc;
    pc.epochs = c.cfg.pretrain_epochs;
    pc.batch_size = c.cfg.pretrain_batch;
    pc.lr = c.cfg.pretrain_lr;
    pc.p_uncond = c.cfg.p_uncond;
    pc.seed = Rng::substream(kMasterSeed, "pretrain").next_u64();
    pc.state_path = c.ckpt_path() + ".state";
    pc.resume = true;
    pc.progress = [](int s, double l) {
        std::printf("  pretrain step %5d  loss %.4f\n", s, l);
        std::fflush(stdout);
    };
    const double t0 = now_s();
    auto res = diff::pretrain(ck, c.manifest, c.corpus_dir(), pc);
    c.pretrain_wall_s = now_s() - t0;
    c.pretrain_curve = res.loss_curve;
    ck.save(c.ckpt_path());
    nlohmann::json meta;
    meta["wall_s"] = c.pretrain_wall_s;
    meta["final_loss"] = res.final_loss;
    meta["curve"] = res.loss_curve;
    std::ofstream mf(meta_path);
    mf << meta.dump() << "\n";
    c.ckpt = std::make_unique<diff::Checkpoint>(std::move(ck));
}

// -------------------------------------------------------- stage: inversions

std::vector<dsp::MelSpectrogram> style_clips(const Ctx& c, const std::string& style,
                                             size_t max_clips) {
    std::vector<dsp::MelSpectrogram> clips;
    for (const auto& r : c.manifest.records) {
        if (r.role == "style" && r.style_name == style && clips.size() < max_clips) {
            auto w = read_wav((fs::path(c.corpus_dir()) / r.wav_path).string());
            clips.push_back(dsp::mel_spectrogram(w, c.manifest.dsp_config));
        }
    }
    return clips;
}

void stage_inversions(Ctx& c) {
    // instrument-like held-out style gets 3 clips, nature-like gets 1
    const std::vector<std::pair<std::string, size_t>> styles = {{"chime", 3},
                                                                {"rain", 1}};
    for (const auto& [style, n_clips] : styles) {
        for (bool tve : {true, false}) {
            const std::string key = style + (tve ? "_tve" : "_ti");
            const std::string path =
                (fs::path(c.cache) / ("invert_" + key + ".msck")).string();
            if (fs::exists(path)) {
                auto art = inversion::InversionArtifact::load(path);
                if (art.source_model_hash == c.ckpt->model_hash()) {
                    std::printf("[stage] inversion %s: cached (final loss %.4f)\n",
                                key.c_str(), art.final_loss);
                    c.artifacts.emplace(key, std::move(art));
                    continue;
                }
            }
            std::printf("[stage] inversion %s: optimizing...\n", key.c_str());
            inversion::InversionConfig ic;
            ic.lr = c.cfg.invert_lr;
            ic.max_steps = c.cfg.invert_steps;
            ic.batch_size = c.cfg.invert_batch;
            ic.seed = Rng::substream(kMasterSeed, "invert." + key).next_u64();
            ic.train_tve = tve;
            auto art = inversion::invert_style(style_clips(c, style, n_clips),
                                               *c.ckpt, ic);
            art.save(path);
            c.artifacts.emplace(key, inversion::InversionArtifact::load(path));
        }
    }
}

// ------------------------------------------------------------- criterion 1

void criterion_1() {
    auto s = diff::make_schedule(256, 1e-4 * 1000 / 256, 0.02 * 1000 / 256);
    bool ok = true;
    std::string detail;

    // Monte-Carlo moments at T/4, T/2, 3T/4 (10,000 draws of a 4096-element
    // latent, pooled so the estimator sits well inside the 2% band)
    for (int t : {64, 128, 192}) {
        const double ab = s.alpha_bar[size_t(t)];
        Rng rng(Rng::mix(Rng::hash_name("c1.moments"), uint64_t(t)));
        Ten<double> z0({4096});
        for (auto& x : z0.v) x = 0.5;
        const int draws = 10000;
        double sum = 0.0, sum2 = 0.0;
        const double n_total = double(draws) * 4096.0;
        Ten<double> eps({4096});
        for (int i = 0; i < draws; ++i) {
            rng.fill_normal(eps.v);
            auto zt = diff::q_sample(z0, t, eps, s);
            for (double v : zt.v) {
                sum += v;
                sum2 += v * v;
            }
        }
        const double mean = sum / n_total;
        const double var = sum2 / n_total - mean * mean;
        const double mean_expect = std::sqrt(ab) * 0.5;
        const double var_expect = 1.0 - ab;
        if (std::abs(mean - mean_expect) > 0.02 * std::abs(mean_expect)) ok = false;
        if (std::abs(var - var_expect) > 0.02 * var_expect) ok = false;
    }

    // exact-inversion identity at 64-bit
    {
        Rng rng(11);
        Ten<double> z0({64});
        Ten<double> eps({64});
        rng.fill_normal(z0.v);
        rng.fill_normal(eps.v);
        for (int t : {5, 100, 256}) {
            auto zt = diff::q_sample(z0, t, eps, s);
            auto back = diff::ddim_step(zt, eps, t, 0, s);  // ab[0]=1: returns x0_pred
            for (size_t i = 0; i < back.v.size(); ++i)
                if (std::abs(back.v[i] - z0.v[i]) > 1e-10) ok = false;
        }
    }

    // full chain repeat-run agreement < 1e-6
    double max_diff = 0.0;
    {
        diff::ModelConfig mc;
        auto ck = diff::Checkpoint::create(mc, 3);
        TenF z({1, 64, 64});
        Rng rng(13);
        rng.fill_normal(z.v);
        diff::SamplerConfig scfg;
        scfg.n_steps = 50;
        auto cond = [&](double t) { return ck.encode_caption("a bell melody", t); };
        auto unc = [&](double t) { return ck.encode_caption("", t); };
        auto a = diff::ddim_sample(z, ck.schedule.T, cond, unc, scfg, ck.eps_pair(),
                                   ck.schedule);
        auto b = diff::ddim_sample(z, ck.schedule.T, cond, unc, scfg, ck.eps_pair(),
                                   ck.schedule);
        for (size_t i = 0; i < a.v.size(); ++i)
            max_diff = std::max(max_diff, double(std::abs(a.v[i] - b.v[i])));
        if (max_diff >= 1e-6) ok = false;
    }
    report(1, ok, "diffusion math suite",
           "moments 2%, inversion 1e-10, chain repeat max |d|=" +
               std::to_string(max_diff));
}

// ------------------------------------------------------------- criterion 2

void criterion_2() {
    bool ok = true;
    double worst = 0.0;
    const double h = 1e-5;

    // TVE: every parameter matrix probed at 64-bit
    {
        text::TveConfig tc;  // default d=128 g=8
        nn::ParamSet<double> ps;
        Rng rng(21);
        auto tve = text::Tve<double>::create(ps, "tve", tc, rng);
        // give the zero-init output layer nonzero weights so its gradient
        // paths are exercised away from the trivial point
        for (auto* p : ps.all())
            if (p->value.v[0] == 0.0)
                for (auto& x : p->value.v) x = rng.normal() * 0.05;
        nn::ParamSet<double> star_ps;
        auto& star = star_ps.add("v_o_star", nn::normal_init<double>({tc.d}, rng, 0.4));
        Ten<double> target = nn::normal_init<double>({tc.d}, rng, 1.0);

        auto loss_value = [&](double tstep) {
            ad::Tape<double> tp;
            auto out = tve.fwd(tp, tstep, tp.param(star));
            auto loss = ad::mse(tp, out, tp.input(target));
            return tp.val(loss).v[0];
        };
        ps.zero_grads();
        star_ps.zero_grads();
        {
            ad::Tape<double> tp;
            auto out = tve.fwd(tp, 77.0, tp.param(star));
            auto loss = ad::mse(tp, out, tp.input(target));
            tp.backward(loss);
        }
        Rng prng(22);
        auto all = ps.all();
        all.push_back(&star);
        for (auto* p : all) {
            for (int k = 0; k < 3; ++k) {
                size_t i = size_t(prng.uniform_int(uint64_t(p->value.v.size())));
                const double orig = p->value.v[i];
                p->value.v[i] = orig + h;
                const double lp = loss_value(77.0);
                p->value.v[i] = orig - h;
                const double lm = loss_value(77.0);
                p->value.v[i] = orig;
                const double fd = (lp - lm) / (2 * h);
                const double adg = p->grad.v[i];
                const double rel = std::abs(fd - adg) /
                                   std::max({std::abs(fd), std::abs(adg), 1e-8});
                worst = std::max(worst, rel);
                if (rel >= 1e-4) ok = false;
            }
        }
    }

    // denoiser: 100-weight probe on a reduced-size instance of the same code
    {
        diff::UNetConfig uc;
        uc.in_ch = 1;
        uc.base = 16;
        uc.widths = {8, 12, 16};
        uc.t_embed_dim = 32;
        uc.cond_dim = 24;
        uc.gn_groups = 4;
        uc.attn_heads = 2;
        nn::ParamSet<double> ps;
        Rng rng(23);
        auto unet = diff::UNet<double>::create(ps, "unet", uc, rng);
        for (auto* p : ps.all())
            if (p->name.find("head.w") != std::string::npos ||
                p->name.find("attn_o.w") != std::string::npos)
                for (auto& x : p->value.v) x = rng.normal() * 0.05;

        Ten<double> z = nn::normal_init<double>({2, 1, 16, 16}, rng, 1.0);
        Ten<double> cond = nn::normal_init<double>({2, 4, 24}, rng, 1.0);
        Ten<double> target = nn::normal_init<double>({2, 1, 16, 16}, rng, 1.0);
        const std::vector<double> ts{12.0, 200.0};

        auto loss_value = [&]() {
            ad::Tape<double> tp;
            auto out = unet.fwd(tp, tp.input(z), ts, tp.input(cond));
            auto loss = ad::mse(tp, out, tp.input(target));
            return tp.val(loss).v[0];
        };
        ps.zero_grads();
        {
            ad::Tape<double> tp;
            auto out = unet.fwd(tp, tp.input(z), ts, tp.input(cond));
            auto loss = ad::mse(tp, out, tp.input(target));
            tp.backward(loss);
        }
        auto all = ps.all();
        Rng prng(24);
        for (int probe = 0; probe < 100; ++probe) {
            auto* p = all[size_t(probe) % all.size()];
            size_t i = size_t(prng.uniform_int(uint64_t(p->value.v.size())));
            const double orig = p->value.v[i];
            p->value.v[i] = orig + h;
            const double lp = loss_value();
            p->value.v[i] = orig - h;
            const double lm = loss_value();
            p->value.v[i] = orig;
            const double fd = (lp - lm) / (2 * h);
            const double adg = p->grad.v[i];
            const double rel =
                std::abs(fd - adg) / std::max({std::abs(fd), std::abs(adg), 1e-8});
            worst = std::max(worst, rel);
            if (rel >= 1e-4) ok = false;
        }
    }
    report(2, ok, "gradient suite (TVE + denoiser vs central differences)",
           "worst rel err " + std::to_string(worst));
}

// ------------------------------------------------------------- criterion 3

void criterion_3() {
    bool ok = true;
    std::string detail = "zero-init t-independence";

    // zero-init => timestep-independent output
    {
        text::TveConfig tc;
        nn::ParamSet<float> ps;
        Rng rng(31);
        auto tve = text::Tve<float>::create(ps, "tve", tc, rng);
        nn::ParamSet<float> sps;
        auto& star = sps.add("v", nn::normal_init<float>({tc.d}, rng, 0.3));
        auto a = text::tve_forward(tve, 0.0, star);
        auto b = text::tve_forward(tve, 256.0, star);
        for (size_t i = 0; i < a.v.size(); ++i)
            if (std::abs(double(a.v[i]) - double(b.v[i])) > 1e-6) ok = false;
    }

    // attention rows sum to 1 within 1e-6 (recomputed from raw scores)
    {
        Rng rng(32);
        Ten<double> q = nn::normal_init<double>({5, 8}, rng, 1.0);
        Ten<double> k = nn::normal_init<double>({7, 8}, rng, 1.0);
        Ten<double> ones({7, 1});
        for (auto& x : ones.v) x = 1.0;
        auto sums = text::attention(q, k, ones);  // rows of softmax * 1 = row sums
        for (double sv : sums.v)
            if (std::abs(sv - 1.0) > 1e-6) ok = false;
    }

    // single key: output equals V's row for every query
    {
        Rng rng(33);
        Ten<double> q = nn::normal_init<double>({4, 6}, rng, 1.0);
        Ten<double> k = nn::normal_init<double>({1, 6}, rng, 1.0);
        Ten<double> v = nn::normal_init<double>({1, 3}, rng, 1.0);
        auto out = text::attention(q, k, v);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 3; ++j)
                if (std::abs(out.v[size_t(i) * 3 + size_t(j)] - v.v[size_t(j)]) >
                    1e-12)
                    ok = false;
    }

    // output dimension preserved for every group count dividing d
    {
        for (int g : {2, 4, 8, 16}) {
            text::TveConfig tc;
            tc.groups = g;
            nn::ParamSet<float> ps;
            Rng rng(34);
            auto tve = text::Tve<float>::create(ps, "tve", tc, rng);
            nn::ParamSet<float> sps;
            auto& star = sps.add("v", nn::normal_init<float>({tc.d}, rng, 0.3));
            auto out = text::tve_forward(tve, 100.0, star);
            if (int(out.v.size()) != tc.d) ok = false;
        }
    }
    report(3, ok, "TVE structural suite", detail);
}

// ------------------------------------------------------------- criterion 4

void criterion_4() {
    diff::ModelConfig mc;
    auto ck = diff::Checkpoint::create(mc, 5);
    auto art = inversion::InversionArtifact::create(ck, 6);

    // synthetic 100-frame content
    dsp::MelSpectrogram content;
    content.config = mc.dsp;
    content.values = TenF({mc.dsp.n_mels, 100});
    Rng rng(41);
    for (auto& v : content.values.v) v = float(rng.uniform() * 1.6 - 0.8);

    bool ok = true;

    stylize::StylizationRequest req;
    req.content = content;
    req.strength = 0.0;
    req.seed = 77;
    req.render_audio = false;
    auto r0 = stylize::run(req, art, ck);
    if (r0.mel.values.v != content.values.v) ok = false;  // bitwise no-op
    if (r0.t_p != 0) ok = false;

    req.strength = 0.65;
    req.n_steps = 10;
    auto ra = stylize::run(req, art, ck);
    auto rb = stylize::run(req, art, ck);
    if (ra.mel.values.v != rb.mel.values.v) ok = false;  // same seed, same result
    if (ra.t_p != 166) ok = false;                       // round(256*0.65)

    req.strength = 1.0;
    req.n_steps = 4;
    auto rc = stylize::run(req, art, ck);
    if (rc.t_p != 256) ok = false;

    report(4, ok, "pipeline identity and determinism",
           "t_p(0,0.65,1) = 0,166,256; strength-0 bitwise; repeat identical");
}

// ------------------------------------------------------------- criterion 5

void criterion_5(Ctx& c) {
    bool ok = true;
    std::string detail;

    const long long params = c.ckpt->unet_ps.count_scalars();
    if (params > 4000000) ok = false;
    if (c.ckpt->schedule.T != 256) ok = false;
    if (c.ckpt->cfg.codec.learned) ok = false;
    if (c.ckpt->cfg.frames != 64 || c.ckpt->cfg.dsp.n_mels != 64) ok = false;

    double final_loss = 0.0;
    {
        const size_t n = std::min<size_t>(100, c.pretrain_curve.size());
        if (n == 0) ok = false;
        for (size_t i = c.pretrain_curve.size() - n; i < c.pretrain_curve.size(); ++i)
            final_loss += c.pretrain_curve[i];
        final_loss /= double(std::max<size_t>(n, 1));
        if (!(final_loss < 0.5)) ok = false;
    }
    if (c.pretrain_wall_s > 12.0 * 3600.0) ok = false;  // overnight CPU ceiling

    // conditioning sensitivity: same start latent, two style captions
    {
        TenF z({1, 64, 64});
        Rng rng(51);
        rng.fill_normal(z.v);
        diff::SamplerConfig scfg;
        scfg.n_steps = 50;
        auto unc = [&](double t) { return c.ckpt->encode_caption("", t); };
        auto mk = [&](const std::string& cap) {
            auto cond = [&, cap](double t) { return c.ckpt->encode_caption(cap, t); };
            return diff::ddim_sample(z, c.ckpt->schedule.T, cond, unc, scfg,
                                     c.ckpt->eps_pair(), c.ckpt->schedule);
        };
        auto a = mk("a bell melody");
        auto b = mk("a noiseburst melody");
        double mx = 0.0;
        for (size_t i = 0; i < a.v.size(); ++i)
            mx = std::max(mx, double(std::abs(a.v[i] - b.v[i])));
        if (!(mx > 0.01)) ok = false;

        // prompted generation lands nearer its own style class
        auto bell_ref = dsp::fit_frames(style_clips(c, "bell", 1)[0], 64);
        auto noise_ref = dsp::fit_frames(style_clips(c, "noiseburst", 1)[0], 64);
        dsp::MelSpectrogram bell_gen;
        bell_gen.config = c.cfg.model.dsp;
        bell_gen.values = TenF({a.dim(1), a.dim(2)});
        for (size_t i = 0; i < a.v.size(); ++i)
            bell_gen.values.v[i] = std::clamp(a.v[i], -1.0f, 1.0f);
        const double sf_own = metrics::style_fit(bell_gen, bell_ref);
        const double sf_other = metrics::style_fit(bell_gen, noise_ref);
        if (!(sf_own > sf_other)) ok = false;

        detail = "params=" + std::to_string(params) +
                 ", loss=" + std::to_string(final_loss) +
                 ", wall=" + std::to_string(int(c.pretrain_wall_s)) + "s" +
                 ", cond max|d|=" + std::to_string(mx) + ", bell sf " +
                 std::to_string(sf_own) + ">" + std::to_string(sf_other);
    }
    report(5, ok, "pretraining viability", detail);
}

// ------------------------------------------------------------- criterion 6

void criterion_6(Ctx& c) {
    const std::string cache_path = (fs::path(c.cache) / "recon_sf.json").string();
    nlohmann::json table;
    const std::string hash_key = std::to_string(c.ckpt->model_hash());
    if (fs::exists(cache_path)) {
        std::ifstream f(cache_path);
        table = nlohmann::json::parse(f);
        if (!table.contains("model_hash") || table["model_hash"] != hash_key)
            table = nlohmann::json();
    }

    bool ok = true;
    std::string detail;
    for (const std::string style : {"chime", "rain"}) {
        const auto& art = c.artifacts.at(style + "_tve");

        // loss reduction: first-100 vs last-100 mean
        const auto& curve = art.loss_curve;
        double first = 0, last = 0;
        for (size_t i = 0; i < 100 && i < curve.size(); ++i) first += curve[i];
        for (size_t i = curve.size() >= 100 ? curve.size() - 100 : 0;
             i < curve.size(); ++i)
            last += curve[i];
        first /= 100.0;
        last /= 100.0;
        const bool loss_ok = last < 0.8 * first;
        if (!loss_ok) ok = false;

        int wins = 0;
        if (table.contains(style)) {
            wins = table[style].get<int>();
        } else {
            auto ref = style_clips(c, style, 1);
            dsp::MelSpectrogram style_ref = dsp::fit_frames(ref[0], 64);
            for (int s = 0; s < 8; ++s) {
                const uint64_t seed = Rng::mix(606, uint64_t(s));
                auto recon = inversion::reconstruct(art, *c.ckpt, seed, 4.0, 50);
                auto plain = inversion::generate(*c.ckpt, "", seed, 4.0, 50);
                const double sf_r = metrics::style_fit(recon, style_ref);
                const double sf_g = metrics::style_fit(plain, style_ref);
                if (sf_r > sf_g) ++wins;
            }
            table[style] = wins;
        }
        if (wins < 6) ok = false;
        detail += style + ": loss " + std::to_string(first) + "->" +
                  std::to_string(last) + ", recon wins " + std::to_string(wins) +
                  "/8; ";
    }
    table["model_hash"] = hash_key;
    std::ofstream f(cache_path);
    f << table.dump() << "\n";
    report(6, ok, "inversion viability", detail);
}

// ------------------------------------------------------------- criterion 7

void criterion_7(Ctx& c) {
    bool ok = true;
    std::string detail;

    // untrained artifact: similarity identically 1
    {
        auto art = inversion::InversionArtifact::create(*c.ckpt, 71);
        auto traj = inversion::embedding_trajectory(art, 32, c.ckpt->schedule.T);
        for (double v : traj.cosine.v)
            if (std::abs(v - 1.0) > 1e-6) ok = false;
    }

    // trained artifacts: nearby timesteps more similar than distant ones
    for (const std::string style : {"chime", "rain"}) {
        const auto& art = c.artifacts.at(style + "_tve");
        auto traj = inversion::embedding_trajectory(art, 32, c.ckpt->schedule.T);
        const int n = 32;
        auto lag_mean = [&](int lag) {
            double m = 0;
            int cnt = 0;
            for (int i = 0; i + lag < n; ++i) {
                m += traj.cosine.v[size_t(i) * size_t(n) + size_t(i + lag)];
                ++cnt;
            }
            return m / cnt;
        };
        const double l1 = lag_mean(1), lhalf = lag_mean(n / 2);
        if (!(l1 > lhalf)) ok = false;
        detail += style + ": lag1 " + std::to_string(l1) + " vs lag16 " +
                  std::to_string(lhalf) + "; ";

        // trained embeddings drift apart across the schedule: the early-t
        // embedding is closer to its neighbor than to the far end
        {
            const double T = double(c.ckpt->schedule.T);
            auto cosv = [&](double ta, double tb) {
                auto ea = art.star_embedding(ta);
                auto eb = art.star_embedding(tb);
                double dot = 0, na = 0, nb = 0;
                for (size_t i = 0; i < ea.v.size(); ++i) {
                    dot += double(ea.v[i]) * double(eb.v[i]);
                    na += double(ea.v[i]) * double(ea.v[i]);
                    nb += double(eb.v[i]) * double(eb.v[i]);
                }
                return dot / std::max(std::sqrt(na * nb), 1e-12);
            };
            if (!(cosv(0.05 * T, 0.95 * T) < cosv(0.05 * T, 0.10 * T))) ok = false;
        }

        // training must actually move the trajectory (row variance > 0)
        double var = 0.0;
        const int d = traj.rows.dim(1);
        for (int j = 0; j < d; ++j) {
            double mu = 0;
            for (int i = 0; i < n; ++i) mu += traj.rows.v[size_t(i) * size_t(d) + size_t(j)];
            mu /= n;
            for (int i = 0; i < n; ++i) {
                double dv = traj.rows.v[size_t(i) * size_t(d) + size_t(j)] - mu;
                var += dv * dv;
            }
        }
        if (!(var > 0.0)) ok = false;
    }
    report(7, ok, "timestep differentiation (Fig. 3 analog)", detail);
}

// ---------------------------------------------------- criteria 8 benchmark

struct BenchSetup {
    std::vector<metrics::BenchmarkPair> pairs;
    std::vector<metrics::ArmSelector> selectors;
};

BenchSetup bench_setup(Ctx& c, int n_content) {
    BenchSetup b;
    const int frames = c.ckpt->cfg.frames;
    auto contents = c.manifest.by_role("content");
    n_content = std::min<int>(n_content, int(contents.size()));
    for (const std::string style : {"chime", "rain"}) {
        auto refs = style_clips(c, style, 1);
        auto style_ref = dsp::fit_frames(refs[0], frames);
        for (int ci = 0; ci < n_content; ++ci) {
            auto w = read_wav(
                (fs::path(c.corpus_dir()) / contents[size_t(ci)]->wav_path).string());
            auto m = dsp::mel_spectrogram(w, c.manifest.dsp_config);
            const int start = std::max((m.n_frames() - frames) / 2, 0);
            metrics::BenchmarkPair p;
            p.id = contents[size_t(ci)]->id + ":" + style;
            p.content.config = m.config;
            p.content.values = TenF({m.n_mels(), frames});
            for (int bb = 0; bb < m.n_mels(); ++bb)
                for (int ff = 0; ff < frames; ++ff)
                    p.content.at(bb, ff) =
                        start + ff < m.n_frames() ? m.at(bb, start + ff) : -1.0f;
            p.style_ref = style_ref;
            b.pairs.push_back(std::move(p));
            metrics::ArmSelector sel;
            sel.tve_artifact = &c.artifacts.at(style + "_tve");
            sel.ti_artifact = &c.artifacts.at(style + "_ti");
            b.selectors.push_back(sel);
        }
    }
    return b;
}

metrics::MetricReport run_bench_cached(Ctx& c, int seed_set, int n_content,
                                       int n_seeds) {
    const std::string path =
        (fs::path(c.cache) / ("bench_seed" + std::to_string(seed_set) + ".json"))
            .string();
    const std::string hash_key = std::to_string(c.ckpt->model_hash());
    if (fs::exists(path)) {
        std::ifstream f(path);
        auto j = nlohmann::json::parse(f);
        if (j["model_hash"] == hash_key) {
            metrics::MetricReport rep;
            for (const auto& row : j["rows"]) {
                metrics::ReportRow r;
                r.arm = row["arm"];
                r.pair_id = row["pair"];
                r.seed = row["seed"];
                r.cp = row["cp"];
                r.sf = row["sf"];
                rep.rows.push_back(r);
            }
            for (const auto& [arm, a] : j["arms"].items()) {
                metrics::ArmSummary s;
                s.arm = arm;
                s.cp_mean = a["cp_mean"];
                s.sf_mean = a["sf_mean"];
                s.cp_lo = a["cp_lo"];
                s.cp_hi = a["cp_hi"];
                s.sf_lo = a["sf_lo"];
                s.sf_hi = a["sf_hi"];
                s.n = a["n"];
                rep.arms.push_back(s);
            }
            std::printf("[stage] benchmark set %d: cached\n", seed_set);
            return rep;
        }
    }
    std::printf("[stage] benchmark set %d: running (%d pairs x 4 arms x %d seeds)...\n",
                seed_set, n_content * 2, n_seeds);
    auto setup = bench_setup(c, n_content);
    std::vector<uint64_t> seeds;
    Rng sr = Rng::substream(kMasterSeed, "bench.seeds." + std::to_string(seed_set));
    for (int i = 0; i < n_seeds; ++i) seeds.push_back(sr.next_u64());
    metrics::BenchmarkConfig bc;
    bc.strength = c.cfg.strength;
    bc.scale = c.cfg.scale;
    bc.n_steps = c.cfg.steps;
    auto rep = metrics::run_benchmark(setup.pairs, setup.selectors,
                                      metrics::standard_arms(), seeds, *c.ckpt, bc);
    nlohmann::json j;
    j["model_hash"] = hash_key;
    for (const auto& r : rep.rows)
        j["rows"].push_back({{"arm", r.arm},
                             {"pair", r.pair_id},
                             {"seed", r.seed},
                             {"cp", r.cp},
                             {"sf", r.sf}});
    for (const auto& a : rep.arms)
        j["arms"][a.arm] = {{"cp_mean", a.cp_mean}, {"sf_mean", a.sf_mean},
                            {"cp_lo", a.cp_lo},     {"cp_hi", a.cp_hi},
                            {"sf_lo", a.sf_lo},     {"sf_hi", a.sf_hi},
                            {"n", a.n}};
    std::ofstream f(path);
    f << j.dump() << "\n";
    rep.save_csv((fs::path(c.cache) /
                  ("bench_seed" + std::to_string(seed_set) + ".csv"))
                     .string());
    return rep;
}

void criterion_8(Ctx& c) {
    auto rep = run_bench_cached(c, 0, 20, 4);
    auto arm = [&](const std::string& name) -> const metrics::ArmSummary& {
        for (const auto& a : rep.arms)
            if (a.arm == name) return a;
        throw Error("missing arm " + name);
    };
    const auto& full = arm("full");
    const auto& no_tve = arm("no_tve");
    const auto& no_brs = arm("no_brs");

    struct Ordering {
        const char* name;
        double a_mean, a_lo, b_mean, b_hi;
    };
    std::vector<Ordering> ords = {
        {"SF(full)>SF(no_tve)", full.sf_mean, full.sf_lo, no_tve.sf_mean, no_tve.sf_hi},
        {"CP(full)>CP(no_brs)", full.cp_mean, full.cp_lo, no_brs.cp_mean, no_brs.cp_hi},
        {"SF(full)>SF(no_brs)", full.sf_mean, full.sf_lo, no_brs.sf_mean, no_brs.sf_hi},
    };

    bool all_ci = true, all_mean = true;
    std::string detail;
    for (const auto& o : ords) {
        const bool mean_ok = o.a_mean > o.b_mean;
        const bool ci_ok = mean_ok && o.a_lo > o.b_hi;  // non-overlapping intervals
        all_mean = all_mean && mean_ok;
        all_ci = all_ci && ci_ok;
        detail += std::string(o.name) + (ci_ok ? " CI-clear" : (mean_ok ? " mean-only" : " REVERSED")) + "; ";
    }

    bool ok = all_ci;
    if (!ok) {
        // fallback: ordering must hold in >= 4 of 5 independent benchmark seeds
        int wins_tve = 0, wins_cp = 0, wins_sf = 0;
        for (int s = 0; s < 5; ++s) {
            auto r = run_bench_cached(c, s, 20, 4);
            auto armv = [&](const std::string& name) -> const metrics::ArmSummary& {
                for (const auto& a : r.arms)
                    if (a.arm == name) return a;
                throw Error("missing arm " + name);
            };
            if (armv("full").sf_mean > armv("no_tve").sf_mean) ++wins_tve;
            if (armv("full").cp_mean > armv("no_brs").cp_mean) ++wins_cp;
            if (armv("full").sf_mean > armv("no_brs").sf_mean) ++wins_sf;
        }
        ok = wins_tve >= 4 && wins_cp >= 4 && wins_sf >= 4;
        detail += "seed-sets: tve " + std::to_string(wins_tve) + "/5, cp " +
                  std::to_string(wins_cp) + "/5, sf " + std::to_string(wins_sf) +
                  "/5";
    }
    report(8, ok, "ablation table directional reproduction", detail);
}

// ------------------------------------------------------------- criterion 9

void criterion_9(Ctx& c) {
    const std::string path = (fs::path(c.cache) / "stability.json").string();
    const std::string hash_key = std::to_string(c.ckpt->model_hash());
    nlohmann::json j;
    if (fs::exists(path)) {
        std::ifstream f(path);
        j = nlohmann::json::parse(f);
        if (!j.contains("model_hash") || j["model_hash"] != hash_key)
            j = nlohmann::json();
    }

    const int n_pairs_per_style = 4;
    const int n_seeds = 16;
    if (!j.contains("wins")) {
        std::printf("[stage] stability: %d pairs x %d seeds x 2 modes...\n",
                    n_pairs_per_style * 2, n_seeds);
        auto setup = bench_setup(c, n_pairs_per_style);
        int lower = 0, total = 0;
        std::vector<double> brs_sigma(setup.pairs.size()),
            raw_sigma(setup.pairs.size());
        parallel_for(int(setup.pairs.size()) * 2, [&](int jidx) {
            const size_t p = size_t(jidx / 2);
            const bool brs = (jidx % 2) == 0;
            const auto& artifact = *setup.selectors[p].tve_artifact;
            std::vector<TenF> outs;
            for (int s = 0; s < n_seeds; ++s) {
                stylize::StylizationRequest req;
                req.content = setup.pairs[p].content;
                req.strength = c.cfg.strength;
                req.scale = c.cfg.scale;
                req.n_steps = c.cfg.steps;
                req.seed = Rng::mix(909, uint64_t(s));
                req.bias_reduced = brs;
                req.render_audio = false;
                outs.push_back(stylize::run(req, artifact, *c.ckpt).mel.values);
            }
            // elementwise mean of per-pixel std over seeds
            const size_t n = outs[0].v.size();
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) {
                double mu = 0;
                for (const auto& o : outs) mu += o.v[i];
                mu /= n_seeds;
                double var = 0;
                for (const auto& o : outs) var += (o.v[i] - mu) * (o.v[i] - mu);
                acc += std::sqrt(var / n_seeds);
            }
            (brs ? brs_sigma : raw_sigma)[p] = acc / double(n);
        });
        for (size_t p = 0; p < setup.pairs.size(); ++p) {
            ++total;
            if (brs_sigma[p] < raw_sigma[p]) ++lower;
            j["pairs"][setup.pairs[p].id] = {{"brs", brs_sigma[p]},
                                             {"raw", raw_sigma[p]}};
        }
        j["wins"] = lower;
        j["total"] = total;
        j["model_hash"] = hash_key;
        std::ofstream f(path);
        f << j.dump() << "\n";
    }
    const int wins = j["wins"].get<int>();
    const int total = j["total"].get<int>();
    const bool ok = double(wins) >= 0.7 * double(total);
    report(9, ok, "bias-reduction stability",
           "std lower with determined diffusion on " + std::to_string(wins) + "/" +
               std::to_string(total) + " pairs");
}

// ------------------------------------------------------------ criterion 10

void criterion_10(Ctx& c) {
    bool ok = true;
    dsp::DspConfig dcfg = c.cfg.model.dsp;

    // sine-peak recovery within one DFT bin
    {
        Waveform w;
        w.sample_rate = dcfg.sample_rate;
        w.samples.resize(size_t(2 * dcfg.sample_rate));
        for (size_t i = 0; i < w.samples.size(); ++i)
            w.samples[i] = float(
                0.5 * std::sin(2.0 * 3.14159265358979 * 440.0 * double(i) /
                               dcfg.sample_rate));
        auto m = dsp::mel_spectrogram(w, dcfg);
        auto rec = dsp::griffin_lim(m, dcfg, 99);
        const int n = 16384;
        std::vector<double> x(rec.samples.begin(), rec.samples.begin() + n);
        auto bins = rfft(x);
        int peak = 0;
        double best = 0;
        for (int k2 = 1; k2 < n / 2; ++k2)
            if (std::abs(bins[size_t(k2)]) > best) {
                best = std::abs(bins[size_t(k2)]);
                peak = k2;
            }
        const double got_hz = double(peak) * dcfg.sample_rate / n;
        const double df_bin = double(dcfg.sample_rate) / dcfg.n_fft;
        if (std::abs(got_hz - 440.0) > df_bin + double(dcfg.sample_rate) / n)
            ok = false;
    }

    // round-trip error on corpus clips
    double mae_worst = 0.0;
    {
        int checked = 0;
        for (const auto& r : c.manifest.records) {
            if (checked >= 3) break;
            auto w = read_wav((fs::path(c.corpus_dir()) / r.wav_path).string());
            auto m = dsp::mel_spectrogram(w, dcfg);
            auto rec = dsp::griffin_lim(m, dcfg, 7);
            auto m2 = dsp::mel_spectrogram(rec, dcfg);
            double mae = 0;
            const int frames = std::min(m.n_frames(), m2.n_frames());
            for (int b = 0; b < m.n_mels(); ++b)
                for (int f = 0; f < frames; ++f)
                    mae += std::abs(double(m.at(b, f)) - double(m2.at(b, f)));
            mae /= double(m.n_mels()) * frames;
            mae_worst = std::max(mae_worst, mae);
            if (mae >= 0.1) ok = false;
            ++checked;
        }
    }

    // silence maps to the floor and inverts to silence
    {
        Waveform w;
        w.sample_rate = dcfg.sample_rate;
        w.samples.assign(size_t(dcfg.sample_rate), 0.0f);
        auto m = dsp::mel_spectrogram(w, dcfg);
        for (float v : m.values.v)
            if (v != -1.0f) ok = false;
        auto rec = dsp::griffin_lim(m, dcfg, 3);
        double rms = 0;
        for (float s : rec.samples) rms += double(s) * double(s);
        rms = std::sqrt(rms / double(rec.samples.size()));
        if (rms >= 1e-3) ok = false;
    }
    report(10, ok, "DSP suite",
           "sine peak in-bin, worst round-trip MAE " + std::to_string(mae_worst) +
               ", silence at floor");
}

}  // namespace

int main(int argc, char** argv) {
    Ctx c;
    c.cache = "acceptance_cache";
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--cache") == 0 && i + 1 < argc)
            c.cache = argv[++i];
        else if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc)
            only = std::atoi(argv[++i]);
    }
    fs::create_directories(c.cache);
    c.cfg.normalize();
    c.cfg.validate();

    try {
        // fast, artifact-free criteria first
        if (!only || only == 1) criterion_1();
        if (!only || only == 2) criterion_2();
        if (!only || only == 3) criterion_3();
        if (!only || only == 4) criterion_4();
        if (!only || only == 10) {
            stage_corpus(c);
            criterion_10(c);
        }
        if (!only || (only >= 5 && only <= 9)) {
            stage_corpus(c);
            stage_pretrain(c);
            stage_inversions(c);
            if (!only || only == 5) criterion_5(c);
            if (!only || only == 6) criterion_6(c);
            if (!only || only == 7) criterion_7(c);
            if (!only || only == 8) criterion_8(c);
            if (!only || only == 9) criterion_9(c);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "acceptance suite aborted: %s\n", e.what());
        return 1;
    }

    std::printf("acceptance: %d passed, %d failed\n", g_pass, g_fail);
    return g_fail == 0 ? 0 : 1;
}
