// melstyle: example-based mel-spectrogram style transfer.
// Subcommands: corpus, pretrain, invert, stylize, eval, trace.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "melstyle/config.hpp"
#include "melstyle/corpus.hpp"
#include "melstyle/diffusion.hpp"
#include "melstyle/inversion.hpp"
#include "melstyle/metrics.hpp"
#include "melstyle/stylize.hpp"

namespace fs = std::filesystem;
using namespace melstyle;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
};

cli::RunConfig resolve_config(const CommonOpts& o) {
    cli::RunConfig cfg = o.config_path.empty()
                             ? cli::RunConfig::defaults()
                             : cli::RunConfig::from_file(o.config_path);
    for (const auto& kv : o.sets) cfg.apply_override(kv);
    cfg.normalize();
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "config file (dotted keys)");
    cmd->add_option("--set", o.sets, "override: key=value")->take_all();
}

void emit_resolved(const cli::RunConfig& cfg, const std::string& dir) {
    fs::create_directories(dir);
    cfg.write_resolved((fs::path(dir) / "resolved.cfg").string());
}

dsp::MelSpectrogram style_reference_mel(const corpus::CorpusManifest& manifest,
                                        const std::string& corpus_dir,
                                        const std::string& style, int frames) {
    for (const auto& r : manifest.records) {
        if (r.role == "style" && r.style_name == style) {
            auto w = read_wav((fs::path(corpus_dir) / r.wav_path).string());
            auto m = dsp::mel_spectrogram(w, manifest.dsp_config);
            const int start = std::max((m.n_frames() - frames) / 2, 0);
            dsp::MelSpectrogram out;
            out.config = m.config;
            out.values = TenF({m.n_mels(), frames});
            for (int b = 0; b < m.n_mels(); ++b)
                for (int f = 0; f < frames; ++f)
                    out.at(b, f) =
                        start + f < m.n_frames() ? m.at(b, start + f) : -1.0f;
            return out;
        }
    }
    throw InputError("no style clip for '" + style + "' in the corpus");
}

int cmd_corpus(const cli::RunConfig& cfg) {
    emit_resolved(cfg, cfg.corpus_dir);
    auto styles = corpus::standard_styles();
    auto manifest = corpus::build_corpus(
        cfg.corpus_dir, cfg.substream("corpus").next_u64(), cfg.n_content,
        cfg.n_style, styles, cfg.model.dsp);
    std::printf("corpus: %zu clips written to %s\n", manifest.records.size(),
                cfg.corpus_dir.c_str());
    return 0;
}

int cmd_pretrain(const cli::RunConfig& cfg, const std::string& out_path,
                 bool resume) {
    emit_resolved(cfg, fs::path(out_path).parent_path().string().empty()
                           ? "."
                           : fs::path(out_path).parent_path().string());
    auto manifest =
        corpus::CorpusManifest::load((fs::path(cfg.corpus_dir) / "manifest.jsonl").string());

    auto ckpt = diff::Checkpoint::create(cfg.model,
                                         cfg.substream("pretrain.init").next_u64());
    diff::PretrainConfig pc;
    pc.epochs = cfg.pretrain_epochs;
    pc.batch_size = cfg.pretrain_batch;
    pc.lr = cfg.pretrain_lr;
    pc.p_uncond = cfg.p_uncond;
    pc.seed = cfg.substream("pretrain").next_u64();
    pc.save_every = cfg.pretrain_save_every;
    pc.state_path = out_path + ".state";
    pc.resume = resume;
    pc.progress = [](int step, double loss) {
        std::printf("step %6d  loss %.4f\n", step, loss);
        std::fflush(stdout);
    };
    auto res = diff::pretrain(ckpt, manifest, cfg.corpus_dir, pc);
    ckpt.save(out_path);

    std::ofstream curve(out_path + ".loss.csv");
    curve << "step,loss\n";
    for (size_t i = 0; i < res.loss_curve.size(); ++i)
        curve << i << "," << res.loss_curve[i] << "\n";
    std::printf("pretrain: %d steps, final loss %.4f, checkpoint %s\n", res.steps,
                res.final_loss, out_path.c_str());
    return 0;
}

int cmd_invert(const cli::RunConfig& cfg, const std::string& ckpt_path,
               const std::string& style, const std::string& out_path,
               bool no_tve) {
    auto ckpt = diff::Checkpoint::load(ckpt_path);
    auto manifest =
        corpus::CorpusManifest::load((fs::path(cfg.corpus_dir) / "manifest.jsonl").string());

    std::vector<dsp::MelSpectrogram> clips;
    std::vector<std::string> ids;
    for (const auto& r : manifest.records) {
        if (r.role == "style" && r.style_name == style && clips.size() < 3) {
            auto w = read_wav((fs::path(cfg.corpus_dir) / r.wav_path).string());
            clips.push_back(dsp::mel_spectrogram(w, manifest.dsp_config));
            ids.push_back(r.id);
        }
    }
    if (clips.empty()) throw InputError("no clips for style '" + style + "'");

    inversion::InversionConfig ic;
    ic.lr = cfg.invert_lr;
    ic.max_steps = cfg.invert_steps;
    ic.batch_size = cfg.invert_batch;
    ic.seed = cfg.substream("invert." + style).next_u64();
    ic.train_tve = !no_tve;
    auto art = inversion::invert_style(clips, ckpt, ic, ids);
    art.save(out_path);
    emit_resolved(cfg, fs::path(out_path).parent_path().string().empty()
                           ? "."
                           : fs::path(out_path).parent_path().string());
    std::printf("invert: %s final loss %.4f -> %s\n", style.c_str(),
                art.final_loss, out_path.c_str());
    return 0;
}

int cmd_stylize(const cli::RunConfig& cfg, const std::string& ckpt_path,
                const std::string& artifact_path, const std::string& content_path,
                const std::string& out_dir, bool no_brs, bool dump_intermediates,
                uint64_t seed) {
    auto ckpt = diff::Checkpoint::load(ckpt_path);
    auto art = inversion::InversionArtifact::load(artifact_path);
    auto wav = read_wav(content_path);
    auto content = dsp::mel_spectrogram(wav, ckpt.cfg.dsp);

    stylize::StylizationRequest req;
    req.content = content;
    req.strength = cfg.strength;
    req.scale = cfg.scale;
    req.n_steps = cfg.steps;
    req.seed = seed;
    req.bias_reduced = !no_brs;
    req.keep_intermediates = dump_intermediates;
    auto res = stylize::run(req, art, ckpt);

    fs::create_directories(out_dir);
    emit_resolved(cfg, out_dir);
    write_wav((fs::path(out_dir) / "stylized.wav").string(), res.wav);
    dsp::write_mels((fs::path(out_dir) / "stylized.mels").string(), res.mel);
    dsp::render_mel_png((fs::path(out_dir) / "stylized.png").string(), res.mel);
    dsp::render_mel_png((fs::path(out_dir) / "content.png").string(), content);
    std::ofstream j((fs::path(out_dir) / "result.json").string());
    j << res.params_json() << "\n";

    if (dump_intermediates && res.m_cn) {
        auto save_latent = [&](const TenF& z, const std::string& name) {
            auto m = inversion::latent_to_mel(z, ckpt);
            dsp::write_mels((fs::path(out_dir) / (name + ".mels")).string(), m);
            dsp::render_mel_png((fs::path(out_dir) / (name + ".png")).string(), m);
        };
        save_latent(*res.m_cn, "m_cn");
        if (res.m_hat_cn) save_latent(*res.m_hat_cn, "m_hat_cn");
        if (res.eps_hat) save_latent(*res.eps_hat, "eps_hat");
    }
    std::printf("stylize: t_p=%d -> %s\n", res.t_p, out_dir.c_str());
    return 0;
}

int cmd_eval(const cli::RunConfig& cfg, const std::string& ckpt_path,
             const std::string& artifacts_dir, const std::string& out_dir,
             int n_content, int n_seeds) {
    auto ckpt = diff::Checkpoint::load(ckpt_path);
    auto manifest =
        corpus::CorpusManifest::load((fs::path(cfg.corpus_dir) / "manifest.jsonl").string());

    // held-out styles that have artifacts on disk
    std::vector<std::string> styles;
    for (const auto& s : corpus::standard_styles())
        if (s.held_out &&
            fs::exists(fs::path(artifacts_dir) / ("invert_" + s.name + "_tve.msck")))
            styles.push_back(s.name);
    if (styles.empty())
        throw InputError("no held-out style artifacts under " + artifacts_dir);

    std::vector<inversion::InversionArtifact> arts;
    arts.reserve(styles.size() * 2);
    std::vector<metrics::BenchmarkPair> pairs;
    std::vector<metrics::ArmSelector> selectors;

    const int frames = ckpt.cfg.frames;
    auto contents = manifest.by_role("content");
    n_content = std::min<int>(n_content, int(contents.size()));

    for (const auto& style : styles) {
        arts.push_back(inversion::InversionArtifact::load(
            (fs::path(artifacts_dir) / ("invert_" + style + "_tve.msck")).string()));
        arts.push_back(inversion::InversionArtifact::load(
            (fs::path(artifacts_dir) / ("invert_" + style + "_ti.msck")).string()));
    }
    for (size_t si = 0; si < styles.size(); ++si) {
        auto style_ref =
            style_reference_mel(manifest, cfg.corpus_dir, styles[si], frames);
        for (int ci = 0; ci < n_content; ++ci) {
            const auto* rec = contents[size_t(ci)];
            auto w = read_wav((fs::path(cfg.corpus_dir) / rec->wav_path).string());
            auto m = dsp::mel_spectrogram(w, manifest.dsp_config);
            const int start = std::max((m.n_frames() - frames) / 2, 0);
            metrics::BenchmarkPair p;
            p.id = rec->id + ":" + styles[si];
            p.content.config = m.config;
            p.content.values = TenF({m.n_mels(), frames});
            for (int b = 0; b < m.n_mels(); ++b)
                for (int f = 0; f < frames; ++f)
                    p.content.at(b, f) =
                        start + f < m.n_frames() ? m.at(b, start + f) : -1.0f;
            p.style_ref = style_ref;
            pairs.push_back(std::move(p));
            metrics::ArmSelector sel;
            sel.tve_artifact = &arts[si * 2];
            sel.ti_artifact = &arts[si * 2 + 1];
            selectors.push_back(sel);
        }
    }

    std::vector<uint64_t> seeds;
    Rng sr = cfg.substream("eval.seeds");
    for (int i = 0; i < n_seeds; ++i) seeds.push_back(sr.next_u64());

    metrics::BenchmarkConfig bc;
    bc.strength = cfg.strength;
    bc.scale = cfg.scale;
    bc.n_steps = cfg.steps;
    auto report = metrics::run_benchmark(pairs, selectors, metrics::standard_arms(),
                                         seeds, ckpt, bc);

    fs::create_directories(out_dir);
    emit_resolved(cfg, out_dir);
    report.save_csv((fs::path(out_dir) / "report.csv").string());
    std::ofstream tj((fs::path(out_dir) / "report.json").string());
    tj << report.to_json() << "\n";
    std::ofstream tt((fs::path(out_dir) / "report.txt").string());
    tt << report.format_table();
    std::printf("%s", report.format_table().c_str());
    return 0;
}

int cmd_trace(const std::string& artifact_path, const std::string& out_dir,
              int points, int T) {
    auto art = inversion::InversionArtifact::load(artifact_path);
    auto traj = inversion::embedding_trajectory(art, points, T);
    fs::create_directories(out_dir);
    inversion::save_trajectory_csv((fs::path(out_dir) / "trajectory.csv").string(),
                                   traj);
    inversion::save_trajectory_png((fs::path(out_dir) / "similarity.png").string(),
                                   traj);
    std::printf("trace: %d points -> %s\n", points, out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"example-based mel-spectrogram style transfer"};
    app.require_subcommand(1);

    CommonOpts corpus_o, pretrain_o, invert_o, stylize_o, eval_o;
    std::string ckpt_path, artifact_path, content_path, style, out_path;
    std::string artifacts_dir, out_dir = "out";
    bool resume = false, no_tve = false, no_brs = false, dump_inter = false;
    uint64_t stylize_seed = 0;
    int eval_contents = 20, eval_seeds = 4, trace_points = 32, trace_T = 256;

    auto* c_corpus = app.add_subcommand("corpus", "generate the synthetic corpus");
    add_common(c_corpus, corpus_o);

    auto* c_pre = app.add_subcommand("pretrain", "train the diffusion backbone");
    add_common(c_pre, pretrain_o);
    c_pre->add_option("--out", out_path, "checkpoint output path")
        ->default_val("checkpoint.msck");
    c_pre->add_flag("--resume", resume, "resume from <out>.state");

    auto* c_inv = app.add_subcommand("invert", "learn a pseudo-word for a style");
    add_common(c_inv, invert_o);
    c_inv->add_option("--checkpoint", ckpt_path)->required();
    c_inv->add_option("--style", style, "style name from the corpus")->required();
    c_inv->add_option("--out", out_path)->default_val("artifact.msck");
    c_inv->add_flag("--no-tve", no_tve, "fixed-embedding inversion arm");

    auto* c_sty = app.add_subcommand("stylize", "stylize a content wav");
    add_common(c_sty, stylize_o);
    c_sty->add_option("--checkpoint", ckpt_path)->required();
    c_sty->add_option("--artifact", artifact_path)->required();
    c_sty->add_option("--content", content_path, "content wav")->required();
    c_sty->add_option("--out", out_dir)->default_val("out");
    c_sty->add_option("--seed", stylize_seed);
    c_sty->add_flag("--no-brs", no_brs, "disable bias-reduced stylization");
    c_sty->add_flag("--dump-intermediates", dump_inter);

    auto* c_eval = app.add_subcommand("eval", "run the ablation benchmark");
    add_common(c_eval, eval_o);
    c_eval->add_option("--checkpoint", ckpt_path)->required();
    c_eval->add_option("--artifacts", artifacts_dir, "dir with invert_<style>_{tve,ti}.msck")
        ->required();
    c_eval->add_option("--out", out_dir)->default_val("eval");
    c_eval->add_option("--contents", eval_contents, "content clips per style");
    c_eval->add_option("--seeds", eval_seeds, "stylization seeds per pair");

    auto* c_trace = app.add_subcommand("trace", "embedding trajectory analysis");
    c_trace->add_option("--artifact", artifact_path)->required();
    c_trace->add_option("--out", out_dir)->default_val("trace");
    c_trace->add_option("--points", trace_points);
    c_trace->add_option("--T", trace_T);

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_corpus->parsed()) return cmd_corpus(resolve_config(corpus_o));
        if (c_pre->parsed())
            return cmd_pretrain(resolve_config(pretrain_o), out_path, resume);
        if (c_inv->parsed())
            return cmd_invert(resolve_config(invert_o), ckpt_path, style, out_path,
                              no_tve);
        if (c_sty->parsed()) {
            auto cfg = resolve_config(stylize_o);
            if (!c_sty->count("--seed"))
                stylize_seed = cfg.substream("stylize").next_u64();
            return cmd_stylize(cfg, ckpt_path, artifact_path, content_path, out_dir,
                               no_brs, dump_inter, stylize_seed);
        }
        if (c_eval->parsed())
            return cmd_eval(resolve_config(eval_o), ckpt_path, artifacts_dir,
                            out_dir, eval_contents, eval_seeds);
        if (c_trace->parsed())
            return cmd_trace(artifact_path, out_dir, trace_points, trace_T);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
