#include "melstyle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "melstyle/parallel.hpp"
#include "melstyle/rng.hpp"

namespace melstyle::metrics {

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double num = 0, va = 0, vb = 0;
    for (size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va <= 1e-18 || vb <= 1e-18)
        throw DegenerateInputError("constant feature sequence, correlation undefined");
    return num / std::sqrt(va * vb);
}

// per-frame RMS energy and energy-weighted mean band index of the
// de-normalized (power-domain) mel
void structure_tracks(const dsp::MelSpectrogram& m, int frames,
                      std::vector<double>& energy, std::vector<double>& centroid) {
    const double lo = std::log(m.config.log_floor);
    const double hi = std::log(m.config.p_ref);
    energy.assign(size_t(frames), 0.0);
    centroid.assign(size_t(frames), 0.0);
    for (int f = 0; f < frames; ++f) {
        double sum = 0.0, wsum = 0.0;
        for (int b = 0; b < m.n_mels(); ++b) {
            const double lp = (double(m.at(b, f)) + 1.0) * 0.5 * (hi - lo) + lo;
            const double p = std::exp(lp);
            sum += p;
            wsum += p * double(b);
        }
        energy[size_t(f)] = std::sqrt(sum / double(m.n_mels()));
        centroid[size_t(f)] = wsum / std::max(sum, 1e-30);
    }
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 1e-18 || nb <= 1e-18)
        throw DegenerateInputError("zero-norm feature vector");
    return dot / std::sqrt(na * nb);
}

}  // namespace

double content_preservation(const dsp::MelSpectrogram& out,
                            const dsp::MelSpectrogram& content) {
    if (out.n_mels() != content.n_mels())
        throw ShapeError("mel band count mismatch");
    const int frames = std::min(out.n_frames(), content.n_frames());
    if (frames < 2) throw InputError("need at least 2 frames");

    std::vector<double> e1, c1, e2, c2;
    structure_tracks(out, frames, e1, c1);
    structure_tracks(content, frames, e2, c2);
    const double r = 0.5 * pearson(e1, e2) + 0.5 * pearson(c1, c2);
    return std::clamp(r, -1.0, 1.0);
}

double style_fit(const dsp::MelSpectrogram& out, const dsp::MelSpectrogram& style) {
    if (out.n_mels() != style.n_mels()) throw ShapeError("mel band count mismatch");
    const int nb = out.n_mels();

    auto texture = [nb](const dsp::MelSpectrogram& m, std::vector<double>& lts,
                        std::vector<double>& cov) {
        const int nf = m.n_frames();
        if (nf < 2) throw InputError("need at least 2 frames");
        lts.assign(size_t(nb), 0.0);
        for (int b = 0; b < nb; ++b) {
            for (int f = 0; f < nf; ++f) lts[size_t(b)] += double(m.at(b, f));
            lts[size_t(b)] /= double(nf);
        }
        cov.assign(size_t(nb) * size_t(nb), 0.0);
        double trace = 0.0;
        for (int i = 0; i < nb; ++i) {
            for (int j = i; j < nb; ++j) {
                double acc = 0.0;
                for (int f = 0; f < nf; ++f)
                    acc += (double(m.at(i, f)) - lts[size_t(i)]) *
                           (double(m.at(j, f)) - lts[size_t(j)]);
                acc /= double(nf);
                cov[size_t(i) * size_t(nb) + size_t(j)] = acc;
                cov[size_t(j) * size_t(nb) + size_t(i)] = acc;
                if (i == j) trace += acc;
            }
        }
        if (trace <= 1e-15)
            throw DegenerateInputError("zero-variance spectrogram");
        for (auto& x : cov) x /= trace;
    };

    std::vector<double> l1, g1, l2, g2;
    texture(out, l1, g1);
    texture(style, l2, g2);
    const double s = 0.5 * cosine(l1, l2) + 0.5 * cosine(g1, g2);
    return std::clamp(s, -1.0, 1.0);
}

std::vector<BenchmarkArm> standard_arms() {
    return {{"full", true, true},
            {"no_tve", true, false},
            {"no_brs", false, true},
            {"baseline_ti", false, false}};
}

void MetricReport::save_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write report csv: " + path);
    f << "arm,pair_id,seed,cp,sf\n";
    for (const auto& r : rows)
        f << r.arm << "," << r.pair_id << "," << r.seed << "," << r.cp << ","
          << r.sf << "\n";
}

std::string MetricReport::format_table() const {
    char buf[160];
    std::string out;
    out += "arm            n     CP mean [95% CI]          SF mean [95% CI]\n";
    for (const auto& a : arms) {
        std::snprintf(buf, sizeof buf,
                      "%-12s %4d   %+.4f [%+.4f,%+.4f]   %+.4f [%+.4f,%+.4f]\n",
                      a.arm.c_str(), a.n, a.cp_mean, a.cp_lo, a.cp_hi, a.sf_mean,
                      a.sf_lo, a.sf_hi);
        out += buf;
    }
    return out;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["bootstrap_seed"] = bootstrap_seed;
    j["config_hash"] = config_hash;
    j["seeds"] = seeds;
    for (const auto& a : arms) {
        j["arms"][a.arm] = {{"cp_mean", a.cp_mean}, {"cp_lo", a.cp_lo},
                            {"cp_hi", a.cp_hi},     {"sf_mean", a.sf_mean},
                            {"sf_lo", a.sf_lo},     {"sf_hi", a.sf_hi},
                            {"n", a.n}};
    }
    return j.dump(2);
}

MetricReport run_benchmark(const std::vector<BenchmarkPair>& pairs,
                           const std::vector<ArmSelector>& selectors,
                           const std::vector<BenchmarkArm>& arms,
                           const std::vector<uint64_t>& seeds,
                           const diff::Checkpoint& ckpt,
                           const BenchmarkConfig& cfg) {
    if (pairs.size() != selectors.size())
        throw ConfigError("benchmark pair/selector count mismatch");
    for (const auto& sel : selectors)
        if (!sel.tve_artifact || !sel.ti_artifact)
            throw ConfigError("benchmark requires both artifact flavors per pair");

    MetricReport rep;
    rep.bootstrap_seed = cfg.bootstrap_seed;
    rep.seeds = seeds;
    rep.config_hash = Rng::mix(ckpt.model_hash(),
                               Rng::hash_name(std::to_string(cfg.strength) + "/" +
                                              std::to_string(cfg.scale)));

    struct Job {
        const BenchmarkArm* arm;
        const BenchmarkPair* pair;
        const inversion::InversionArtifact* artifact;
        uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& arm : arms)
        for (size_t p = 0; p < pairs.size(); ++p)
            for (uint64_t s : seeds) {
                const auto& sel = selectors[p];
                jobs.push_back({&arm, &pairs[p],
                                arm.use_tve_artifact ? sel.tve_artifact
                                                     : sel.ti_artifact,
                                s});
            }

    std::vector<ReportRow> rows(jobs.size());
    // stylizations are independent; parallel over jobs, disjoint outputs
    parallel_for(int(jobs.size()), [&](int i) {
        const Job& jb = jobs[size_t(i)];
        stylize::StylizationRequest req;
        req.content = jb.pair->content;
        req.strength = cfg.strength;
        req.scale = cfg.scale;
        req.n_steps = cfg.n_steps;
        req.seed = jb.seed;
        req.bias_reduced = jb.arm->bias_reduced;
        req.render_audio = false;
        auto res = stylize::run(req, *jb.artifact, ckpt);
        ReportRow row;
        row.arm = jb.arm->name;
        row.pair_id = jb.pair->id;
        row.seed = jb.seed;
        row.cp = content_preservation(res.mel, jb.pair->content);
        row.sf = style_fit(res.mel, jb.pair->style_ref);
        rows[size_t(i)] = std::move(row);
    });
    rep.rows = std::move(rows);

    // per-arm means with bootstrap intervals
    for (const auto& arm : arms) {
        std::vector<double> cps, sfs;
        for (const auto& r : rep.rows)
            if (r.arm == arm.name) {
                cps.push_back(r.cp);
                sfs.push_back(r.sf);
            }
        ArmSummary s;
        s.arm = arm.name;
        s.n = int(cps.size());
        if (cps.empty()) {
            rep.arms.push_back(s);
            continue;
        }
        auto mean = [](const std::vector<double>& v) {
            double m = 0;
            for (double x : v) m += x;
            return m / double(v.size());
        };
        s.cp_mean = mean(cps);
        s.sf_mean = mean(sfs);

        Rng rng(Rng::mix(cfg.bootstrap_seed, Rng::hash_name(arm.name)));
        std::vector<double> bcp(size_t(cfg.bootstrap_reps)),
            bsf(size_t(cfg.bootstrap_reps));
        for (int rep_i = 0; rep_i < cfg.bootstrap_reps; ++rep_i) {
            double mc = 0, ms = 0;
            for (size_t k = 0; k < cps.size(); ++k) {
                size_t idx = size_t(rng.uniform_int(cps.size()));
                mc += cps[idx];
                ms += sfs[idx];
            }
            bcp[size_t(rep_i)] = mc / double(cps.size());
            bsf[size_t(rep_i)] = ms / double(cps.size());
        }
        std::sort(bcp.begin(), bcp.end());
        std::sort(bsf.begin(), bsf.end());
        const size_t lo = size_t(0.025 * cfg.bootstrap_reps);
        const size_t hi = size_t(0.975 * cfg.bootstrap_reps);
        s.cp_lo = bcp[lo];
        s.cp_hi = bcp[hi];
        s.sf_lo = bsf[lo];
        s.sf_hi = bsf[hi];
        rep.arms.push_back(s);
    }
    return rep;
}

}  // namespace melstyle::metrics
