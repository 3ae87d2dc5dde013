#pragma once

#include <string>
#include <vector>

#include "melstyle/stylize.hpp"

namespace melstyle::metrics {

// structure correlation: Pearson over per-frame energy and centroid tracks
double content_preservation(const dsp::MelSpectrogram& out,
                            const dsp::MelSpectrogram& content);

// texture similarity: cosine over the long-term average spectrum and the
// unit-trace band covariance (both frame-order free)
double style_fit(const dsp::MelSpectrogram& out, const dsp::MelSpectrogram& style);

struct BenchmarkPair {
    std::string id;
    dsp::MelSpectrogram content;
    dsp::MelSpectrogram style_ref;
    const inversion::InversionArtifact* artifact = nullptr;  // style's artifact
};

struct BenchmarkArm {
    std::string name;  // full | no_tve | no_brs | baseline_ti
    bool bias_reduced = true;
    bool use_tve_artifact = true;  // picks artifact flavor per pair
};

struct ArmSelector {
    // per style: the TVE artifact and the fixed-embedding artifact
    const inversion::InversionArtifact* tve_artifact = nullptr;
    const inversion::InversionArtifact* ti_artifact = nullptr;
};

struct ReportRow {
    std::string arm;
    std::string pair_id;
    uint64_t seed = 0;
    double cp = 0.0, sf = 0.0;
};

struct ArmSummary {
    std::string arm;
    double cp_mean = 0.0, sf_mean = 0.0;
    double cp_lo = 0.0, cp_hi = 0.0;  // 95% bootstrap interval
    double sf_lo = 0.0, sf_hi = 0.0;
    int n = 0;
};

struct MetricReport {
    std::vector<ReportRow> rows;
    std::vector<ArmSummary> arms;
    uint64_t config_hash = 0;
    uint64_t bootstrap_seed = 0;
    std::vector<uint64_t> seeds;

    void save_csv(const std::string& path) const;
    std::string format_table() const;
    std::string to_json() const;
};

struct BenchmarkConfig {
    double strength = 0.65;
    double scale = 4.0;
    int n_steps = 50;
    uint64_t bootstrap_seed = 12345;
    int bootstrap_reps = 1000;
};

// stylize every pair with every seed under every arm and score both axes;
// pairs carry per-style artifact selectors keyed by pair order
MetricReport run_benchmark(
    const std::vector<BenchmarkPair>& pairs,
    const std::vector<ArmSelector>& selectors,  // parallel to pairs
    const std::vector<BenchmarkArm>& arms, const std::vector<uint64_t>& seeds,
    const diff::Checkpoint& ckpt, const BenchmarkConfig& cfg);

std::vector<BenchmarkArm> standard_arms();

}  // namespace melstyle::metrics
