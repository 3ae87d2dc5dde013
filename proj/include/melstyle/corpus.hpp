#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "melstyle/dsp.hpp"
#include "melstyle/wav.hpp"

namespace melstyle::corpus {

enum class SynthKind { harmonic_stack, filtered_noise, fm_chirp };

struct StyleSpec {
    std::string name;  // single vocabulary token
    SynthKind synth_kind = SynthKind::harmonic_stack;
    // harmonic_stack: triplets (partial ratio, amplitude, decay 1/s)
    // filtered_noise: (bandwidth ratio, decay 1/s, note length in slots)
    // fm_chirp: (start ratio, decay 1/s, mod depth)
    std::vector<double> params;
    bool held_out = false;
};

struct ClipRecord {
    std::string id;
    std::string role;        // "content" | "style"
    std::string style_name;  // "none" for content clips
    std::string caption;
    bool held_out = false;
    uint64_t seed = 0;
    std::string wav_path;  // relative to the corpus directory
};

struct CorpusManifest {
    std::vector<ClipRecord> records;
    dsp::DspConfig dsp_config;
    uint64_t corpus_seed = 0;
    int n_content = 0;
    int n_style = 0;

    void save(const std::string& path) const;
    static CorpusManifest load(const std::string& path);
    uint64_t hash() const;

    std::vector<const ClipRecord*> by_role(const std::string& role) const;
    // records usable for pretraining (held-out styles excluded)
    std::vector<const ClipRecord*> pretraining_records() const;
};

// five pretraining styles plus two held-out ones (one instrument-like
// harmonic stack, one nature-like noise texture)
std::vector<StyleSpec> standard_styles();

const StyleSpec& find_style(const std::vector<StyleSpec>& styles,
                            const std::string& name);

// 5 s pentatonic melody, onsets on an 8th-note grid at 120 BPM, rendered by
// the timbre's synthesizer; deterministic in (seed, timbre)
Waveform synth_melody(uint64_t seed, const StyleSpec& timbre,
                      const dsp::DspConfig& cfg);

// writes WAVs + manifest.jsonl under out_dir; deterministic in seed
CorpusManifest build_corpus(const std::string& out_dir, uint64_t seed,
                            int n_content, int n_style,
                            const std::vector<StyleSpec>& styles,
                            const dsp::DspConfig& cfg);

}  // namespace melstyle::corpus
