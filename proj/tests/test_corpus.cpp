#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "melstyle/corpus.hpp"
#include "melstyle/rng.hpp"

using namespace melstyle;
using namespace melstyle::corpus;

namespace {

dsp::DspConfig cfg() { return dsp::DspConfig{}; }

std::vector<double> rms_envelope(const Waveform& w, int win) {
    std::vector<double> env;
    for (size_t i = 0; i + size_t(win) <= w.samples.size(); i += size_t(win)) {
        double acc = 0;
        for (int j = 0; j < win; ++j)
            acc += double(w.samples[i + size_t(j)]) * double(w.samples[i + size_t(j)]);
        env.push_back(std::sqrt(acc / win));
    }
    return env;
}

}  // namespace

TEST_CASE("synth_melody is deterministic in (seed, timbre)") {
    auto styles = standard_styles();
    for (const auto& st : styles) {
        auto a = synth_melody(123, st, cfg());
        auto b = synth_melody(123, st, cfg());
        CHECK(a.samples == b.samples);
    }
}

TEST_CASE("different seeds give different note sequences") {
    auto st = find_style(standard_styles(), "bell");
    auto a = synth_melody(0, st, cfg());
    auto b = synth_melody(1, st, cfg());
    auto ea = rms_envelope(a, 2048);
    auto eb = rms_envelope(b, 2048);
    double diff = 0;
    for (size_t i = 0; i < ea.size(); ++i) diff += std::abs(ea[i] - eb[i]);
    CHECK(diff > 0.1);  // onset envelopes differ
}

TEST_CASE("clips are five seconds with peak at most 0.99") {
    auto c = cfg();
    for (const auto& st : standard_styles()) {
        auto w = synth_melody(7, st, c);
        CHECK(int(w.samples.size()) == c.sample_rate * 5);
        float peak = 0;
        for (float s : w.samples) peak = std::max(peak, std::abs(s));
        CHECK(peak <= 0.99f);
        CHECK(peak > 0.0f);
    }
}

TEST_CASE("build_corpus writes records with disjoint roles") {
    const std::string dir = "test_corpus_min";
    auto m = build_corpus(dir, 5, 1, 1, standard_styles(), cfg());
    CHECK(m.records.size() == 2);
    CHECK(m.records[0].role == "content");
    CHECK(m.records[1].role == "style");
    CHECK(m.records[0].style_name == "none");
    CHECK(std::filesystem::exists(std::filesystem::path(dir) / m.records[0].wav_path));
    std::filesystem::remove_all(dir);
}

TEST_CASE("same seed rebuild produces identical manifests") {
    auto m1 = build_corpus("test_corpus_a", 9, 4, 7, standard_styles(), cfg());
    auto m2 = build_corpus("test_corpus_b", 9, 4, 7, standard_styles(), cfg());
    std::ifstream f1("test_corpus_a/manifest.jsonl"), f2("test_corpus_b/manifest.jsonl");
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    CHECK(m1.hash() == m2.hash());
    std::filesystem::remove_all("test_corpus_a");
    std::filesystem::remove_all("test_corpus_b");
}

TEST_CASE("held-out style tokens never appear in pretraining captions") {
    auto styles = standard_styles();
    auto m = build_corpus("test_corpus_h", 11, 6, 14, styles, cfg());
    std::set<std::string> held;
    for (const auto& s : styles)
        if (s.held_out) held.insert(s.name);
    CHECK(held.size() >= 2);

    for (const auto* r : m.pretraining_records()) {
        std::istringstream ss(r->caption);
        std::string word;
        while (ss >> word) CHECK(held.count(word) == 0);
    }
    // held-out clips exist but are flagged
    int flagged = 0;
    for (const auto& r : m.records)
        if (r.held_out) ++flagged;
    CHECK(flagged > 0);
    std::filesystem::remove_all("test_corpus_h");
}

TEST_CASE("manifest round trip preserves records") {
    auto m = build_corpus("test_corpus_rt", 3, 2, 3, standard_styles(), cfg());
    auto loaded = CorpusManifest::load("test_corpus_rt/manifest.jsonl");
    REQUIRE(loaded.records.size() == m.records.size());
    for (size_t i = 0; i < m.records.size(); ++i) {
        CHECK(loaded.records[i].id == m.records[i].id);
        CHECK(loaded.records[i].caption == m.records[i].caption);
        CHECK(loaded.records[i].seed == m.records[i].seed);
        CHECK(loaded.records[i].held_out == m.records[i].held_out);
    }
    CHECK(loaded.hash() == m.hash());
    CHECK(loaded.dsp_config == m.dsp_config);
    std::filesystem::remove_all("test_corpus_rt");
}

TEST_CASE("corpus precondition errors") {
    CHECK_THROWS_AS(build_corpus("x", 1, 0, 1, standard_styles(), cfg()),
                    ConfigError);
    auto no_held_out = standard_styles();
    for (auto& s : no_held_out) s.held_out = false;
    CHECK_THROWS_AS(build_corpus("x", 1, 1, 1, no_held_out, cfg()), ConfigError);
    CHECK_THROWS_AS(find_style(standard_styles(), "nope"), InputError);
}

TEST_CASE("timbres produce distinct spectra") {
    auto c = cfg();
    auto bell = dsp::mel_spectrogram(
        synth_melody(3, find_style(standard_styles(), "bell"), c), c);
    auto noise = dsp::mel_spectrogram(
        synth_melody(3, find_style(standard_styles(), "noiseburst"), c), c);
    double diff = 0;
    for (size_t i = 0; i < bell.values.v.size(); ++i)
        diff += std::abs(double(bell.values.v[i]) - double(noise.values.v[i]));
    diff /= double(bell.values.v.size());
    CHECK(diff > 0.05);
}
