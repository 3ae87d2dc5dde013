#include "melstyle/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "melstyle/common.hpp"
#include "melstyle/rng.hpp"

namespace melstyle::corpus {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// A minor pentatonic over two octaves, base A3
const double kPentatonicSemitones[] = {0, 3, 5, 7, 10, 12, 15, 17, 19, 22};
constexpr double kBaseHz = 220.0;
constexpr double kSlotSeconds = 0.25;  // 8th notes at 120 BPM
constexpr int kGridSlots = 20;         // 5 s clip

struct Note {
    int slot;
    double freq;
    double dur_s;
    double vel;
};

void render_harmonic(std::vector<double>& mix, const Note& n, int sr,
                     const std::vector<double>& params) {
    const int start = int(n.slot * kSlotSeconds * sr);
    const int len = std::min(int(n.dur_s * sr), int(mix.size()) - start);
    for (size_t p = 0; p + 2 < params.size() + 1 && p + 2 < params.size() + 1; p += 3) {
        if (p + 2 >= params.size()) break;
        const double ratio = params[p], amp = params[p + 1], decay = params[p + 2];
        const double f = n.freq * ratio;
        if (f >= sr / 2.0) continue;
        const double w = kTwoPi * f / sr;
        for (int i = 0; i < len; ++i) {
            double t = double(i) / sr;
            double env = std::min(t / 0.01, 1.0) * std::exp(-decay * t);
            if (i > len - 220) env *= double(len - i) / 220.0;  // de-click
            mix[size_t(start + i)] += n.vel * amp * env * std::sin(w * i);
        }
    }
}

void render_noise(std::vector<double>& mix, const Note& n, int sr,
                  const std::vector<double>& params, Rng& rng) {
    const double bw_ratio = params.size() > 0 ? params[0] : 0.3;
    const double decay = params.size() > 1 ? params[1] : 6.0;
    const int start = int(n.slot * kSlotSeconds * sr);
    const int len = std::min(int(n.dur_s * sr), int(mix.size()) - start);
    // two-pole resonator centered at the note pitch
    const double w = kTwoPi * std::min(n.freq, sr / 2.0 * 0.9) / sr;
    const double r = std::clamp(1.0 - bw_ratio * w / 2.0, 0.5, 0.9995);
    const double a1 = 2.0 * r * std::cos(w), a2 = -r * r;
    const double gain = (1.0 - r) * std::sqrt(1.0 - r);  // rough level balance
    double y1 = 0.0, y2 = 0.0;
    for (int i = 0; i < len; ++i) {
        double x = (2.0 * rng.uniform() - 1.0);
        double y = a1 * y1 + a2 * y2 + x * gain;
        y2 = y1;
        y1 = y;
        double t = double(i) / sr;
        double env = std::min(t / 0.01, 1.0) * std::exp(-decay * t);
        if (i > len - 220) env *= double(len - i) / 220.0;
        mix[size_t(start + i)] += n.vel * env * y;
    }
}

void render_chirp(std::vector<double>& mix, const Note& n, int sr,
                  const std::vector<double>& params) {
    const double start_ratio = params.size() > 0 ? params[0] : 2.0;
    const double decay = params.size() > 1 ? params[1] : 5.0;
    const double depth = params.size() > 2 ? params[2] : 0.6;
    const int start = int(n.slot * kSlotSeconds * sr);
    const int len = std::min(int(n.dur_s * sr), int(mix.size()) - start);
    double phase = 0.0;
    for (int i = 0; i < len; ++i) {
        double t = double(i) / sr;
        double u = len > 1 ? double(i) / double(len - 1) : 0.0;
        // exponential glide from start_ratio*f down to f, plus a light FM shimmer
        double f = n.freq * std::pow(start_ratio, 1.0 - u);
        phase += kTwoPi * f / sr;
        double env = std::min(t / 0.005, 1.0) * std::exp(-decay * t);
        if (i > len - 220) env *= double(len - i) / 220.0;
        double fm = depth * std::sin(kTwoPi * 6.0 * t);
        mix[size_t(start + i)] += n.vel * env * std::sin(phase + fm);
    }
}

}  // namespace

std::vector<StyleSpec> standard_styles() {
    std::vector<StyleSpec> s;
    s.push_back({"bell",
                 SynthKind::harmonic_stack,
                 {1.0, 1.0, 3.0, 2.76, 0.6, 4.5, 5.40, 0.4, 6.0, 8.93, 0.25, 9.0},
                 false});
    s.push_back({"pluck",
                 SynthKind::harmonic_stack,
                 {1.0, 1.0, 6.0, 2.0, 0.5, 8.0, 3.0, 0.33, 10.0, 4.0, 0.25, 12.0, 5.0,
                  0.2, 14.0},
                 false});
    s.push_back({"organ",
                 SynthKind::harmonic_stack,
                 {1.0, 1.0, 0.4, 2.0, 0.7, 0.4, 4.0, 0.4, 0.4, 6.0, 0.2, 0.4},
                 false});
    s.push_back({"chirp", SynthKind::fm_chirp, {2.2, 5.0, 0.6}, false});
    s.push_back({"noiseburst", SynthKind::filtered_noise, {0.6, 8.0, 2.0}, false});
    // held-out: instrument-like stack and nature-like noise texture; both
    // contradict the pretraining timbres (every trained stack has falling
    // spectral brightness, chime's rises; rain is a continuous mid-band wash
    // where the trained noise style is short broadband bursts)
    s.push_back({"chime",
                 SynthKind::harmonic_stack,
                 {1.0, 0.4, 6.0, 2.32, 0.6, 3.0, 3.86, 0.8, 1.2, 6.79, 1.0, 0.5,
                  9.10, 0.9, 0.35},
                 true});
    s.push_back({"rain", SynthKind::filtered_noise, {0.30, 0.6, 8.0}, true});
    return s;
}

const StyleSpec& find_style(const std::vector<StyleSpec>& styles,
                            const std::string& name) {
    for (const auto& s : styles)
        if (s.name == name) return s;
    throw InputError("unknown style: " + name);
}

Waveform synth_melody(uint64_t seed, const StyleSpec& timbre,
                      const dsp::DspConfig& cfg) {
    cfg.validate();
    const int sr = cfg.sample_rate;
    const int n = sr * 5;
    Rng rng(Rng::mix(seed, Rng::hash_name("melody." + timbre.name)));

    const int n_notes = 8 + int(rng.uniform_int(9));  // 8..16
    std::vector<int> slots(kGridSlots);
    for (int i = 0; i < kGridSlots; ++i) slots[size_t(i)] = i;
    // deterministic partial shuffle to pick onset slots
    for (int i = kGridSlots - 1; i > 0; --i)
        std::swap(slots[size_t(i)], slots[size_t(rng.uniform_int(uint64_t(i) + 1))]);
    slots.resize(size_t(n_notes));
    std::sort(slots.begin(), slots.end());

    double note_len_slots = 2.0;
    if (timbre.synth_kind == SynthKind::filtered_noise && timbre.params.size() > 2)
        note_len_slots = timbre.params[2];
    if (timbre.synth_kind == SynthKind::fm_chirp) note_len_slots = 1.5;

    std::vector<Note> notes;
    for (int s : slots) {
        Note nt;
        nt.slot = s;
        nt.freq = kBaseHz *
                  std::pow(2.0, kPentatonicSemitones[rng.uniform_int(10)] / 12.0);
        nt.dur_s = note_len_slots * kSlotSeconds * (0.8 + 0.4 * rng.uniform());
        nt.vel = 0.5 + 0.5 * rng.uniform();
        notes.push_back(nt);
    }

    std::vector<double> mix(static_cast<size_t>(n), 0.0);
    for (const auto& nt : notes) {
        switch (timbre.synth_kind) {
            case SynthKind::harmonic_stack:
                render_harmonic(mix, nt, sr, timbre.params);
                break;
            case SynthKind::filtered_noise:
                render_noise(mix, nt, sr, timbre.params, rng);
                break;
            case SynthKind::fm_chirp:
                render_chirp(mix, nt, sr, timbre.params);
                break;
        }
    }

    double peak = 0.0;
    for (double x : mix) peak = std::max(peak, std::abs(x));
    const double gain = peak > 1e-9 ? 0.9 / peak : 0.0;

    Waveform w;
    w.sample_rate = sr;
    w.samples.resize(mix.size());
    for (size_t i = 0; i < mix.size(); ++i) w.samples[i] = float(mix[i] * gain);
    return w;
}

void CorpusManifest::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest: " + path);
    nlohmann::json meta;
    meta["type"] = "meta";
    meta["corpus_seed"] = corpus_seed;
    meta["n_content"] = n_content;
    meta["n_style"] = n_style;
    meta["dsp"] = {{"sample_rate", dsp_config.sample_rate},
                   {"n_fft", dsp_config.n_fft},
                   {"hop", dsp_config.hop},
                   {"n_mels", dsp_config.n_mels},
                   {"fmin", dsp_config.fmin},
                   {"fmax", dsp_config.fmax},
                   {"log_floor", dsp_config.log_floor},
                   {"p_ref", dsp_config.p_ref},
                   {"gl_iters", dsp_config.gl_iters}};
    f << meta.dump() << "\n";
    for (const auto& r : records) {
        nlohmann::json j;
        j["type"] = "clip";
        j["id"] = r.id;
        j["role"] = r.role;
        j["style"] = r.style_name;
        j["caption"] = r.caption;
        j["held_out"] = r.held_out;
        j["seed"] = r.seed;
        j["wav"] = r.wav_path;
        f << j.dump() << "\n";
    }
    if (!f) throw IoError("short write: " + path);
}

CorpusManifest CorpusManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path);
    CorpusManifest m;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        if (j.at("type") == "meta") {
            m.corpus_seed = j.at("corpus_seed").get<uint64_t>();
            m.n_content = j.at("n_content").get<int>();
            m.n_style = j.at("n_style").get<int>();
            const auto& d = j.at("dsp");
            m.dsp_config.sample_rate = d.at("sample_rate").get<int>();
            m.dsp_config.n_fft = d.at("n_fft").get<int>();
            m.dsp_config.hop = d.at("hop").get<int>();
            m.dsp_config.n_mels = d.at("n_mels").get<int>();
            m.dsp_config.fmin = d.at("fmin").get<double>();
            m.dsp_config.fmax = d.at("fmax").get<double>();
            m.dsp_config.log_floor = d.at("log_floor").get<double>();
            m.dsp_config.p_ref = d.at("p_ref").get<double>();
            m.dsp_config.gl_iters = d.at("gl_iters").get<int>();
        } else {
            ClipRecord r;
            r.id = j.at("id").get<std::string>();
            r.role = j.at("role").get<std::string>();
            r.style_name = j.at("style").get<std::string>();
            r.caption = j.at("caption").get<std::string>();
            r.held_out = j.at("held_out").get<bool>();
            r.seed = j.at("seed").get<uint64_t>();
            r.wav_path = j.at("wav").get<std::string>();
            m.records.push_back(std::move(r));
        }
    }
    return m;
}

uint64_t CorpusManifest::hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_str = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= 0xff;
        h *= 0x100000001b3ULL;
    };
    mix_str(std::to_string(corpus_seed));
    for (const auto& r : records) {
        mix_str(r.id);
        mix_str(r.caption);
        mix_str(std::to_string(r.seed));
        mix_str(r.held_out ? "h" : "-");
    }
    return h;
}

std::vector<const ClipRecord*> CorpusManifest::by_role(const std::string& role) const {
    std::vector<const ClipRecord*> out;
    for (const auto& r : records)
        if (r.role == role) out.push_back(&r);
    return out;
}

std::vector<const ClipRecord*> CorpusManifest::pretraining_records() const {
    std::vector<const ClipRecord*> out;
    for (const auto& r : records)
        if (!r.held_out) out.push_back(&r);
    return out;
}

CorpusManifest build_corpus(const std::string& out_dir, uint64_t seed,
                            int n_content, int n_style,
                            const std::vector<StyleSpec>& styles,
                            const dsp::DspConfig& cfg) {
    if (n_content < 1 || n_style < 1)
        throw ConfigError("corpus needs at least one content and one style clip");
    bool any_held_out = false;
    for (const auto& s : styles) any_held_out = any_held_out || s.held_out;
    if (!any_held_out) throw ConfigError("corpus needs at least one held-out style");

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "wav", ec);
    if (ec) throw IoError("cannot create corpus directory: " + out_dir);

    const StyleSpec content_timbre{
        "plain", SynthKind::harmonic_stack,
        {1.0, 1.0, 1.5, 2.0, 0.4, 2.5, 3.0, 0.2, 3.5}, false};

    CorpusManifest m;
    m.dsp_config = cfg;
    m.corpus_seed = seed;
    m.n_content = n_content;
    m.n_style = n_style;

    char buf[64];
    for (int i = 0; i < n_content; ++i) {
        std::snprintf(buf, sizeof buf, "content_%03d", i);
        ClipRecord r;
        r.id = buf;
        r.role = "content";
        r.style_name = "none";
        r.caption = "a melody";
        r.held_out = false;
        r.seed = Rng::mix(seed, Rng::hash_name(r.id));
        r.wav_path = std::string("wav/") + buf + ".wav";
        write_wav((fs::path(out_dir) / r.wav_path).string(),
                  synth_melody(r.seed, content_timbre, cfg));
        m.records.push_back(std::move(r));
    }
    for (int i = 0; i < n_style; ++i) {
        const StyleSpec& st = styles[size_t(i) % styles.size()];
        std::snprintf(buf, sizeof buf, "style_%s_%03d", st.name.c_str(), i);
        ClipRecord r;
        r.id = buf;
        r.role = "style";
        r.style_name = st.name;
        r.caption = "a " + st.name + " melody";
        r.held_out = st.held_out;
        r.seed = Rng::mix(seed, Rng::hash_name(r.id));
        r.wav_path = std::string("wav/") + buf + ".wav";
        write_wav((fs::path(out_dir) / r.wav_path).string(),
                  synth_melody(r.seed, st, cfg));
        m.records.push_back(std::move(r));
    }
    m.save((fs::path(out_dir) / "manifest.jsonl").string());
    return m;
}

}  // namespace melstyle::corpus
