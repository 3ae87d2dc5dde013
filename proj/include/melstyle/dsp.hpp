#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "melstyle/tensor.hpp"
#include "melstyle/wav.hpp"

namespace melstyle::dsp {

struct DspConfig {
    int sample_rate = 22050;
    int n_fft = 1024;
    int hop = 256;
    int n_mels = 64;
    double fmin = 0.0;
    double fmax = 11025.0;
    double log_floor = 1e-5;
    double p_ref = 1.0;
    int gl_iters = 64;

    void validate() const;  // throws ConfigError on bad ranges
    bool operator==(const DspConfig&) const = default;
};

// Normalized log-mel matrix (n_mels x n_frames), values in [-1, 1].
struct MelSpectrogram {
    TenF values;
    DspConfig config;

    int n_mels() const { return values.dim(0); }
    int n_frames() const { return values.dim(1); }
    float at(int band, int frame) const {
        return values.v[size_t(band) * size_t(n_frames()) + size_t(frame)];
    }
    float& at(int band, int frame) {
        return values.v[size_t(band) * size_t(n_frames()) + size_t(frame)];
    }
};

// Triangular mel filterbank on the HTK mel scale, peak-1 triangles,
// plus the right pseudo-inverse used for spectrogram inversion.
class MelFilterbank {
public:
    explicit MelFilterbank(const DspConfig& cfg);

    int n_mels() const { return n_mels_; }
    int n_bins() const { return n_bins_; }
    // weight of fft bin `bin` in mel band `band`
    double weight(int band, int bin) const {
        return rows_[size_t(band) * size_t(n_bins_) + size_t(bin)];
    }
    double center_hz(int band) const { return centers_hz_[size_t(band)]; }

    // mel power (n_mels) from linear power (n_bins)
    std::vector<double> apply(const std::vector<double>& linear_power) const;
    // non-negative pseudo-inverse: linear power from mel power
    std::vector<double> invert(const std::vector<double>& mel_power) const;

    static double hz_to_mel(double hz);
    static double mel_to_hz(double mel);

private:
    int n_mels_, n_bins_;
    std::vector<double> rows_;        // n_mels x n_bins
    std::vector<double> pinv_;        // n_bins x n_mels
    std::vector<double> centers_hz_;  // n_mels
};

// Hann-windowed centered STFT power spectrogram, (n_fft/2+1) x n_frames,
// normalized so a full-scale sine has power ~1 at its bin.
Ten<double> stft_power(const Waveform& w, const DspConfig& cfg);

// waveform -> normalized log-mel; deterministic, output in [-1, 1]
MelSpectrogram mel_spectrogram(const Waveform& w, const DspConfig& cfg);

// mel -> waveform via pseudo-inverse + Griffin-Lim phase retrieval.
// Phase is initialized from `phase_seed`; if `convergence_trace` is given,
// the per-iteration spectral convergence error is appended to it.
Waveform griffin_lim(const MelSpectrogram& m, const DspConfig& cfg,
                     uint64_t phase_seed = 0,
                     std::vector<double>* convergence_trace = nullptr);

// binary spectrogram format: magic "MELS", version, n_mels, n_frames,
// row-major f32 little-endian
void write_mels(const std::string& path, const MelSpectrogram& m);
MelSpectrogram read_mels(const std::string& path, const DspConfig& cfg);

// grayscale render, low frequency at the bottom
void render_mel_png(const std::string& path, const MelSpectrogram& m);

// crop or pad (with floor value -1) to exactly n frames
MelSpectrogram fit_frames(const MelSpectrogram& m, int n_frames);

}  // namespace melstyle::dsp
