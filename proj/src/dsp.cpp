#include "melstyle/dsp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

#include "melstyle/common.hpp"
#include "melstyle/fft.hpp"
#include "melstyle/png.hpp"
#include "melstyle/rng.hpp"

namespace melstyle::dsp {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::vector<double> hann_window(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        w[size_t(i)] = 0.5 * (1.0 - std::cos(kTwoPi * i / n));
    return w;
}

// centered framing with reflect padding, matching frame count 1 + floor(n/hop)
std::vector<double> padded_signal(const Waveform& w, int n_fft) {
    const int pad = n_fft / 2;
    const int n = int(w.samples.size());
    std::vector<double> s(size_t(n + 2 * pad));
    for (int i = 0; i < n + 2 * pad; ++i) {
        int j = i - pad;
        if (j < 0) j = -j;
        if (j >= n) j = 2 * (n - 1) - j;
        j = std::clamp(j, 0, n - 1);
        s[size_t(i)] = double(w.samples[size_t(j)]);
    }
    return s;
}

}  // namespace

void DspConfig::validate() const {
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0)
        throw ConfigError("n_fft must be a power of two >= 2");
    if (hop <= 0 || hop > n_fft) throw ConfigError("hop must satisfy 0 < hop <= n_fft");
    if (n_mels < 8) throw ConfigError("n_mels must be >= 8");
    if (!(fmin >= 0 && fmin < fmax && fmax <= sample_rate / 2.0))
        throw ConfigError("need 0 <= fmin < fmax <= sample_rate/2");
    if (!(log_floor > 0)) throw ConfigError("log_floor must be positive");
    if (!(p_ref > log_floor)) throw ConfigError("p_ref must exceed log_floor");
    if (gl_iters < 1) throw ConfigError("gl_iters must be >= 1");
}

double MelFilterbank::hz_to_mel(double hz) {
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double MelFilterbank::mel_to_hz(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank::MelFilterbank(const DspConfig& cfg) {
    cfg.validate();
    n_mels_ = cfg.n_mels;
    n_bins_ = cfg.n_fft / 2 + 1;
    rows_.assign(size_t(n_mels_) * size_t(n_bins_), 0.0);
    centers_hz_.resize(size_t(n_mels_));

    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.fmax);
    std::vector<double> f_pts(size_t(n_mels_) + 2);
    for (int i = 0; i < n_mels_ + 2; ++i)
        f_pts[size_t(i)] =
            mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / double(n_mels_ + 1));
    for (int b = 0; b < n_mels_; ++b) centers_hz_[size_t(b)] = f_pts[size_t(b) + 1];

    const double hz_per_bin = double(cfg.sample_rate) / cfg.n_fft;
    for (int b = 0; b < n_mels_; ++b) {
        const double l = f_pts[size_t(b)];
        const double c = f_pts[size_t(b) + 1];
        const double r = f_pts[size_t(b) + 2];
        for (int k = 0; k < n_bins_; ++k) {
            const double f = k * hz_per_bin;
            double up = (f - l) / std::max(c - l, 1e-12);
            double down = (r - f) / std::max(r - c, 1e-12);
            double wgt = std::max(0.0, std::min(up, down));
            rows_[size_t(b) * size_t(n_bins_) + size_t(k)] = wgt;
        }
    }

    // right pseudo-inverse P = F^T (F F^T + eps I)^-1, clipped at 0 on use
    Eigen::MatrixXd F(n_mels_, n_bins_);
    for (int b = 0; b < n_mels_; ++b)
        for (int k = 0; k < n_bins_; ++k) F(b, k) = weight(b, k);
    Eigen::MatrixXd G = F * F.transpose();
    G.diagonal().array() += 1e-8;
    Eigen::MatrixXd P = F.transpose() * G.llt().solve(
                                            Eigen::MatrixXd::Identity(n_mels_, n_mels_));
    pinv_.resize(size_t(n_bins_) * size_t(n_mels_));
    for (int k = 0; k < n_bins_; ++k)
        for (int b = 0; b < n_mels_; ++b)
            pinv_[size_t(k) * size_t(n_mels_) + size_t(b)] = P(k, b);
}

std::vector<double> MelFilterbank::apply(const std::vector<double>& linear_power) const {
    if (linear_power.size() != size_t(n_bins_))
        throw ShapeError("filterbank input bin count mismatch");
    std::vector<double> mel(size_t(n_mels_), 0.0);
    for (int b = 0; b < n_mels_; ++b) {
        const double* row = rows_.data() + size_t(b) * size_t(n_bins_);
        double acc = 0.0;
        for (int k = 0; k < n_bins_; ++k) acc += row[k] * linear_power[size_t(k)];
        mel[size_t(b)] = acc;
    }
    return mel;
}

std::vector<double> MelFilterbank::invert(const std::vector<double>& mel_power) const {
    if (mel_power.size() != size_t(n_mels_))
        throw ShapeError("filterbank inversion band count mismatch");
    std::vector<double> lin(size_t(n_bins_), 0.0);
    for (int k = 0; k < n_bins_; ++k) {
        const double* row = pinv_.data() + size_t(k) * size_t(n_mels_);
        double acc = 0.0;
        for (int b = 0; b < n_mels_; ++b) acc += row[b] * mel_power[size_t(b)];
        lin[size_t(k)] = std::max(acc, 0.0);
    }
    return lin;
}

Ten<double> stft_power(const Waveform& w, const DspConfig& cfg) {
    cfg.validate();
    if (w.samples.empty()) throw InputError("empty waveform");
    if (w.sample_rate != cfg.sample_rate)
        throw ConfigError("waveform sample rate does not match dsp config");
    if (int(w.samples.size()) < cfg.n_fft)
        throw InputError("waveform shorter than n_fft");

    const int n_bins = cfg.n_fft / 2 + 1;
    const int n_frames = 1 + int(w.samples.size()) / cfg.hop;
    const auto window = hann_window(cfg.n_fft);
    double wsum = 0.0;
    for (double x : window) wsum += x;
    const double scale = 2.0 / wsum;  // sine of amplitude a -> magnitude ~a

    const auto s = padded_signal(w, cfg.n_fft);
    Ten<double> power({n_bins, n_frames});
    std::vector<double> frame(static_cast<size_t>(cfg.n_fft));
    for (int f = 0; f < n_frames; ++f) {
        const double* src = s.data() + size_t(f) * size_t(cfg.hop);
        for (int i = 0; i < cfg.n_fft; ++i) frame[size_t(i)] = src[i] * window[size_t(i)];
        auto bins = rfft(frame);
        for (int k = 0; k < n_bins; ++k) {
            double mag = std::abs(bins[size_t(k)]) * scale;
            power.v[size_t(k) * size_t(n_frames) + size_t(f)] = mag * mag;
        }
    }
    return power;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const DspConfig& cfg) {
    const auto power = stft_power(w, cfg);
    const int n_bins = power.dim(0);
    const int n_frames = power.dim(1);
    MelFilterbank fb(cfg);

    const double lo = std::log(cfg.log_floor);
    const double hi = std::log(cfg.p_ref);
    MelSpectrogram m;
    m.config = cfg;
    m.values = TenF({cfg.n_mels, n_frames});

    std::vector<double> col(static_cast<size_t>(n_bins));
    for (int f = 0; f < n_frames; ++f) {
        for (int k = 0; k < n_bins; ++k)
            col[size_t(k)] = power.v[size_t(k) * size_t(n_frames) + size_t(f)];
        auto mel = fb.apply(col);
        for (int b = 0; b < cfg.n_mels; ++b) {
            double lp = std::log(std::max(mel[size_t(b)], cfg.log_floor));
            double norm = 2.0 * (lp - lo) / (hi - lo) - 1.0;
            m.at(b, f) = float(std::clamp(norm, -1.0, 1.0));
        }
    }
    return m;
}

Waveform griffin_lim(const MelSpectrogram& m, const DspConfig& cfg,
                     uint64_t phase_seed, std::vector<double>* convergence_trace) {
    cfg.validate();
    if (!all_finite(m.values)) throw InputError("non-finite spectrogram");
    if (cfg.gl_iters < 1) throw ConfigError("gl_iters must be >= 1");

    const int n_bins = cfg.n_fft / 2 + 1;
    const int n_frames = m.n_frames();
    const int n_out = (n_frames - 1) * cfg.hop;
    const double lo = std::log(cfg.log_floor);
    const double hi = std::log(cfg.p_ref);

    // denormalize, subtract the floor so silence inverts to exact zero
    MelFilterbank fb(cfg);
    Ten<double> target({n_bins, n_frames});
    std::vector<double> mel_power(static_cast<size_t>(cfg.n_mels));
    double target_norm2 = 0.0;
    for (int f = 0; f < n_frames; ++f) {
        for (int b = 0; b < cfg.n_mels; ++b) {
            double lp = (double(m.at(b, f)) + 1.0) * 0.5 * (hi - lo) + lo;
            mel_power[size_t(b)] = std::max(std::exp(lp) - cfg.log_floor, 0.0);
        }
        auto lin = fb.invert(mel_power);
        for (int k = 0; k < n_bins; ++k) {
            double mag = std::sqrt(lin[size_t(k)]);
            target.v[size_t(k) * size_t(n_frames) + size_t(f)] = mag;
            target_norm2 += mag * mag;
        }
    }

    Waveform out;
    out.sample_rate = cfg.sample_rate;
    out.samples.assign(size_t(std::max(n_out, 1)), 0.0f);
    if (target_norm2 <= 0.0) return out;  // silence

    const auto window = hann_window(cfg.n_fft);
    double wsum = 0.0;
    for (double x : window) wsum += x;
    const double mag_scale = wsum / 2.0;  // undo the analysis normalization
    const int pad = cfg.n_fft / 2;
    const int n_padded = n_out + 2 * pad;

    // precompute overlap-add window-square normalizer
    std::vector<double> wss(size_t(n_padded), 0.0);
    for (int f = 0; f < n_frames; ++f)
        for (int i = 0; i < cfg.n_fft; ++i)
            wss[size_t(f * cfg.hop + i)] += window[size_t(i)] * window[size_t(i)];

    Rng rng(Rng::mix(phase_seed, Rng::hash_name("griffin_lim_phase")));
    Ten<double> ph_re({n_bins, n_frames}), ph_im({n_bins, n_frames});
    for (long long i = 0; i < ph_re.size(); ++i) {
        double th = rng.uniform() * kTwoPi;
        ph_re.v[size_t(i)] = std::cos(th);
        ph_im.v[size_t(i)] = std::sin(th);
    }

    std::vector<double> time(static_cast<size_t>(n_padded));
    std::vector<std::complex<double>> spec(static_cast<size_t>(cfg.n_fft));
    std::vector<double> frame(static_cast<size_t>(cfg.n_fft));

    auto istft = [&](const Ten<double>& re, const Ten<double>& im) {
        std::fill(time.begin(), time.end(), 0.0);
        std::vector<std::complex<double>> bins(static_cast<size_t>(n_bins));
        for (int f = 0; f < n_frames; ++f) {
            for (int k = 0; k < n_bins; ++k)
                bins[size_t(k)] = {re.v[size_t(k) * size_t(n_frames) + size_t(f)],
                                   im.v[size_t(k) * size_t(n_frames) + size_t(f)]};
            auto x = irfft(bins, cfg.n_fft);
            for (int i = 0; i < cfg.n_fft; ++i)
                time[size_t(f * cfg.hop + i)] += x[size_t(i)] * window[size_t(i)];
        }
        for (int i = 0; i < n_padded; ++i)
            time[size_t(i)] /= std::max(wss[size_t(i)], 1e-10);
    };

    Ten<double> cur_re({n_bins, n_frames}), cur_im({n_bins, n_frames});
    for (long long i = 0; i < cur_re.size(); ++i) {
        double mg = target.v[size_t(i)] * mag_scale;
        cur_re.v[size_t(i)] = mg * ph_re.v[size_t(i)];
        cur_im.v[size_t(i)] = mg * ph_im.v[size_t(i)];
    }

    for (int it = 0; it < cfg.gl_iters; ++it) {
        istft(cur_re, cur_im);
        // re-analyze
        double err2 = 0.0;
        for (int f = 0; f < n_frames; ++f) {
            const double* src = time.data() + size_t(f) * size_t(cfg.hop);
            for (int i = 0; i < cfg.n_fft; ++i)
                frame[size_t(i)] = src[i] * window[size_t(i)];
            auto bins = rfft(frame);
            for (int k = 0; k < n_bins; ++k) {
                size_t idx = size_t(k) * size_t(n_frames) + size_t(f);
                double re = bins[size_t(k)].real(), im = bins[size_t(k)].imag();
                double mag = std::sqrt(re * re + im * im);
                double tgt = target.v[idx];
                double d = mag / mag_scale - tgt;
                err2 += d * d;
                // project onto the target magnitude, keep the phase
                double mg = tgt * mag_scale;
                if (mag > 1e-14) {
                    cur_re.v[idx] = mg * re / mag;
                    cur_im.v[idx] = mg * im / mag;
                } else {
                    cur_re.v[idx] = mg;
                    cur_im.v[idx] = 0.0;
                }
            }
        }
        if (convergence_trace)
            convergence_trace->push_back(std::sqrt(err2 / target_norm2));
    }
    istft(cur_re, cur_im);

    double peak = 0.0;
    for (int i = 0; i < n_out; ++i)
        peak = std::max(peak, std::abs(time[size_t(i + pad)]));
    const double gain = peak > 0.99 ? 0.99 / peak : 1.0;
    for (int i = 0; i < n_out; ++i)
        out.samples[size_t(i)] = float(time[size_t(i + pad)] * gain);
    return out;
}

void write_mels(const std::string& path, const MelSpectrogram& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write spectrogram: " + path);
    const uint32_t version = 1;
    const uint32_t nm = uint32_t(m.n_mels()), nf = uint32_t(m.n_frames());
    f.write("MELS", 4);
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&nm), 4);
    f.write(reinterpret_cast<const char*>(&nf), 4);
    f.write(reinterpret_cast<const char*>(m.values.data()),
            std::streamsize(m.values.size() * 4));
    if (!f) throw IoError("short write: " + path);
}

MelSpectrogram read_mels(const std::string& path, const DspConfig& cfg) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open spectrogram: " + path);
    char magic[4];
    uint32_t version = 0, nm = 0, nf = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&nm), 4);
    f.read(reinterpret_cast<char*>(&nf), 4);
    if (!f || std::memcmp(magic, "MELS", 4) != 0)
        throw IoError("not a MELS file: " + path);
    if (version != 1) throw IoError("unsupported MELS version");
    MelSpectrogram m;
    m.config = cfg;
    m.values = TenF({int(nm), int(nf)});
    f.read(reinterpret_cast<char*>(m.values.data()),
           std::streamsize(m.values.size() * 4));
    if (!f) throw IoError("truncated MELS file: " + path);
    return m;
}

void render_mel_png(const std::string& path, const MelSpectrogram& m) {
    const int w = m.n_frames(), h = m.n_mels();
    std::vector<uint8_t> px(size_t(w) * size_t(h));
    for (int y = 0; y < h; ++y) {
        // row 0 of the image is the highest band: low frequency at the bottom
        int band = h - 1 - y;
        for (int x = 0; x < w; ++x) {
            double v = (double(m.at(band, x)) + 1.0) * 0.5;
            px[size_t(y) * size_t(w) + size_t(x)] =
                uint8_t(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        }
    }
    write_png_gray(path, w, h, px);
}

MelSpectrogram fit_frames(const MelSpectrogram& m, int n_frames) {
    if (n_frames < 1) throw InputError("n_frames must be >= 1");
    MelSpectrogram out;
    out.config = m.config;
    out.values = TenF({m.n_mels(), n_frames});
    for (int b = 0; b < m.n_mels(); ++b)
        for (int f = 0; f < n_frames; ++f)
            out.at(b, f) = f < m.n_frames() ? m.at(b, f) : -1.0f;
    return out;
}

}  // namespace melstyle::dsp
