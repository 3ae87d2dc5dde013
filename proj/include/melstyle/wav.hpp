#pragma once

#include <string>
#include <vector>

namespace melstyle {

struct Waveform {
    std::vector<float> samples;  // amplitudes in [-1, 1]
    int sample_rate = 0;

    double duration_s() const {
        return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0;
    }
};

// 16-bit PCM only. Stereo input is downmixed to mono by averaging.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

}  // namespace melstyle
