#include "melstyle/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "melstyle/common.hpp"

namespace melstyle {

namespace {

uint32_t rd_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
           uint32_t(p[3]) << 24;
}
uint16_t rd_u16(const uint8_t* p) { return uint16_t(p[0] | p[1] << 8); }

void wr_u32(std::ofstream& f, uint32_t v) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
}
void wr_u16(std::ofstream& f, uint16_t v) {
    uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
    f.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open wav: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw IoError("not a RIFF/WAVE file: " + path);

    int channels = 0, sample_rate = 0, bits = 0;
    size_t data_off = 0, data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const uint8_t* hdr = buf.data() + pos;
        uint32_t chunk_len = rd_u32(hdr + 4);
        if (std::memcmp(hdr, "fmt ", 4) == 0 && pos + 8 + 16 <= buf.size()) {
            const uint8_t* p = hdr + 8;
            uint16_t fmt = rd_u16(p);
            channels = rd_u16(p + 2);
            sample_rate = int(rd_u32(p + 4));
            bits = rd_u16(p + 14);
            if (fmt != 1) throw IoError("only PCM wav supported: " + path);
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data_off = pos + 8;
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    if (channels == 0 || data_off == 0) throw IoError("malformed wav: " + path);
    if (bits != 16) throw IoError("only 16-bit PCM supported: " + path);
    if (data_off + data_len > buf.size()) data_len = buf.size() - data_off;

    size_t n_frames = data_len / (size_t(channels) * 2);
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(n_frames);
    const uint8_t* d = buf.data() + data_off;
    for (size_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
            int16_t s = int16_t(rd_u16(d + (i * size_t(channels) + size_t(c)) * 2));
            acc += double(s) / 32768.0;
        }
        w.samples[i] = float(acc / channels);
    }
    return w;
}

void write_wav(const std::string& path, const Waveform& w) {
    if (w.sample_rate <= 0) throw ConfigError("wav sample rate must be positive");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write wav: " + path);

    uint32_t data_len = uint32_t(w.samples.size() * 2);
    f.write("RIFF", 4);
    wr_u32(f, 36 + data_len);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    wr_u32(f, 16);
    wr_u16(f, 1);  // PCM
    wr_u16(f, 1);  // mono
    wr_u32(f, uint32_t(w.sample_rate));
    wr_u32(f, uint32_t(w.sample_rate) * 2);
    wr_u16(f, 2);
    wr_u16(f, 16);
    f.write("data", 4);
    wr_u32(f, data_len);
    for (float s : w.samples) {
        double x = std::clamp(double(s), -1.0, 1.0);
        int16_t q = int16_t(std::lrint(x * 32767.0));
        wr_u16(f, uint16_t(q));
    }
    if (!f) throw IoError("short write: " + path);
}

}  // namespace melstyle
