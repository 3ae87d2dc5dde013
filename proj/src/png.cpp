#include "melstyle/png.hpp"

#include <array>
#include <fstream>

#include "melstyle/common.hpp"

namespace melstyle {

namespace {

uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0xffffffffu) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t n = 0; n < 256; ++n) {
            uint32_t c = n;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc;
}

uint32_t adler32(const std::vector<uint8_t>& data) {
    uint32_t a = 1, b = 0;
    for (uint8_t x : data) {
        a = (a + x) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

void push_u32be(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x >> 24));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

void write_chunk(std::ofstream& f, const char type[4],
                 const std::vector<uint8_t>& data) {
    std::vector<uint8_t> hdr;
    push_u32be(hdr, uint32_t(data.size()));
    f.write(reinterpret_cast<const char*>(hdr.data()), 4);
    f.write(type, 4);
    if (!data.empty())
        f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
    uint32_t crc = crc32(reinterpret_cast<const uint8_t*>(type), 4);
    crc = crc32(data.data(), data.size(), crc) ^ 0xffffffffu;
    std::vector<uint8_t> tail;
    push_u32be(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels) {
    if (width <= 0 || height <= 0 ||
        pixels.size() != size_t(width) * size_t(height))
        throw InputError("png pixel buffer does not match dimensions");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write png: " + path);

    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<uint8_t> ihdr;
    push_u32be(ihdr, uint32_t(width));
    push_u32be(ihdr, uint32_t(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(f, "IHDR", ihdr);

    // raw scanlines: filter byte 0 + row
    std::vector<uint8_t> raw;
    raw.reserve(size_t(height) * (size_t(width) + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = pixels.data() + size_t(y) * size_t(width);
        raw.insert(raw.end(), row, row + width);
    }

    // zlib stream with stored deflate blocks
    std::vector<uint8_t> idat;
    idat.push_back(0x78);
    idat.push_back(0x01);
    size_t off = 0;
    while (off < raw.size()) {
        size_t n = std::min<size_t>(65535, raw.size() - off);
        bool last = off + n == raw.size();
        idat.push_back(last ? 1 : 0);
        idat.push_back(uint8_t(n & 0xff));
        idat.push_back(uint8_t(n >> 8));
        idat.push_back(uint8_t(~n & 0xff));
        idat.push_back(uint8_t((~n >> 8) & 0xff));
        idat.insert(idat.end(), raw.begin() + long(off), raw.begin() + long(off + n));
        off += n;
    }
    push_u32be(idat, adler32(raw));
    write_chunk(f, "IDAT", idat);
    write_chunk(f, "IEND", {});
    if (!f) throw IoError("short write: " + path);
}

}  // namespace melstyle
