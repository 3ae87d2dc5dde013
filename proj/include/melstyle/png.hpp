#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace melstyle {

// Minimal 8-bit grayscale PNG writer (uncompressed deflate blocks, no deps).
// pixels are row-major, top row first, one byte per pixel.
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels);

}  // namespace melstyle
