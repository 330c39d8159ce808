#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace d2a {

// Single-channel raster, as stored on disk: samples in [0, maxval].
struct GrayImage {
    int64_t width = 0;
    int64_t height = 0;
    int maxval = 255;  // 255 or 65535
    std::vector<uint16_t> pixels;  // row-major

    int64_t size() const { return width * height; }
};

// Reads an 8- or 16-bit grayscale PGM (P2/P5) or PNG. Throws on unreadable
// files, color images, and malformed headers.
GrayImage read_gray_image(const std::string& path);

void write_pgm(const std::string& path, const GrayImage& img);

// 8-bit RGB PPM writer (used for prediction overlays).
void write_ppm(const std::string& path, int64_t width, int64_t height,
               const std::vector<uint8_t>& rgb);

void write_png_gray(const std::string& path, const GrayImage& img);

}  // namespace d2a
