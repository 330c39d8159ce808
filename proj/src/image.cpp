#include "d2a/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace d2a {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) {
    throw std::runtime_error("cannot read '" + path + "': " + why);
}

// Skips whitespace and '#' comment lines in a PGM header.
int next_header_token(std::istream& in) {
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
        } else if (!isspace(c)) {
            return c;
        }
    }
    return EOF;
}

int64_t read_header_int(std::istream& in, const std::string& path) {
    int c = next_header_token(in);
    if (c == EOF || !isdigit(c)) fail(path, "malformed PGM header");
    int64_t v = c - '0';
    while ((c = in.get()) != EOF && isdigit(c)) v = v * 10 + (c - '0');
    return v;
}

GrayImage read_pgm(const std::string& path, std::ifstream& in, bool binary) {
    GrayImage img;
    img.width = read_header_int(in, path);
    img.height = read_header_int(in, path);
    int64_t maxval = read_header_int(in, path);
    if (img.width < 1 || img.height < 1) fail(path, "bad PGM dimensions");
    if (maxval < 1 || maxval > 65535) fail(path, "bad PGM maxval");
    img.maxval = (int)maxval;
    img.pixels.resize(img.size());
    if (binary) {
        // a single whitespace byte separates header from raster
        if (maxval < 256) {
            std::vector<uint8_t> raw(img.size());
            in.read((char*)raw.data(), raw.size());
            if (!in) fail(path, "truncated PGM raster");
            for (int64_t i = 0; i < img.size(); ++i) img.pixels[i] = raw[i];
        } else {
            std::vector<uint8_t> raw(img.size() * 2);
            in.read((char*)raw.data(), raw.size());
            if (!in) fail(path, "truncated PGM raster");
            for (int64_t i = 0; i < img.size(); ++i)
                img.pixels[i] = (uint16_t)((raw[2 * i] << 8) | raw[2 * i + 1]);  // big-endian
        }
    } else {
        for (int64_t i = 0; i < img.size(); ++i) {
            int64_t v = read_header_int(in, path);
            if (v > maxval) fail(path, "PGM sample exceeds maxval");
            img.pixels[i] = (uint16_t)v;
        }
    }
    return img;
}

GrayImage read_png(const std::string& path) {
    FILE* fp = fopen(path.c_str(), "rb");
    if (!fp) fail(path, "file does not exist or is unreadable");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        fclose(fp);
        fail(path, "libpng init failed");
    }
    GrayImage img;
    std::vector<png_bytep> rows;
    std::vector<uint8_t> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fclose(fp);
        fail(path, "libpng decode error");
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        fclose(fp);
        fail(path, "color image; a single-channel grayscale raster is required");
    }
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.maxval = depth == 16 ? 65535 : 255;
    size_t stride = png_get_rowbytes(png, info);
    buf.resize(stride * img.height);
    rows.resize(img.height);
    for (int64_t y = 0; y < img.height; ++y) rows[y] = buf.data() + y * stride;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    fclose(fp);
    img.pixels.resize(img.size());
    if (depth == 16) {
        for (int64_t i = 0; i < img.size(); ++i)
            img.pixels[i] = (uint16_t)((buf[2 * i] << 8) | buf[2 * i + 1]);  // PNG is big-endian
    } else {
        for (int64_t i = 0; i < img.size(); ++i) img.pixels[i] = buf[i];
    }
    return img;
}

}  // namespace

GrayImage read_gray_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "file does not exist or is unreadable");
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in) fail(path, "file too short");
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '2'))
        return read_pgm(path, in, magic[1] == '5');
    unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    char rest[6];
    in.read(rest, 6);
    if (in && magic[0] == (char)png_sig[0] && magic[1] == 'P' && memcmp(rest, png_sig + 2, 6) == 0) {
        in.close();
        return read_png(path);
    }
    fail(path, "unsupported format (expected PGM or grayscale PNG)");
}

void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "P5\n" << img.width << " " << img.height << "\n" << img.maxval << "\n";
    if (img.maxval < 256) {
        std::vector<uint8_t> raw(img.size());
        for (int64_t i = 0; i < img.size(); ++i) raw[i] = (uint8_t)img.pixels[i];
        out.write((const char*)raw.data(), raw.size());
    } else {
        std::vector<uint8_t> raw(img.size() * 2);
        for (int64_t i = 0; i < img.size(); ++i) {
            raw[2 * i] = (uint8_t)(img.pixels[i] >> 8);
            raw[2 * i + 1] = (uint8_t)(img.pixels[i] & 0xff);
        }
        out.write((const char*)raw.data(), raw.size());
    }
    if (!out) throw std::runtime_error("short write to '" + path + "'");
}

void write_ppm(const std::string& path, int64_t width, int64_t height,
               const std::vector<uint8_t>& rgb) {
    if ((int64_t)rgb.size() != width * height * 3)
        throw std::runtime_error("ppm buffer size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "P6\n" << width << " " << height << "\n255\n";
    out.write((const char*)rgb.data(), rgb.size());
    if (!out) throw std::runtime_error("short write to '" + path + "'");
}

void write_png_gray(const std::string& path, const GrayImage& img) {
    FILE* fp = fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        fclose(fp);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fclose(fp);
        throw std::runtime_error("libpng encode error for '" + path + "'");
    }
    int depth = img.maxval < 256 ? 8 : 16;
    png_init_io(png, fp);
    png_set_IHDR(png, info, (png_uint_32)img.width, (png_uint_32)img.height, depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<uint8_t> buf;
    std::vector<png_bytep> rows(img.height);
    if (depth == 8) {
        buf.resize(img.size());
        for (int64_t i = 0; i < img.size(); ++i) buf[i] = (uint8_t)img.pixels[i];
        for (int64_t y = 0; y < img.height; ++y) rows[y] = buf.data() + y * img.width;
    } else {
        buf.resize(img.size() * 2);
        for (int64_t i = 0; i < img.size(); ++i) {
            buf[2 * i] = (uint8_t)(img.pixels[i] >> 8);
            buf[2 * i + 1] = (uint8_t)(img.pixels[i] & 0xff);
        }
        for (int64_t y = 0; y < img.height; ++y) rows[y] = buf.data() + y * img.width * 2;
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    fclose(fp);
}

}  // namespace d2a
