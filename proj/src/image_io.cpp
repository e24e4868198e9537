#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "irestore/image.hpp"

namespace irestore {
namespace {

bool has_suffix(const std::string& s, const char* suf) {
    const std::size_t n = std::strlen(suf);
    if (s.size() < n) return false;
    for (std::size_t i = 0; i < n; ++i)
        if (std::tolower(static_cast<unsigned char>(s[s.size() - n + i])) != suf[i]) return false;
    return true;
}

// --- PGM (P5 binary, P2 ascii) ---

int pgm_token(std::istream& in) {
    // skips whitespace and '#' comment lines between header fields
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw std::runtime_error("pgm: truncated header");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

Image load_pgm(const std::string& path, int* depth_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char p = 0, kind = 0;
    in.get(p);
    in.get(kind);
    if (p != 'P' || (kind != '5' && kind != '2'))
        throw std::runtime_error(path + ": not a grayscale pgm (P5 or P2)");
    const int w = pgm_token(in);
    const int h = pgm_token(in);
    const int maxval = pgm_token(in);
    if (w <= 0 || h <= 0) throw std::runtime_error(path + ": bad pgm extents");
    if (maxval != 255 && maxval != 65535)
        throw std::runtime_error(path + ": pgm maxval " + std::to_string(maxval) + " unsupported (need 255 or 65535)");
    if (depth_out) *depth_out = maxval > 255 ? 16 : 8;
    Image img(h, w);
    const double inv = 1.0 / maxval;
    if (kind == '2') {
        for (auto& px : img.pixels) px = pgm_token(in) * inv;
        return img;
    }
    const std::size_t bytes = img.size() * (maxval > 255 ? 2 : 1);
    std::vector<unsigned char> raw(bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in.gcount()) != bytes) throw std::runtime_error(path + ": truncated pgm data");
    if (maxval > 255) {
        for (std::size_t i = 0; i < img.size(); ++i)
            img.pixels[i] = ((raw[2 * i] << 8) | raw[2 * i + 1]) * inv;  // big-endian per the format
    } else {
        for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = raw[i] * inv;
    }
    return img;
}

void save_pgm(const Image& img, const std::string& path, int bit_depth, const std::vector<unsigned>& q) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    const int maxval = bit_depth == 16 ? 65535 : 255;
    out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
    std::vector<unsigned char> raw;
    raw.reserve(img.size() * (bit_depth == 16 ? 2 : 1));
    for (unsigned v : q) {
        if (bit_depth == 16) raw.push_back(static_cast<unsigned char>(v >> 8));
        raw.push_back(static_cast<unsigned char>(v & 0xff));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("cannot write " + path);
}

// --- PNG via libpng ---

Image load_png(const std::string& path, int* depth_out) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("png: initialization failed");
    }
    Image img;
    std::vector<unsigned char> raw;
    std::vector<png_bytep> rows;
    std::string err;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error(path + ": png decode failed");
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) err = "color image (grayscale required)";
    else if (depth != 8 && depth != 16) err = "bit depth " + std::to_string(depth) + " unsupported (need 8 or 16)";
    if (!err.empty()) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error(path + ": " + err);
    }
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (depth_out) *depth_out = depth;
    img = Image(h, w);
    const std::size_t stride = static_cast<std::size_t>(w) * (depth == 16 ? 2 : 1);
    raw.resize(stride * h);
    rows.resize(static_cast<std::size_t>(h));
    for (int r = 0; r < h; ++r) rows[static_cast<std::size_t>(r)] = raw.data() + stride * r;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    const double inv = 1.0 / (depth == 16 ? 65535.0 : 255.0);
    if (depth == 16) {
        for (std::size_t i = 0; i < img.size(); ++i)
            img.pixels[i] = ((raw[2 * i] << 8) | raw[2 * i + 1]) * inv;  // png 16-bit is big-endian on the wire
    } else {
        for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = raw[i] * inv;
    }
    return img;
}

void save_png(const Image& img, const std::string& path, int bit_depth, const std::vector<unsigned>& q) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("png: initialization failed");
    }
    const std::size_t stride = static_cast<std::size_t>(img.width) * (bit_depth == 16 ? 2 : 1);
    std::vector<unsigned char> raw(stride * img.height);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    std::size_t k = 0;
    for (unsigned v : q) {
        if (bit_depth == 16) raw[k++] = static_cast<unsigned char>(v >> 8);
        raw[k++] = static_cast<unsigned char>(v & 0xff);
    }
    for (int r = 0; r < img.height; ++r) rows[static_cast<std::size_t>(r)] = raw.data() + stride * r;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error(path + ": png encode failed");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), bit_depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(fp) != 0) throw std::runtime_error("cannot write " + path);
}

}  // namespace

Image load_image(const std::string& path, int* bit_depth) {
    if (has_suffix(path, ".pgm")) return load_pgm(path, bit_depth);
    if (has_suffix(path, ".png")) return load_png(path, bit_depth);
    throw std::runtime_error(path + ": unsupported format (need .png or .pgm)");
}

void save_image(const Image& img, const std::string& path, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16)
        throw std::invalid_argument("save_image: bit depth must be 8 or 16, got " + std::to_string(bit_depth));
    if (img.height <= 0 || img.width <= 0 || img.size() != static_cast<std::size_t>(img.height) * img.width)
        throw std::invalid_argument("save_image: malformed image");
    const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<unsigned> q(img.size());
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        double v = img.pixels[i];
        if (v < 0.0 || v > 1.0) {
            ++clamped;
            v = v < 0.0 ? 0.0 : 1.0;
        }
        q[i] = static_cast<unsigned>(std::floor(v * maxval + 0.5));  // round half up
    }
    if (clamped > 0)
        std::fprintf(stderr, "warning: save_image: %zu pixels outside [0,1] clamped in %s\n", clamped, path.c_str());
    if (has_suffix(path, ".pgm")) return save_pgm(img, path, bit_depth, q);
    if (has_suffix(path, ".png")) return save_png(img, path, bit_depth, q);
    throw std::runtime_error(path + ": unsupported format (need .png or .pgm)");
}

}  // namespace irestore
