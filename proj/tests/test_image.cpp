#include <png.h>

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "irestore/image.hpp"
#include "irestore/rng.hpp"

using namespace irestore;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Image img(h, w);
    for (auto& p : img.pixels) p = rng.uniform(0.0, 1.0);
    return img;
}

void write_rgb_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    REQUIRE(fp != nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, fp);
    png_set_IHDR(png, info, 2, 2, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    unsigned char rows[2][6] = {{255, 0, 0, 0, 255, 0}, {0, 0, 255, 255, 255, 0}};
    png_bytep rp[2] = {rows[0], rows[1]};
    png_write_image(png, rp);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace

TEST_CASE("pgm normalization endpoints") {
    {
        std::ofstream out("t_end8.pgm", std::ios::binary);
        out << "P5\n2 1\n255\n";
        const unsigned char px[2] = {255, 0};
        out.write(reinterpret_cast<const char*>(px), 2);
    }
    Image a = load_image("t_end8.pgm");
    CHECK(a.at(0, 0) == 1.0);
    CHECK(a.at(0, 1) == 0.0);

    {
        std::ofstream out("t_end16.pgm", std::ios::binary);
        out << "P5\n2 1\n65535\n";
        const unsigned char px[4] = {0xff, 0xff, 0x00, 0x00};
        out.write(reinterpret_cast<const char*>(px), 4);
    }
    Image b = load_image("t_end16.pgm");
    CHECK(b.at(0, 0) == 1.0);
    CHECK(b.at(0, 1) == 0.0);
}

TEST_CASE("quantization rounds half up") {
    Image img(1, 1);
    img.pixels[0] = 0.5;
    save_image(img, "t_half.pgm", 8);
    std::ifstream in("t_half.pgm", std::ios::binary);
    std::vector<char> all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(static_cast<unsigned char>(all.back()) == 128);
}

TEST_CASE("save then load is stable after one quantization") {
    Image img = random_image(9, 7, 31);
    for (int depth : {8, 16}) {
        for (const char* ext : {"png", "pgm"}) {
            const std::string p1 = std::string("t_rt1.") + ext, p2 = std::string("t_rt2.") + ext;
            save_image(img, p1, depth);
            Image once = load_image(p1);
            save_image(once, p2, depth);
            Image twice = load_image(p2);
            REQUIRE(once.size() == twice.size());
            for (std::size_t i = 0; i < once.size(); ++i) CHECK(once.pixels[i] == twice.pixels[i]);
        }
    }
}

TEST_CASE("pgm and png decode identically") {
    Image img = random_image(6, 11, 32);
    for (int depth : {8, 16}) {
        save_image(img, "t_x.pgm", depth);
        save_image(img, "t_x.png", depth);
        Image a = load_image("t_x.pgm");
        Image b = load_image("t_x.png");
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.pixels[i] == b.pixels[i]);
    }
}

TEST_CASE("out of range values clamp on save") {
    Image img(1, 3);
    img.pixels = {-0.25, 0.5, 1.75};
    save_image(img, "t_clamp.pgm", 8);
    Image back = load_image("t_clamp.pgm");
    CHECK(back.pixels[0] == 0.0);
    CHECK(back.pixels[1] == doctest::Approx(128.0 / 255.0));
    CHECK(back.pixels[2] == 1.0);
}

TEST_CASE("load rejects bad inputs") {
    CHECK_THROWS_AS(load_image("t_missing.png"), std::runtime_error);
    CHECK_THROWS_AS(load_image("t_missing.tiff"), std::runtime_error);

    write_rgb_png("t_rgb.png");
    CHECK_THROWS_WITH_AS(load_image("t_rgb.png"), doctest::Contains("color"), std::runtime_error);

    {
        std::ofstream out("t_bad.pgm", std::ios::binary);
        out << "P5\n2 1\n100\n";
        out.write("\x10\x20", 2);
    }
    CHECK_THROWS_AS(load_image("t_bad.pgm"), std::runtime_error);
}

TEST_CASE("tensor bridge round-trips") {
    Image img = random_image(5, 4, 33);
    auto t = image_to_tensor<double>(img);
    CHECK(t.dim(2) == 5);
    CHECK(t.dim(3) == 4);
    Image back = tensor_to_image(t);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.pixels[i] == img.pixels[i]);
    CHECK_THROWS_AS(tensor_to_image(t, 1, 0), std::invalid_argument);
}
