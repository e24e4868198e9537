#pragma once

#include <string>
#include <vector>

#include "irestore/tensor.hpp"

namespace irestore {

// Grayscale field in [0,1], row-major. The unit of all file I/O and metrics.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0.0) {}

    double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return pixels.size(); }
};

// Reads an 8- or 16-bit grayscale PNG or PGM, mapping to [0,1] by the
// bit-depth maximum. Color or palette files are rejected. When bit_depth is
// non-null it receives 8 or 16.
Image load_image(const std::string& path, int* bit_depth = nullptr);

// Quantizes by round(v * max) at the requested depth and writes PNG or PGM
// by file extension. Out-of-range values are clamped first and counted in a
// stderr warning.
void save_image(const Image& img, const std::string& path, int bit_depth = 8);

template <typename T>
TensorT<T> image_to_tensor(const Image& img) {
    std::vector<T> v(img.pixels.begin(), img.pixels.end());
    return TensorT<T>::from_vector({1, 1, img.height, img.width}, std::move(v));
}

template <typename T>
Image tensor_to_image(const TensorT<T>& t, int n = 0, int c = 0) {
    if (t.ndim() != 4) throw std::invalid_argument("tensor_to_image: expected a 4-d tensor, got " + shape_str(t.shape()));
    if (n < 0 || n >= t.dim(0) || c < 0 || c >= t.dim(1))
        throw std::invalid_argument("tensor_to_image: slice (" + std::to_string(n) + "," + std::to_string(c) +
                                    ") outside " + shape_str(t.shape()));
    const int H = t.dim(2), W = t.dim(3);
    Image img(H, W);
    const std::size_t base = (static_cast<std::size_t>(n) * t.dim(1) + c) * H * W;
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>(t.data()[base + i]);
    return img;
}

}  // namespace irestore
