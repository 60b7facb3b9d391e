#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ensemblefit/tensor.hpp"

namespace ensemblefit {

// Row-major H x W x C pixel grid. Freshly ingested files carry raw 8-bit
// values in [0, 255]; everything after preprocessing lives in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
        : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

    double& at(std::size_t y, std::size_t x, std::size_t ch = 0) {
        return pixels[(y * width + x) * channels + ch];
    }
    double at(std::size_t y, std::size_t x, std::size_t ch = 0) const {
        return pixels[(y * width + x) * channels + ch];
    }
    bool empty() const { return pixels.empty(); }
};

// binary PGM (P5), 8-bit; values land in [0, 255]
Image read_pgm(const std::string& path);
// expects pixels in [0, 1]; quantizes to 8-bit
void write_pgm(const Image& img, const std::string& path);

// 8-bit PNG via libpng; gray stays single-channel, anything else becomes RGB
Image read_png(const std::string& path);

// dispatch on extension (.pgm / .png, case-insensitive)
Image read_image(const std::string& path);

// half-pixel-center bilinear resize with edge clamping
Image bilinear_resize(const Image& img, std::size_t out_h, std::size_t out_w);

// channel-first (C, H, W) tensor
Tensor image_to_tensor(const Image& img);

// resize to target, multiply by rescale, emit (C, H, W)
Tensor preprocess(const Image& img, std::size_t target_h, std::size_t target_w,
                  double rescale = 1.0 / 255.0);

} // namespace ensemblefit
