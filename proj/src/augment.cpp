#include "ensemblefit/augment.hpp"

#include <cmath>
#include <stdexcept>

namespace ensemblefit {

Image flip_horizontal(const Image& img) {
    Image out(img.height, img.width, img.channels);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

Image flip_vertical(const Image& img) {
    Image out(img.height, img.width, img.channels);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
    return out;
}

Image rotate_zoom(const Image& img, double angle_deg, double scale) {
    if (img.empty()) throw std::invalid_argument("rotate_zoom: empty image");
    if (scale <= 0.0) throw std::invalid_argument("rotate_zoom: scale must be positive");
    if (angle_deg == 0.0 && scale == 1.0) return img;

    const double theta = angle_deg * 3.14159265358979323846 / 180.0;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double cy = (static_cast<double>(img.height) - 1.0) * 0.5;
    const double cx = (static_cast<double>(img.width) - 1.0) * 0.5;

    Image out(img.height, img.width, img.channels);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            // inverse map: undo zoom, then undo rotation
            const double dy = (static_cast<double>(y) - cy) / scale;
            const double dx = (static_cast<double>(x) - cx) / scale;
            const double sy = cy + (sin_t * dx + cos_t * dy);
            const double sx = cx + (cos_t * dx - sin_t * dy);
            const auto y0 = static_cast<std::ptrdiff_t>(std::floor(sy));
            const auto x0 = static_cast<std::ptrdiff_t>(std::floor(sx));
            const double wy = sy - static_cast<double>(y0);
            const double wx = sx - static_cast<double>(x0);
            auto sample = [&](std::ptrdiff_t yy, std::ptrdiff_t xx, std::size_t c) -> double {
                if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(img.height) ||
                    xx >= static_cast<std::ptrdiff_t>(img.width)) {
                    return 0.0; // out-of-frame fill
                }
                return img.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
            };
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double top = sample(y0, x0, c) * (1.0 - wx) + sample(y0, x0 + 1, c) * wx;
                const double bot = sample(y0 + 1, x0, c) * (1.0 - wx) + sample(y0 + 1, x0 + 1, c) * wx;
                out.at(y, x, c) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Image augment(const Image& img, const AugmentPipeline& pipeline, Rng& rng) {
    Image out = img;
    if (pipeline.flip_h && rng.coin()) out = flip_horizontal(out);
    if (pipeline.flip_v && rng.coin()) out = flip_vertical(out);
    double angle = 0.0;
    if (pipeline.rotation_factor > 0.0) {
        const double span = pipeline.rotation_factor * 360.0;
        angle = rng.uniform(-span, span);
    }
    double scale = 1.0;
    if (pipeline.zoom_factor > 0.0) {
        scale = rng.uniform(1.0 - pipeline.zoom_factor, 1.0 + pipeline.zoom_factor);
    }
    if (angle != 0.0 || scale != 1.0) out = rotate_zoom(out, angle, scale);
    return out;
}

} // namespace ensemblefit
