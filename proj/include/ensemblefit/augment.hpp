#pragma once

#include <cstdint>

#include "ensemblefit/image.hpp"
#include "ensemblefit/rng.hpp"

namespace ensemblefit {

// Training-time augmentation: random flips, rotation by a fraction of a
// full turn, and zoom. target_size/rescale describe the preprocessing the
// pipeline expects in front of it.
struct AugmentPipeline {
    std::size_t target_h = 32;
    std::size_t target_w = 32;
    double rescale = 1.0 / 255.0;
    bool flip_h = true;
    bool flip_v = true;
    double rotation_factor = 0.2; // angle ~ U(-f*360deg, +f*360deg)
    double zoom_factor = 0.2;     // scale ~ U(1-f, 1+f)
    std::uint64_t seed = 42;
};

// input must already be preprocessed to [0,1]; out-of-frame pixels are 0.
// Draws come from the supplied per-item stream so results are independent
// of scheduling.
Image augment(const Image& img, const AugmentPipeline& pipeline, Rng& rng);

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);

// rotate (counterclockwise, degrees) then zoom about the image center in
// one bilinear resample; identity when angle == 0 and scale == 1
Image rotate_zoom(const Image& img, double angle_deg, double scale);

} // namespace ensemblefit
