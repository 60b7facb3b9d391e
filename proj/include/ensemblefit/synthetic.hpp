#pragma once

#include <cstdint>

#include "ensemblefit/dataset.hpp"
#include "ensemblefit/rng.hpp"

namespace ensemblefit {

// Desk-scale stand-in for a rail-parts photo corpus: noisy plate textures
// with rivet discs; defects add a dark crack polyline. A configurable
// fraction of defects get a near-invisible crack and share their base
// texture with a paired normal image, giving visually identical pairs.
struct SyntheticConfig {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t n_normal = 200;
    std::size_t n_defect = 100;
    double confusable_fraction = 0.0;
    double stroke_len = 40.0;       // total crack length in pixels
    double stroke_thickness = 1.6;
    double crack_depth = 0.35;      // intensity drop of a visible crack
    double confusable_depth = 0.015; // faint-crack drop, must stay under 0.02
    std::size_t max_rivets = 3;
    std::uint64_t seed = 42;
};

Dataset generate_synthetic(const SyntheticConfig& config);

// Surrogate pretraining task: brighter plates, class 1 carries straight
// dark scratches. Binary so the same sigmoid/BCE machinery trains it.
Dataset generate_source_task(std::size_t height, std::size_t width, std::size_t n_per_class,
                             std::uint64_t seed);

inline constexpr const char* kSourceTaskId = "scratch-texture-v1";

namespace synth_detail {

// exposed so tests can re-render the crack-free base of any defect image
Image render_base(std::size_t height, std::size_t width, std::size_t max_rivets, Rng& rng);
void stamp_crack(Image& img, double stroke_len, double thickness, double depth,
                 bool faint, Rng& rng);

std::uint64_t pair_base_stream(std::size_t pair_index);
std::uint64_t pair_crack_stream(std::size_t pair_index);
std::uint64_t normal_stream(std::size_t index);
std::uint64_t defect_base_stream(std::size_t index);
std::uint64_t defect_crack_stream(std::size_t index);

} // namespace synth_detail

} // namespace ensemblefit
