#include "ensemblefit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ensemblefit {

namespace synth_detail {

std::uint64_t pair_base_stream(std::size_t i) { return (1ull << 32) | i; }
std::uint64_t pair_crack_stream(std::size_t i) { return (2ull << 32) | i; }
std::uint64_t normal_stream(std::size_t i) { return (3ull << 32) | i; }
std::uint64_t defect_base_stream(std::size_t i) { return (4ull << 32) | i; }
std::uint64_t defect_crack_stream(std::size_t i) { return (5ull << 32) | i; }

namespace {

void stamp_disc(Image& img, double cy, double cx, double radius, double delta) {
    const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - radius)));
    const auto y1 = static_cast<std::size_t>(
        std::min(static_cast<double>(img.height - 1), std::ceil(cy + radius)));
    const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - radius)));
    const auto x1 = static_cast<std::size_t>(
        std::min(static_cast<double>(img.width - 1), std::ceil(cx + radius)));
    for (std::size_t y = y0; y <= y1; ++y) {
        for (std::size_t x = x0; x <= x1; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            if (dy * dy + dx * dx <= radius * radius) {
                img.at(y, x) = std::clamp(img.at(y, x) + delta, 0.02, 0.98);
            }
        }
    }
}

} // namespace

Image render_base(std::size_t height, std::size_t width, std::size_t max_rivets, Rng& rng) {
    Image img(height, width, 1);
    const double base = rng.uniform(0.40, 0.62);

    // low-frequency blobs give each plate its own shading
    struct Blob {
        double cy, cx, sigma, amp;
    };
    Blob blobs[3];
    for (auto& b : blobs) {
        b.cy = rng.uniform(0.0, static_cast<double>(height));
        b.cx = rng.uniform(0.0, static_cast<double>(width));
        b.sigma = rng.uniform(0.25, 0.6) * static_cast<double>(height);
        b.amp = rng.uniform(-0.08, 0.08);
    }
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            double v = base;
            for (const auto& b : blobs) {
                const double dy = (static_cast<double>(y) - b.cy) / b.sigma;
                const double dx = (static_cast<double>(x) - b.cx) / b.sigma;
                v += b.amp * std::exp(-0.5 * (dy * dy + dx * dx));
            }
            v += rng.uniform(-0.03, 0.03); // grain
            img.at(y, x) = std::clamp(v, 0.02, 0.98);
        }
    }

    const std::size_t rivets = 1 + rng.index(max_rivets);
    for (std::size_t r = 0; r < rivets; ++r) {
        const double cy = rng.uniform(0.1, 0.9) * static_cast<double>(height);
        const double cx = rng.uniform(0.1, 0.9) * static_cast<double>(width);
        const double radius = rng.uniform(0.08, 0.16) * static_cast<double>(height);
        // dark rivets stay shallower than any visible crack cut
        const double delta = rng.coin() ? rng.uniform(0.06, 0.14) : -rng.uniform(0.04, 0.08);
        stamp_disc(img, cy, cx, radius, delta);
    }
    return img;
}

void stamp_crack(Image& img, double stroke_len, double thickness, double depth,
                 bool faint, Rng& rng) {
    const double h = static_cast<double>(img.height);
    const double w = static_cast<double>(img.width);
    double y = rng.uniform(0.2, 0.8) * h;
    double x = rng.uniform(0.2, 0.8) * w;
    double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double radius = std::max(0.5, thickness * 0.5);
    double walked = 0.0;
    while (walked < stroke_len) {
        const std::size_t py0 = static_cast<std::size_t>(std::clamp(y - radius, 0.0, h - 1.0));
        const std::size_t py1 = static_cast<std::size_t>(std::clamp(y + radius, 0.0, h - 1.0));
        const std::size_t px0 = static_cast<std::size_t>(std::clamp(x - radius, 0.0, w - 1.0));
        const std::size_t px1 = static_cast<std::size_t>(std::clamp(x + radius, 0.0, w - 1.0));
        for (std::size_t py = py0; py <= py1; ++py) {
            for (std::size_t px = px0; px <= px1; ++px) {
                const double dy = static_cast<double>(py) - y;
                const double dx = static_cast<double>(px) - x;
                if (dy * dy + dx * dx > radius * radius) continue;
                const double bg = img.at(py, px);
                double v;
                if (faint) {
                    v = bg - depth; // stays within 0.02 of the background
                } else if (depth >= 0.0) {
                    // visible cracks always cut at least 0.12 below the plate
                    v = std::min(bg - 0.12, std::max(0.02, bg - depth));
                } else {
                    // negative depth paints a bright streak instead
                    v = std::max(bg + 0.12, std::min(0.98, bg - depth));
                }
                img.at(py, px) = std::clamp(v, 0.0, 1.0);
            }
        }
        const double step = 1.0;
        y += step * std::sin(angle);
        x += step * std::cos(angle);
        angle += rng.uniform(-0.35, 0.35);
        // bounce off the borders so the crack stays on the plate
        if (y < 1.0 || y > h - 2.0 || x < 1.0 || x > w - 2.0) {
            angle += 3.14159265358979323846 * 0.5;
            y = std::clamp(y, 1.0, h - 2.0);
            x = std::clamp(x, 1.0, w - 2.0);
        }
        walked += step;
    }
}

} // namespace synth_detail

Dataset generate_synthetic(const SyntheticConfig& config) {
    if (config.n_normal == 0 || config.n_defect == 0) {
        throw std::invalid_argument("generate_synthetic: counts must be positive");
    }
    if (config.height < 16 || config.width < 16) {
        throw std::invalid_argument("generate_synthetic: image size must be at least 16x16");
    }
    if (config.confusable_fraction < 0.0 || config.confusable_fraction > 1.0) {
        throw std::invalid_argument("generate_synthetic: confusable_fraction must be in [0,1]");
    }
    const auto n_confusable = static_cast<std::size_t>(
        std::lround(config.confusable_fraction * static_cast<double>(config.n_defect)));
    if (n_confusable > config.n_normal) {
        throw std::invalid_argument("generate_synthetic: confusable pairs exceed normal count");
    }

    using namespace synth_detail;
    Dataset dataset;
    dataset.items.reserve(config.n_normal + config.n_defect);

    auto item_id = [](const char* prefix, std::size_t i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%04zu", prefix, i);
        return std::string(buf);
    };

    // normals: the first n_confusable are the crack-free halves of pairs
    for (std::size_t i = 0; i < config.n_normal; ++i) {
        LabeledImage item;
        if (i < n_confusable) {
            Rng rng(derive_seed(config.seed, pair_base_stream(i)));
            item.pixels = render_base(config.height, config.width, config.max_rivets, rng);
            item.confusable = true;
        } else {
            Rng rng(derive_seed(config.seed, normal_stream(i)));
            item.pixels = render_base(config.height, config.width, config.max_rivets, rng);
        }
        item.raw_label = "normal";
        item.label = 0;
        item.id = item_id("normal", i);
        dataset.items.push_back(std::move(item));
    }

    for (std::size_t i = 0; i < config.n_defect; ++i) {
        LabeledImage item;
        if (i < n_confusable) {
            Rng base_rng(derive_seed(config.seed, pair_base_stream(i)));
            item.pixels = render_base(config.height, config.width, config.max_rivets, base_rng);
            Rng crack_rng(derive_seed(config.seed, pair_crack_stream(i)));
            stamp_crack(item.pixels, config.stroke_len, config.stroke_thickness,
                        config.confusable_depth, true, crack_rng);
            item.confusable = true;
        } else {
            Rng base_rng(derive_seed(config.seed, defect_base_stream(i)));
            item.pixels = render_base(config.height, config.width, config.max_rivets, base_rng);
            Rng crack_rng(derive_seed(config.seed, defect_crack_stream(i)));
            stamp_crack(item.pixels, config.stroke_len, config.stroke_thickness,
                        config.crack_depth, false, crack_rng);
        }
        item.raw_label = "defect";
        item.label = 1;
        item.id = item_id("defect", i);
        dataset.items.push_back(std::move(item));
    }
    return dataset;
}

Dataset generate_source_task(std::size_t height, std::size_t width, std::size_t n_per_class,
                             std::uint64_t seed) {
    if (n_per_class == 0) throw std::invalid_argument("generate_source_task: count must be positive");
    Dataset dataset;
    dataset.items.reserve(2 * n_per_class);
    auto make_plate = [&](Rng& rng) {
        Image img(height, width, 1);
        const double base = rng.uniform(0.45, 0.75);
        for (double& v : img.pixels) v = std::clamp(base + rng.uniform(-0.04, 0.04), 0.02, 0.98);
        return img;
    };
    // class 0 carries bright streaks, class 1 dark scratches. Telling the
    // two apart needs detectors of both polarities, which keeps the
    // pretrained conv channels responsive on fresh input bases.
    for (std::size_t i = 0; i < n_per_class; ++i) {
        Rng rng(derive_seed(seed, (10ull << 32) | i));
        LabeledImage item;
        item.pixels = make_plate(rng);
        const std::size_t streaks = 1 + rng.index(2);
        for (std::size_t s = 0; s < streaks; ++s) {
            synth_detail::stamp_crack(item.pixels, 0.7 * static_cast<double>(width), 1.6, -0.35,
                                      false, rng);
        }
        item.raw_label = "streaked";
        item.label = 0;
        item.id = "src_streaked_" + std::to_string(i);
        dataset.items.push_back(std::move(item));
    }
    for (std::size_t i = 0; i < n_per_class; ++i) {
        Rng rng(derive_seed(seed, (11ull << 32) | i));
        LabeledImage item;
        item.pixels = make_plate(rng);
        const std::size_t scratches = 1 + rng.index(2);
        for (std::size_t s = 0; s < scratches; ++s) {
            synth_detail::stamp_crack(item.pixels, 0.7 * static_cast<double>(width), 1.6, 0.35,
                                      false, rng);
        }
        item.raw_label = "scratched";
        item.label = 1;
        item.id = "src_scratched_" + std::to_string(i);
        dataset.items.push_back(std::move(item));
    }
    return dataset;
}

} // namespace ensemblefit
