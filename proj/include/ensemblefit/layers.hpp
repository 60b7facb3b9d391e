#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ensemblefit/rng.hpp"
#include "ensemblefit/tensor.hpp"

namespace ensemblefit {

enum class LayerKind { Conv2D, MaxPool2D, ReLU, Sigmoid, Flatten, Dense };

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

// One layer of a LayeredModel. Only Conv2D and Dense carry parameters:
// Conv2D holds a single kernel tensor (out_ch, in_ch, kernel_h, kernel_w),
// Dense holds weights (out_dim, in_dim) plus a bias (out_dim).
struct Layer {
    LayerKind kind = LayerKind::ReLU;

    // Conv2D / MaxPool2D hyperparameters (pool uses kernel_h/kernel_w only)
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;

    // Dense hyperparameters
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;

    Tensor weights;
    Tensor bias;
    bool trainable = true;

    static Layer conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel_h,
                        std::size_t kernel_w, std::size_t stride, std::size_t padding, Rng& rng);
    static Layer max_pool2d(std::size_t kernel_h, std::size_t kernel_w);
    static Layer relu();
    static Layer sigmoid();
    static Layer flatten();
    static Layer dense(std::size_t in_dim, std::size_t out_dim, Rng& rng);

    bool has_params() const { return kind == LayerKind::Conv2D || kind == LayerKind::Dense; }
    std::size_t param_count() const;

    // output shape (without batch dim) for a given input shape; throws a
    // descriptive error naming the layer when the input does not fit
    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in,
                                          std::size_t layer_index) const;
};

// Glorot-uniform fill: U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))
void init_uniform_glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Ordered layer stack plus the (channels, height, width) it expects.
struct LayeredModel {
    std::vector<Layer> layers;
    std::vector<std::size_t> input_shape; // {c, h, w}

    std::size_t trainable_parameter_count() const;
    std::size_t parameter_count() const;

    // walks the stack and throws on the first incompatible layer
    std::vector<std::size_t> validate() const;
    std::vector<std::size_t> shape_after(std::size_t layer_count) const;
};

bool models_value_equal(const LayeredModel& a, const LayeredModel& b);

} // namespace ensemblefit
