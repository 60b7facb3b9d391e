#include "ensemblefit/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace ensemblefit {

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv2D: return "Conv2D";
        case LayerKind::MaxPool2D: return "MaxPool2D";
        case LayerKind::ReLU: return "ReLU";
        case LayerKind::Sigmoid: return "Sigmoid";
        case LayerKind::Flatten: return "Flatten";
        case LayerKind::Dense: return "Dense";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "Conv2D") return LayerKind::Conv2D;
    if (name == "MaxPool2D") return LayerKind::MaxPool2D;
    if (name == "ReLU") return LayerKind::ReLU;
    if (name == "Sigmoid") return LayerKind::Sigmoid;
    if (name == "Flatten") return LayerKind::Flatten;
    if (name == "Dense") return LayerKind::Dense;
    throw std::invalid_argument("unknown layer kind '" + name + "'");
}

void init_uniform_glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.values) v = rng.uniform(-bound, bound);
}

Layer Layer::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel_h,
                    std::size_t kernel_w, std::size_t stride, std::size_t padding, Rng& rng) {
    if (in_ch == 0 || out_ch == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0) {
        throw std::invalid_argument("Conv2D hyperparameters must be positive");
    }
    Layer l;
    l.kind = LayerKind::Conv2D;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.kernel_h = kernel_h;
    l.kernel_w = kernel_w;
    l.stride = stride;
    l.padding = padding;
    l.weights = Tensor({out_ch, in_ch, kernel_h, kernel_w});
    init_uniform_glorot(l.weights, in_ch * kernel_h * kernel_w, out_ch * kernel_h * kernel_w, rng);
    return l;
}

Layer Layer::max_pool2d(std::size_t kernel_h, std::size_t kernel_w) {
    if (kernel_h == 0 || kernel_w == 0) {
        throw std::invalid_argument("MaxPool2D kernel must be positive");
    }
    Layer l;
    l.kind = LayerKind::MaxPool2D;
    l.kernel_h = kernel_h;
    l.kernel_w = kernel_w;
    return l;
}

Layer Layer::relu() {
    Layer l;
    l.kind = LayerKind::ReLU;
    return l;
}

Layer Layer::sigmoid() {
    Layer l;
    l.kind = LayerKind::Sigmoid;
    return l;
}

Layer Layer::flatten() {
    Layer l;
    l.kind = LayerKind::Flatten;
    return l;
}

Layer Layer::dense(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    if (in_dim == 0 || out_dim == 0) {
        throw std::invalid_argument("Dense dimensions must be positive");
    }
    Layer l;
    l.kind = LayerKind::Dense;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    l.weights = Tensor({out_dim, in_dim});
    l.bias = Tensor({out_dim});
    init_uniform_glorot(l.weights, in_dim, out_dim, rng);
    return l;
}

std::size_t Layer::param_count() const {
    return weights.size() + bias.size();
}

std::vector<std::size_t> Layer::output_shape(const std::vector<std::size_t>& in,
                                             std::size_t layer_index) const {
    const std::string where = "layer " + std::to_string(layer_index) + " (" + layer_kind_name(kind) + ")";
    switch (kind) {
        case LayerKind::Conv2D: {
            if (in.size() != 3) {
                throw std::invalid_argument(where + ": expected (c, h, w) input, got " + shape_to_string(in));
            }
            if (in[0] != in_ch) {
                throw std::invalid_argument(where + ": expected " + std::to_string(in_ch) +
                                            " input channels, got " + std::to_string(in[0]));
            }
            const std::size_t padded_h = in[1] + 2 * padding;
            const std::size_t padded_w = in[2] + 2 * padding;
            if (padded_h < kernel_h || padded_w < kernel_w) {
                throw std::invalid_argument(where + ": kernel larger than padded input " + shape_to_string(in));
            }
            return {out_ch, (padded_h - kernel_h) / stride + 1, (padded_w - kernel_w) / stride + 1};
        }
        case LayerKind::MaxPool2D: {
            if (in.size() != 3) {
                throw std::invalid_argument(where + ": expected (c, h, w) input, got " + shape_to_string(in));
            }
            if (in[1] < kernel_h || in[2] < kernel_w) {
                throw std::invalid_argument(where + ": pool window larger than input " + shape_to_string(in));
            }
            return {in[0], in[1] / kernel_h, in[2] / kernel_w};
        }
        case LayerKind::ReLU:
        case LayerKind::Sigmoid:
            return in;
        case LayerKind::Flatten:
            return {shape_product(in)};
        case LayerKind::Dense: {
            if (in.size() != 1) {
                throw std::invalid_argument(where + ": expected flat input, got " + shape_to_string(in));
            }
            if (in[0] != in_dim) {
                throw std::invalid_argument(where + ": expected input dim " + std::to_string(in_dim) +
                                            ", got " + std::to_string(in[0]));
            }
            return {out_dim};
        }
    }
    throw std::logic_error(where + ": unhandled layer kind");
}

std::size_t LayeredModel::trainable_parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers)
        if (l.trainable) n += l.param_count();
    return n;
}

std::size_t LayeredModel::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.param_count();
    return n;
}

std::vector<std::size_t> LayeredModel::validate() const {
    return shape_after(layers.size());
}

std::vector<std::size_t> LayeredModel::shape_after(std::size_t layer_count) const {
    if (input_shape.size() != 3) {
        throw std::invalid_argument("model input_shape must be (c, h, w), got " +
                                    shape_to_string(input_shape));
    }
    std::vector<std::size_t> shape = input_shape;
    for (std::size_t i = 0; i < layer_count && i < layers.size(); ++i) {
        shape = layers[i].output_shape(shape, i);
    }
    return shape;
}

bool models_value_equal(const LayeredModel& a, const LayeredModel& b) {
    if (a.input_shape != b.input_shape || a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const Layer& x = a.layers[i];
        const Layer& y = b.layers[i];
        if (x.kind != y.kind || x.trainable != y.trainable) return false;
        if (x.weights.shape != y.weights.shape || x.weights.values != y.weights.values) return false;
        if (x.bias.shape != y.bias.shape || x.bias.values != y.bias.values) return false;
    }
    return true;
}

} // namespace ensemblefit
