#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ensemblefit {

// Flat n-dimensional array of doubles with an optional gradient slot.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad; // empty unless someone attached gradients

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, double fill = 0.0);
    Tensor(std::vector<std::size_t> s, std::vector<double> v);

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    bool has_grad() const { return !grad.empty(); }

    double& at(std::size_t i) { return values[i]; }
    double at(std::size_t i) const { return values[i]; }

    // rank-4 (n, c, h, w) accessors used by the conv/pool kernels
    double& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    double at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    // rank-2 (n, d)
    double& at2(std::size_t n, std::size_t d);
    double at2(std::size_t n, std::size_t d) const;

    void ensure_grad(); // allocates a zeroed grad slot of matching length

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

} // namespace ensemblefit
