#include "ensemblefit/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace ensemblefit {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> s, double fill)
    : shape(std::move(s)), values(shape_product(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape_product(shape)) {
        throw std::invalid_argument("tensor shape " + shape_to_string(shape) +
                                    " does not match " + std::to_string(values.size()) + " values");
    }
}

double& Tensor::at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return values[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
}

double Tensor::at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return values[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
}

double& Tensor::at2(std::size_t n, std::size_t d) {
    return values[n * shape[1] + d];
}

double Tensor::at2(std::size_t n, std::size_t d) const {
    return values[n * shape[1] + d];
}

void Tensor::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

} // namespace ensemblefit
