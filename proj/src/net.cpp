#include "ensemblefit/net.hpp"

#include <cmath>
#include <stdexcept>

namespace ensemblefit {

namespace {

// sigmoid kept strictly inside (0,1) so BCE logs never see a hard 0 or 1
constexpr double kSigmoidClamp = 1e-15;

double sigmoid(double x) {
    double s = 1.0 / (1.0 + std::exp(-x));
    if (s < kSigmoidClamp) s = kSigmoidClamp;
    if (s > 1.0 - kSigmoidClamp) s = 1.0 - kSigmoidClamp;
    return s;
}

Tensor conv2d_forward(const Layer& l, const Tensor& x) {
    const std::size_t n = x.shape[0], h = x.shape[2], w = x.shape[3];
    const std::size_t oh = (h + 2 * l.padding - l.kernel_h) / l.stride + 1;
    const std::size_t ow = (w + 2 * l.padding - l.kernel_w) / l.stride + 1;
    Tensor y({n, l.out_ch, oh, ow});
    const auto pad = static_cast<std::ptrdiff_t>(l.padding);
    const auto stride = static_cast<std::ptrdiff_t>(l.stride);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
            double* yrow0 = &y.values[((b * l.out_ch + oc) * oh) * ow];
            for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
                const double* xplane = &x.values[((b * l.in_ch + ic) * h) * w];
                const double* wplane = &l.weights.values[((oc * l.in_ch + ic) * l.kernel_h) * l.kernel_w];
                for (std::size_t ky = 0; ky < l.kernel_h; ++ky) {
                    for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
                        const double wv = wplane[ky * l.kernel_w + kx];
                        if (wv == 0.0) continue;
                        const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
                        const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + dy;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            double* yrow = yrow0 + oy * ow;
                            const double* xrow = xplane + iy * w;
                            // clip ox so that ix = ox*stride+dx stays in [0, w)
                            std::size_t ox0 = 0;
                            if (dx < 0) {
                                ox0 = static_cast<std::size_t>((-dx + stride - 1) / stride);
                            }
                            for (std::size_t ox = ox0; ox < ow; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + dx;
                                if (ix >= static_cast<std::ptrdiff_t>(w)) break;
                                yrow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

void conv2d_backward(const Layer& l, const Tensor& x, const Tensor& gy,
                     Tensor* gw, Tensor* gx) {
    const std::size_t n = x.shape[0], h = x.shape[2], w = x.shape[3];
    const std::size_t oh = gy.shape[2], ow = gy.shape[3];
    const auto pad = static_cast<std::ptrdiff_t>(l.padding);
    const auto stride = static_cast<std::ptrdiff_t>(l.stride);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
            const double* grow0 = &gy.values[((b * l.out_ch + oc) * oh) * ow];
            for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
                const double* xplane = &x.values[((b * l.in_ch + ic) * h) * w];
                const double* wplane =
                    &l.weights.values[((oc * l.in_ch + ic) * l.kernel_h) * l.kernel_w];
                double* gwplane =
                    gw ? &gw->values[((oc * l.in_ch + ic) * l.kernel_h) * l.kernel_w] : nullptr;
                double* gxplane = gx ? &gx->values[((b * l.in_ch + ic) * h) * w] : nullptr;
                for (std::size_t ky = 0; ky < l.kernel_h; ++ky) {
                    for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
                        const double wv = wplane[ky * l.kernel_w + kx];
                        const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
                        const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
                        double wacc = 0.0;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + dy;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            const double* grow = grow0 + oy * ow;
                            const double* xrow = xplane + iy * w;
                            double* gxrow = gxplane ? gxplane + iy * w : nullptr;
                            std::size_t ox0 = 0;
                            if (dx < 0) {
                                ox0 = static_cast<std::size_t>((-dx + stride - 1) / stride);
                            }
                            for (std::size_t ox = ox0; ox < ow; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + dx;
                                if (ix >= static_cast<std::ptrdiff_t>(w)) break;
                                const double g = grow[ox];
                                wacc += g * xrow[ix];
                                if (gxrow) gxrow[ix] += g * wv;
                            }
                        }
                        if (gwplane) gwplane[ky * l.kernel_w + kx] += wacc;
                    }
                }
            }
        }
    }
}

Tensor max_pool_forward(const Layer& l, const Tensor& x) {
    const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::size_t oh = h / l.kernel_h, ow = w / l.kernel_w;
    Tensor y({n, c, oh, ow});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double best = x.at4(b, ch, oy * l.kernel_h, ox * l.kernel_w);
                    for (std::size_t ky = 0; ky < l.kernel_h; ++ky)
                        for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
                            const double v = x.at4(b, ch, oy * l.kernel_h + ky, ox * l.kernel_w + kx);
                            if (v > best) best = v;
                        }
                    y.at4(b, ch, oy, ox) = best;
                }
    return y;
}

void max_pool_backward(const Layer& l, const Tensor& x, const Tensor& gy, Tensor& gx) {
    const std::size_t n = x.shape[0], c = x.shape[1];
    const std::size_t oh = gy.shape[2], ow = gy.shape[3];
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    // gradient routes to the first maximum in scan order
                    std::size_t by = oy * l.kernel_h, bx = ox * l.kernel_w;
                    double best = x.at4(b, ch, by, bx);
                    for (std::size_t ky = 0; ky < l.kernel_h; ++ky)
                        for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
                            const double v = x.at4(b, ch, oy * l.kernel_h + ky, ox * l.kernel_w + kx);
                            if (v > best) {
                                best = v;
                                by = oy * l.kernel_h + ky;
                                bx = ox * l.kernel_w + kx;
                            }
                        }
                    gx.at4(b, ch, by, bx) += gy.at4(b, ch, oy, ox);
                }
}

Tensor dense_forward(const Layer& l, const Tensor& x) {
    const std::size_t n = x.shape[0];
    Tensor y({n, l.out_dim});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < l.out_dim; ++o) {
            double acc = l.bias.at(o);
            const double* wrow = &l.weights.values[o * l.in_dim];
            const double* xrow = &x.values[b * l.in_dim];
            for (std::size_t i = 0; i < l.in_dim; ++i) acc += wrow[i] * xrow[i];
            y.at2(b, o) = acc;
        }
    return y;
}

void dense_backward(const Layer& l, const Tensor& x, const Tensor& gy,
                    Tensor* gw, Tensor* gb, Tensor* gx) {
    const std::size_t n = x.shape[0];
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < l.out_dim; ++o) {
            const double g = gy.at2(b, o);
            if (gb) gb->at(o) += g;
            const double* wrow = &l.weights.values[o * l.in_dim];
            const double* xrow = &x.values[b * l.in_dim];
            if (gw) {
                double* gwrow = &gw->values[o * l.in_dim];
                for (std::size_t i = 0; i < l.in_dim; ++i) gwrow[i] += g * xrow[i];
            }
            if (gx) {
                double* gxrow = &gx->values[b * l.in_dim];
                for (std::size_t i = 0; i < l.in_dim; ++i) gxrow[i] += g * wrow[i];
            }
        }
}

Tensor layer_forward(const Layer& l, const Tensor& x, std::size_t index) {
    switch (l.kind) {
        case LayerKind::Conv2D: {
            if (x.rank() != 4 || x.shape[1] != l.in_ch) {
                throw std::invalid_argument("layer " + std::to_string(index) +
                                            " (Conv2D): input shape " + x.shape_str() +
                                            " does not match " + std::to_string(l.in_ch) + " channels");
            }
            l.output_shape({x.shape[1], x.shape[2], x.shape[3]}, index);
            return conv2d_forward(l, x);
        }
        case LayerKind::MaxPool2D: {
            if (x.rank() != 4) {
                throw std::invalid_argument("layer " + std::to_string(index) +
                                            " (MaxPool2D): expected rank-4 input, got " + x.shape_str());
            }
            l.output_shape({x.shape[1], x.shape[2], x.shape[3]}, index);
            return max_pool_forward(l, x);
        }
        case LayerKind::ReLU: {
            Tensor y = x;
            for (double& v : y.values)
                if (v < 0.0) v = 0.0;
            return y;
        }
        case LayerKind::Sigmoid: {
            Tensor y = x;
            for (double& v : y.values) v = sigmoid(v);
            return y;
        }
        case LayerKind::Flatten: {
            Tensor y = x;
            std::size_t flat = 1;
            for (std::size_t i = 1; i < x.shape.size(); ++i) flat *= x.shape[i];
            y.shape = {x.shape[0], flat};
            return y;
        }
        case LayerKind::Dense: {
            if (x.rank() != 2 || x.shape[1] != l.in_dim) {
                throw std::invalid_argument("layer " + std::to_string(index) +
                                            " (Dense): input shape " + x.shape_str() +
                                            " does not match input dim " + std::to_string(l.in_dim));
            }
            return dense_forward(l, x);
        }
    }
    throw std::logic_error("unhandled layer kind");
}

void check_batch_shape(const LayeredModel& model, const Tensor& batch) {
    if (batch.rank() != 4 || batch.shape[1] != model.input_shape[0] ||
        batch.shape[2] != model.input_shape[1] || batch.shape[3] != model.input_shape[2]) {
        throw std::invalid_argument("batch shape " + batch.shape_str() +
                                    " does not match model input " +
                                    shape_to_string(model.input_shape));
    }
}

} // namespace

Tensor forward(const LayeredModel& model, const Tensor& batch) {
    check_batch_shape(model, batch);
    Tensor x = batch;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        x = layer_forward(model.layers[i], x, i);
    }
    return x;
}

Tensor forward(const LayeredModel& model, const Tensor& batch, ActivationTrace& trace) {
    check_batch_shape(model, batch);
    trace.inputs.clear();
    trace.inputs.reserve(model.layers.size());
    Tensor x = batch;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        trace.inputs.push_back(x);
        x = layer_forward(model.layers[i], x, i);
    }
    trace.output = x;
    trace.valid = true;
    return trace.output;
}

Tensor forward_logit(const LayeredModel& model, const Tensor& batch) {
    if (model.layers.empty() || model.layers.back().kind != LayerKind::Sigmoid) {
        throw std::invalid_argument("forward_logit requires a sigmoid-headed model");
    }
    check_batch_shape(model, batch);
    Tensor x = batch;
    for (std::size_t i = 0; i + 1 < model.layers.size(); ++i) {
        x = layer_forward(model.layers[i], x, i);
    }
    return x;
}

GradientSet backward(const LayeredModel& model, const ActivationTrace& trace,
                     const Tensor& loss_grad) {
    if (!trace.valid || trace.inputs.size() != model.layers.size()) {
        throw std::logic_error("backward called without a matching forward pass");
    }
    if (!loss_grad.same_shape(trace.output)) {
        throw std::invalid_argument("loss gradient shape " + loss_grad.shape_str() +
                                    " does not match output " + trace.output.shape_str());
    }
    GradientSet grads;
    // nothing below the lowest trainable parameterized layer needs a gradient
    std::size_t lowest = model.layers.size();
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].trainable && model.layers[i].has_params()) {
            lowest = i;
            break;
        }
    }
    if (lowest == model.layers.size()) return grads;

    Tensor g = loss_grad;
    for (std::size_t idx = model.layers.size(); idx-- > lowest;) {
        const Layer& l = model.layers[idx];
        const Tensor& x = trace.inputs[idx];
        const bool need_gx = idx > lowest;
        switch (l.kind) {
            case LayerKind::Conv2D: {
                const bool need_gw = l.trainable;
                Tensor gw = need_gw ? Tensor(l.weights.shape) : Tensor{};
                Tensor gx = need_gx ? Tensor(x.shape) : Tensor{};
                conv2d_backward(l, x, g, need_gw ? &gw : nullptr, need_gx ? &gx : nullptr);
                if (l.trainable) grads[idx] = LayerGrads{std::move(gw), Tensor{}};
                g = std::move(gx);
                break;
            }
            case LayerKind::MaxPool2D: {
                Tensor gx(x.shape);
                max_pool_backward(l, x, g, gx);
                g = std::move(gx);
                break;
            }
            case LayerKind::ReLU: {
                Tensor gx = g;
                for (std::size_t i = 0; i < gx.values.size(); ++i)
                    if (x.values[i] <= 0.0) gx.values[i] = 0.0;
                g = std::move(gx);
                break;
            }
            case LayerKind::Sigmoid: {
                Tensor gx = g;
                for (std::size_t i = 0; i < gx.values.size(); ++i) {
                    const double s = sigmoid(x.values[i]);
                    gx.values[i] *= s * (1.0 - s);
                }
                g = std::move(gx);
                break;
            }
            case LayerKind::Flatten: {
                Tensor gx = g;
                gx.shape = x.shape;
                g = std::move(gx);
                break;
            }
            case LayerKind::Dense: {
                const bool need_gw = l.trainable;
                Tensor gw = need_gw ? Tensor(l.weights.shape) : Tensor{};
                Tensor gb = need_gw ? Tensor(l.bias.shape) : Tensor{};
                Tensor gx = need_gx ? Tensor(x.shape) : Tensor{};
                dense_backward(l, x, g, need_gw ? &gw : nullptr, need_gw ? &gb : nullptr,
                               need_gx ? &gx : nullptr);
                if (l.trainable) grads[idx] = LayerGrads{std::move(gw), std::move(gb)};
                g = std::move(gx);
                break;
            }
        }
    }
    return grads;
}

void sgd_step(LayeredModel& model, const GradientSet& grads, double lr) {
    for (const auto& [idx, lg] : grads) {
        if (idx >= model.layers.size()) {
            throw std::invalid_argument("gradient for layer " + std::to_string(idx) +
                                        " out of range");
        }
        Layer& l = model.layers[idx];
        if (!l.trainable) {
            throw std::invalid_argument("gradient supplied for frozen layer " + std::to_string(idx));
        }
        if (lg.weights.shape != l.weights.shape || lg.bias.shape != l.bias.shape) {
            throw std::invalid_argument("gradient shape mismatch at layer " + std::to_string(idx));
        }
        for (std::size_t i = 0; i < l.weights.values.size(); ++i)
            l.weights.values[i] -= lr * lg.weights.values[i];
        for (std::size_t i = 0; i < l.bias.values.size(); ++i)
            l.bias.values[i] -= lr * lg.bias.values[i];
    }
}

double SgdSchedule::lr_at(std::size_t epoch) const {
    return initial_lr * std::pow(decay, static_cast<double>(epoch));
}

BceResult bce_loss(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) {
        throw std::invalid_argument("bce_loss: prediction shape " + pred.shape_str() +
                                    " does not match target " + target.shape_str());
    }
    if (pred.size() == 0) {
        throw std::invalid_argument("bce_loss: empty tensors");
    }
    const double n = static_cast<double>(pred.size());
    BceResult r;
    r.grad = Tensor(pred.shape);
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double p = pred.values[i];
        if (p < kBceClamp) p = kBceClamp;
        if (p > 1.0 - kBceClamp) p = 1.0 - kBceClamp;
        const double y = target.values[i];
        total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        r.grad.values[i] = (-y / p + (1.0 - y) / (1.0 - p)) / n;
    }
    r.loss = total / n;
    return r;
}

GradientSet finite_difference_grads(LayeredModel model, const Tensor& batch,
                                    const Tensor& targets, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite difference step must be positive");
    auto loss_of = [&]() {
        const Tensor out = forward(model, batch);
        return bce_loss(out, targets).loss;
    };
    GradientSet grads;
    for (std::size_t idx = 0; idx < model.layers.size(); ++idx) {
        Layer& l = model.layers[idx];
        if (!l.trainable || !l.has_params()) continue;
        LayerGrads lg;
        lg.weights = Tensor(l.weights.shape);
        lg.bias = Tensor(l.bias.shape);
        for (std::size_t i = 0; i < l.weights.values.size(); ++i) {
            const double saved = l.weights.values[i];
            l.weights.values[i] = saved + h;
            const double up = loss_of();
            l.weights.values[i] = saved - h;
            const double down = loss_of();
            l.weights.values[i] = saved;
            lg.weights.values[i] = (up - down) / (2.0 * h);
        }
        for (std::size_t i = 0; i < l.bias.values.size(); ++i) {
            const double saved = l.bias.values[i];
            l.bias.values[i] = saved + h;
            const double up = loss_of();
            l.bias.values[i] = saved - h;
            const double down = loss_of();
            l.bias.values[i] = saved;
            lg.bias.values[i] = (up - down) / (2.0 * h);
        }
        grads[idx] = std::move(lg);
    }
    return grads;
}

} // namespace ensemblefit
