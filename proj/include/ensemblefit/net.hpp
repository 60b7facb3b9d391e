#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "ensemblefit/layers.hpp"
#include "ensemblefit/tensor.hpp"

namespace ensemblefit {

// Per-evaluation activation cache: inputs[i] is the tensor fed to layer i.
// Owned by the caller so the model itself stays immutable during passes.
struct ActivationTrace {
    std::vector<Tensor> inputs;
    Tensor output;
    bool valid = false;
};

struct LayerGrads {
    Tensor weights;
    Tensor bias;
};

// keyed by layer index; only trainable layers get entries
using GradientSet = std::map<std::size_t, LayerGrads>;

Tensor forward(const LayeredModel& model, const Tensor& batch);
Tensor forward(const LayeredModel& model, const Tensor& batch, ActivationTrace& trace);

// Pre-sigmoid output of a sigmoid-headed model (the member logit used by
// the weighted ensemble combination).
Tensor forward_logit(const LayeredModel& model, const Tensor& batch);

GradientSet backward(const LayeredModel& model, const ActivationTrace& trace, const Tensor& loss_grad);

void sgd_step(LayeredModel& model, const GradientSet& grads, double lr);

struct SgdSchedule {
    double initial_lr = 0.003;
    double decay = 0.9;

    double lr_at(std::size_t epoch) const;
};

struct BceResult {
    double loss = 0.0;
    Tensor grad; // d(mean loss)/d(pred), same shape as pred
};

// mean over all elements of -[y ln p + (1-y) ln(1-p)], p clamped to
// [kBceClamp, 1 - kBceClamp] before the logs
inline constexpr double kBceClamp = 1e-7;
BceResult bce_loss(const Tensor& pred, const Tensor& target);

// Central-difference estimate of d(mean BCE)/d(param) for every trainable
// parameter. Independent of backward(); kept as the gradient oracle.
GradientSet finite_difference_grads(LayeredModel model, const Tensor& batch,
                                    const Tensor& targets, double h);

} // namespace ensemblefit
