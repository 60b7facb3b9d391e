#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ensemblefit/dataset.hpp"
#include "ensemblefit/transfer.hpp"

namespace ensemblefit {

struct ConsistencyCriterion {
    double epsilon = 0.001; // max acceptable |L_val(t+1) - L_val(t)|
    std::size_t window = 3; // consecutive deltas that must satisfy it
};

struct ConsistencyReport {
    std::vector<double> deltas;
    std::optional<std::size_t> first_stable_epoch;
    double empirical_epsilon = 0.0;
    bool reusable = false;
    double train_val_gap = 0.0; // |train - val| loss at the final epoch, diagnostic only
};

// |val_loss[t+1] - val_loss[t]| for every consecutive epoch pair
std::vector<double> successive_deltas(const TrainingHistory& history);

// smallest t with deltas[t .. t+window-1] all <= epsilon
std::optional<std::size_t> first_stable_epoch(const TrainingHistory& history,
                                              const ConsistencyCriterion& criterion);

// max of the last `tail` deltas — the finite stand-in for the paper's
// long-run stability limit
double empirical_epsilon(const TrainingHistory& history, std::size_t tail);

// last 25% of the epochs' deltas, at least 3, clamped to what exists
std::size_t default_tail(std::size_t epochs);

ConsistencyReport assess_consistency(const TrainingHistory& history,
                                     const ConsistencyCriterion& criterion, std::size_t tail);

struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;

    std::size_t total() const { return tp + fp + fn + tn; }
};

struct MetricsReport {
    ConfusionMatrix confusion;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_undefined = false; // 0/0 reported as 0 with the flag set
    bool recall_undefined = false;
    bool f1_undefined = false;
};

MetricsReport compute_metrics(const std::vector<double>& probabilities,
                              const std::vector<int>& labels, double threshold);

struct ConfidenceRow {
    std::string item_id;
    double probability = 0.0;
    int predicted = 0;
    int truth = 0;
};

using Predictor = std::function<double(const Tensor&)>; // (c,h,w) image -> probability

std::vector<ConfidenceRow> batch_confidence(const Predictor& predictor, const Dataset& batch,
                                            double threshold);
void save_confidence_csv(const std::vector<ConfidenceRow>& rows, const std::string& path);

struct CorrelationMatrix {
    std::size_t size = 0;
    std::vector<double> values; // row-major size x size
    std::vector<bool> constant_channel;

    double at(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

// Pearson correlation between the flattened spatial maps of a conv
// layer's output channels; constant channels correlate as 0 and are
// flagged
CorrelationMatrix feature_correlation(const LayeredModel& model, const Tensor& image,
                                      std::size_t layer_index);

// last conv layer — the default feature-extraction point
std::size_t last_conv_layer(const LayeredModel& model);

void export_curves(const TrainingHistory& history, const std::string& path);

// 8-bit PGM; [-1, 1] maps linearly onto [0, 255] (0 lands on 127)
void render_heatmap(const CorrelationMatrix& matrix, const std::string& path);

} // namespace ensemblefit
