#include "ensemblefit/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ensemblefit {

std::vector<double> successive_deltas(const TrainingHistory& history) {
    if (history.epochs() < 2) {
        throw std::invalid_argument("successive_deltas: at least 2 epochs required");
    }
    std::vector<double> deltas(history.epochs() - 1);
    for (std::size_t t = 0; t + 1 < history.epochs(); ++t) {
        deltas[t] = std::abs(history.val_loss[t + 1] - history.val_loss[t]);
    }
    return deltas;
}

std::optional<std::size_t> first_stable_epoch(const TrainingHistory& history,
                                              const ConsistencyCriterion& criterion) {
    if (criterion.window == 0) throw std::invalid_argument("first_stable_epoch: window must be >= 1");
    if (history.epochs() < criterion.window + 1) {
        throw std::invalid_argument("first_stable_epoch: need at least window+1 epochs");
    }
    const std::vector<double> deltas = successive_deltas(history);
    for (std::size_t t = 0; t + criterion.window <= deltas.size(); ++t) {
        bool ok = true;
        for (std::size_t k = 0; k < criterion.window; ++k) {
            if (deltas[t + k] > criterion.epsilon) {
                ok = false;
                break;
            }
        }
        if (ok) return t;
    }
    return std::nullopt;
}

double empirical_epsilon(const TrainingHistory& history, std::size_t tail) {
    const std::vector<double> deltas = successive_deltas(history);
    if (tail == 0 || tail > deltas.size()) {
        throw std::invalid_argument("empirical_epsilon: tail must be in [1, epochs-1]");
    }
    double worst = 0.0;
    for (std::size_t t = deltas.size() - tail; t < deltas.size(); ++t) {
        worst = std::max(worst, deltas[t]);
    }
    return worst;
}

std::size_t default_tail(std::size_t epochs) {
    if (epochs < 2) throw std::invalid_argument("default_tail: need at least 2 epochs");
    const std::size_t quarter = epochs / 4;
    return std::min(std::max<std::size_t>(quarter, 3), epochs - 1);
}

ConsistencyReport assess_consistency(const TrainingHistory& history,
                                     const ConsistencyCriterion& criterion, std::size_t tail) {
    ConsistencyReport report;
    report.deltas = successive_deltas(history);
    if (history.epochs() >= criterion.window + 1) {
        report.first_stable_epoch = first_stable_epoch(history, criterion);
    }
    report.empirical_epsilon = empirical_epsilon(history, tail);
    report.reusable = report.empirical_epsilon <= criterion.epsilon;
    report.train_val_gap = std::abs(history.train_loss.back() - history.val_loss.back());
    return report;
}

MetricsReport compute_metrics(const std::vector<double>& probabilities,
                              const std::vector<int>& labels, double threshold) {
    if (probabilities.empty()) throw std::invalid_argument("compute_metrics: empty input");
    if (probabilities.size() != labels.size()) {
        throw std::invalid_argument("compute_metrics: probabilities and labels differ in length");
    }
    MetricsReport report;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        const int predicted = probabilities[i] >= threshold ? 1 : 0;
        if (labels[i] != 0 && labels[i] != 1) {
            throw std::invalid_argument("compute_metrics: labels must be binary");
        }
        if (predicted == 1 && labels[i] == 1) ++report.confusion.tp;
        else if (predicted == 1 && labels[i] == 0) ++report.confusion.fp;
        else if (predicted == 0 && labels[i] == 1) ++report.confusion.fn;
        else ++report.confusion.tn;
    }
    const ConfusionMatrix& c = report.confusion;
    report.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    if (c.tp + c.fp == 0) {
        report.precision = 0.0;
        report.precision_undefined = true;
    } else {
        report.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    }
    if (c.tp + c.fn == 0) {
        report.recall = 0.0;
        report.recall_undefined = true;
    } else {
        report.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    }
    if (report.precision + report.recall == 0.0) {
        report.f1 = 0.0;
        report.f1_undefined = true;
    } else {
        report.f1 = 2.0 * report.precision * report.recall / (report.precision + report.recall);
    }
    return report;
}

std::vector<ConfidenceRow> batch_confidence(const Predictor& predictor, const Dataset& batch,
                                            double threshold) {
    if (batch.empty()) throw std::invalid_argument("batch_confidence: empty batch");
    std::vector<ConfidenceRow> rows;
    rows.reserve(batch.size());
    for (const LabeledImage& item : batch.items) {
        ConfidenceRow row;
        row.item_id = item.id;
        row.probability = predictor(image_to_tensor(item.pixels));
        row.predicted = row.probability >= threshold ? 1 : 0;
        row.truth = item.label;
        rows.push_back(std::move(row));
    }
    return rows;
}

void save_confidence_csv(const std::vector<ConfidenceRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write confidence file '" + path + "'");
    out << "item_id,probability,predicted,true\n";
    char buf[64];
    for (const ConfidenceRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "%.10g", row.probability);
        out << row.item_id << "," << buf << "," << row.predicted << "," << row.truth << "\n";
    }
    if (!out) throw std::runtime_error("failed writing confidence file '" + path + "'");
}

std::size_t last_conv_layer(const LayeredModel& model) {
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        if (model.layers[i].kind == LayerKind::Conv2D) return i;
    }
    throw std::invalid_argument("model has no conv layer");
}

CorrelationMatrix feature_correlation(const LayeredModel& model, const Tensor& image,
                                      std::size_t layer_index) {
    if (layer_index >= model.layers.size() ||
        model.layers[layer_index].kind != LayerKind::Conv2D) {
        throw std::invalid_argument("feature_correlation: layer " + std::to_string(layer_index) +
                                    " is not a conv layer");
    }
    if (image.rank() != 3) {
        throw std::invalid_argument("feature_correlation: expected a (c, h, w) image tensor");
    }
    Tensor batch = image;
    batch.shape = {1, image.shape[0], image.shape[1], image.shape[2]};

    ActivationTrace trace;
    forward(model, batch, trace);
    const Tensor& activation =
        layer_index + 1 < trace.inputs.size() ? trace.inputs[layer_index + 1] : trace.output;

    const std::size_t channels = activation.shape[1];
    const std::size_t spatial = activation.shape[2] * activation.shape[3];
    CorrelationMatrix corr;
    corr.size = channels;
    corr.values.assign(channels * channels, 0.0);
    corr.constant_channel.assign(channels, false);

    std::vector<double> mean(channels, 0.0);
    std::vector<double> sd(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        const double* v = &activation.values[c * spatial];
        double m = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) m += v[i];
        m /= static_cast<double>(spatial);
        double var = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) var += (v[i] - m) * (v[i] - m);
        mean[c] = m;
        sd[c] = std::sqrt(var);
        if (sd[c] == 0.0) corr.constant_channel[c] = true;
    }
    for (std::size_t a = 0; a < channels; ++a) {
        for (std::size_t b = a; b < channels; ++b) {
            double value = 0.0;
            if (!corr.constant_channel[a] && !corr.constant_channel[b]) {
                const double* va = &activation.values[a * spatial];
                const double* vb = &activation.values[b * spatial];
                double cov = 0.0;
                for (std::size_t i = 0; i < spatial; ++i) {
                    cov += (va[i] - mean[a]) * (vb[i] - mean[b]);
                }
                value = cov / (sd[a] * sd[b]);
                value = std::clamp(value, -1.0, 1.0);
            }
            corr.values[a * channels + b] = value;
            corr.values[b * channels + a] = value;
        }
    }
    return corr;
}

void export_curves(const TrainingHistory& history, const std::string& path) {
    save_history_csv(history, path);
}

void render_heatmap(const CorrelationMatrix& matrix, const std::string& path) {
    if (matrix.size == 0) throw std::invalid_argument("render_heatmap: empty matrix");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write heatmap '" + path + "'");
    out << "P5\n" << matrix.size << " " << matrix.size << "\n255\n";
    std::vector<unsigned char> raw(matrix.values.size());
    for (std::size_t i = 0; i < matrix.values.size(); ++i) {
        const double v = std::clamp(matrix.values[i], -1.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::clamp(std::floor((v + 1.0) * 127.5), 0.0, 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("failed writing heatmap '" + path + "'");
}

} // namespace ensemblefit
