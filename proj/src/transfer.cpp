#include "ensemblefit/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ensemblefit {

namespace {

Tensor batch_from_items(const Dataset& dataset, const std::vector<std::size_t>& indices,
                        std::size_t begin, std::size_t end) {
    const Image& first = dataset.items[indices[begin]].pixels;
    Tensor batch({end - begin, first.channels, first.height, first.width});
    std::size_t offset = 0;
    const std::size_t per_item = first.channels * first.height * first.width;
    for (std::size_t i = begin; i < end; ++i) {
        const Tensor t = image_to_tensor(dataset.items[indices[i]].pixels);
        if (t.size() != per_item) {
            throw std::invalid_argument("dataset images have inconsistent shapes");
        }
        std::copy(t.values.begin(), t.values.end(), batch.values.begin() + offset);
        offset += per_item;
    }
    return batch;
}

Tensor targets_from_items(const Dataset& dataset, const std::vector<std::size_t>& indices,
                          std::size_t begin, std::size_t end, std::size_t units) {
    Tensor t({end - begin, units});
    for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t u = 0; u < units; ++u) {
            t.at2(i - begin, u) = static_cast<double>(dataset.items[indices[i]].label);
        }
    }
    return t;
}

std::size_t last_dense_index(const LayeredModel& model) {
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        if (model.layers[i].kind == LayerKind::Dense) return i;
    }
    throw std::invalid_argument("model has no dense head");
}

} // namespace

EvalStats evaluate(const LayeredModel& model, const Dataset& dataset, double threshold) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::vector<std::size_t> indices(dataset.size());
    std::iota(indices.begin(), indices.end(), 0);

    const std::size_t chunk = 64;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t total_outputs = 0;
    for (std::size_t begin = 0; begin < indices.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, indices.size());
        const Tensor batch = batch_from_items(dataset, indices, begin, end);
        const Tensor out = forward(model, batch);
        const std::size_t units = out.shape[1];
        total_outputs += (end - begin) * units;
        for (std::size_t i = begin; i < end; ++i) {
            const double y = static_cast<double>(dataset.items[indices[i]].label);
            for (std::size_t u = 0; u < units; ++u) {
                double p = out.at2(i - begin, u);
                p = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
                loss_sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
                if ((p >= threshold ? 1.0 : 0.0) == y) ++correct;
            }
        }
    }
    EvalStats stats;
    stats.loss = loss_sum / static_cast<double>(total_outputs);
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(total_outputs);
    return stats;
}

LayeredModel build_backbone(const BackboneSpec& spec, const std::vector<std::size_t>& input_shape,
                            std::size_t head_units, std::uint64_t seed) {
    if (input_shape.size() != 3) {
        throw std::invalid_argument("build_backbone: input shape must be (c, h, w)");
    }
    if (spec.stages.empty()) throw std::invalid_argument("build_backbone: no conv stages");
    Rng rng(seed);
    LayeredModel model;
    model.input_shape = input_shape;
    std::size_t channels = input_shape[0];
    for (const ConvStageSpec& stage : spec.stages) {
        model.layers.push_back(Layer::conv2d(channels, stage.out_ch, stage.kernel, stage.kernel,
                                             stage.stride, stage.padding, rng));
        if (stage.activation == LayerKind::Sigmoid) {
            model.layers.push_back(Layer::sigmoid());
        } else {
            model.layers.push_back(Layer::relu());
        }
        if (stage.pool) model.layers.push_back(Layer::max_pool2d(2, 2));
        channels = stage.out_ch;
    }
    model.layers.push_back(Layer::flatten());
    std::vector<std::size_t> flat = model.shape_after(model.layers.size());
    if (spec.hidden_dense > 0) {
        model.layers.push_back(Layer::dense(flat[0], spec.hidden_dense, rng));
        model.layers.push_back(Layer::relu());
        flat = {spec.hidden_dense};
    }
    model.layers.push_back(Layer::dense(flat[0], head_units, rng));
    model.layers.push_back(Layer::sigmoid());
    model.validate();
    return model;
}

std::vector<BackboneSpec> default_backbones() {
    BackboneSpec small{"small", {{8, 3, 1, 1, true}, {16, 3, 1, 1, true}}, 16};
    BackboneSpec medium{"medium", {{6, 3, 1, 1, true}, {12, 3, 1, 1, true}, {24, 3, 1, 1, true}}, 24};
    BackboneSpec wide{"wide", {{12, 5, 1, 2, true}, {20, 3, 1, 1, true}}, 32};
    return {small, medium, wide};
}

PretrainedModel pretrain_backbone(const Dataset& source_dataset, const BackboneSpec& spec,
                                  const FineTuneConfig& config, const std::string& source_task_id) {
    if (source_dataset.empty()) throw std::invalid_argument("pretrain_backbone: empty dataset");
    if (source_dataset.class_counts().size() < 2) {
        throw std::invalid_argument("pretrain_backbone: source task needs at least 2 classes");
    }
    const Image& first = source_dataset.items.front().pixels;
    LayeredModel model =
        build_backbone(spec, {first.channels, first.height, first.width}, 1, config.seed);

    FineTuneConfig pretrain_cfg = config;
    pretrain_cfg.freeze_range = {0, 0}; // every layer trains during pretraining
    pretrain_cfg.augment.reset();
    FineTuneResult result = finetune(model, source_dataset, source_dataset, pretrain_cfg);

    PretrainedModel out;
    out.model = std::move(result.model);
    out.source_meta.source_task_id = source_task_id;
    out.source_meta.epochs = config.epochs;
    out.source_meta.final_train_acc = result.history.train_acc.back();
    return out;
}

LayeredModel graft_head(const PretrainedModel& pretrained,
                        const std::vector<std::size_t>& new_input_shape, const HeadSpec& head,
                        std::uint64_t seed) {
    const LayeredModel& src = pretrained.model;
    if (src.layers.empty()) throw std::invalid_argument("graft_head: empty pretrained model");
    if (new_input_shape.size() != 3) {
        throw std::invalid_argument("graft_head: new input shape must be (c, h, w)");
    }
    if (head.units == 0) throw std::invalid_argument("graft_head: head units must be positive");
    if (src.layers.front().kind != LayerKind::Conv2D) {
        throw std::invalid_argument("graft_head: pretrained model must start with Conv2D");
    }
    const std::size_t head_start = last_dense_index(src);

    Rng rng(derive_seed(seed, 0x6841ull));
    LayeredModel out;
    out.input_shape = new_input_shape;

    // fresh input conv adapted to the new channel count, same geometry
    const Layer& old_in = src.layers.front();
    out.layers.push_back(Layer::conv2d(new_input_shape[0], old_in.out_ch, old_in.kernel_h,
                                       old_in.kernel_w, old_in.stride, old_in.padding, rng));

    // middle layers carry their pretrained values verbatim
    for (std::size_t i = 1; i < head_start; ++i) out.layers.push_back(src.layers[i]);

    const std::vector<std::size_t> flat = out.shape_after(out.layers.size());
    if (flat.size() != 1) {
        throw std::invalid_argument("graft_head: middle stack does not end flat; got shape " +
                                    shape_to_string(flat));
    }
    out.layers.push_back(Layer::dense(flat[0], head.units, rng));
    out.layers.push_back(Layer::sigmoid());
    for (Layer& l : out.layers) l.trainable = true;
    out.validate();
    return out;
}

void freeze(LayeredModel& model, std::size_t first, std::size_t last_exclusive) {
    if (model.layers.empty()) throw std::invalid_argument("freeze: empty model");
    if (first > last_exclusive || last_exclusive > model.layers.size()) {
        throw std::invalid_argument("freeze: invalid range [" + std::to_string(first) + ", " +
                                    std::to_string(last_exclusive) + ") for " +
                                    std::to_string(model.layers.size()) + " layers");
    }
    for (std::size_t i = first; i < last_exclusive; ++i) model.layers[i].trainable = false;
}

std::pair<std::size_t, std::size_t> default_freeze_range(const LayeredModel& model) {
    // freeze up to (not including) the dense stack; the grafted input conv
    // and every dense layer keep training
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].kind == LayerKind::Dense) return {1, i};
    }
    throw std::invalid_argument("model has no dense head");
}

FineTuneResult finetune(const LayeredModel& model, const Dataset& train_set,
                        const Dataset& val_set, const FineTuneConfig& config) {
    if (config.epochs == 0) throw std::invalid_argument("finetune: epochs must be positive");
    if (config.batch_size == 0) throw std::invalid_argument("finetune: batch size must be positive");
    if (train_set.empty()) throw std::invalid_argument("finetune: empty training set");
    if (val_set.empty()) throw std::invalid_argument("finetune: empty validation set");
    if (config.batch_size > train_set.size()) {
        throw std::invalid_argument("finetune: batch size " + std::to_string(config.batch_size) +
                                    " exceeds training set size " + std::to_string(train_set.size()));
    }
    if (model.layers.empty() || model.layers.back().kind != LayerKind::Sigmoid) {
        throw std::invalid_argument("finetune: model must end in a sigmoid head");
    }

    FineTuneResult result;
    result.model = model;
    LayeredModel& net = result.model;
    if (config.freeze_range.first < config.freeze_range.second) {
        freeze(net, config.freeze_range.first, config.freeze_range.second);
    }
    const std::size_t units = shape_product(net.validate());

    Dataset scratch; // reused per batch when augmenting
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.schedule.lr_at(epoch);
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(config.seed, 0xE70C'0000ull + epoch));
        shuffle_in_place(order, shuffle_rng);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, order.size());
            Tensor batch;
            if (config.augment) {
                scratch.items.clear();
                for (std::size_t i = begin; i < end; ++i) {
                    const LabeledImage& item = train_set.items[order[i]];
                    Rng draw(derive_seed(derive_seed(config.augment->seed, epoch), order[i]));
                    LabeledImage augmented;
                    augmented.pixels = augment(item.pixels, *config.augment, draw);
                    augmented.label = item.label;
                    scratch.items.push_back(std::move(augmented));
                }
                std::vector<std::size_t> local(end - begin);
                std::iota(local.begin(), local.end(), 0);
                batch = batch_from_items(scratch, local, 0, local.size());
            } else {
                batch = batch_from_items(train_set, order, begin, end);
            }
            const Tensor targets = targets_from_items(train_set, order, begin, end, units);

            ActivationTrace trace;
            const Tensor out = forward(net, batch, trace);
            const BceResult bce = bce_loss(out, targets);
            loss_sum += bce.loss * static_cast<double>(out.size());
            for (std::size_t i = 0; i < out.size(); ++i) {
                const double predicted = out.values[i] >= 0.5 ? 1.0 : 0.0;
                if (predicted == targets.values[i]) ++correct;
            }
            const GradientSet grads = backward(net, trace, bce.grad);
            sgd_step(net, grads, lr);
        }
        const double denom = static_cast<double>(train_set.size() * units);
        result.history.train_loss.push_back(loss_sum / denom);
        result.history.train_acc.push_back(static_cast<double>(correct) / denom);

        const EvalStats val = evaluate(net, val_set);
        result.history.val_loss.push_back(val.loss);
        result.history.val_acc.push_back(val.accuracy);
    }
    return result;
}

void save_history_csv(const TrainingHistory& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write history file '" + path + "'");
    out << "epoch,train_loss,val_loss,train_acc,val_acc\n";
    char buf[128];
    for (std::size_t e = 0; e < history.epochs(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g,%.10g\n", e, history.train_loss[e],
                      history.val_loss[e], history.train_acc[e], history.val_acc[e]);
        out << buf;
    }
    if (!out) throw std::runtime_error("failed writing history file '" + path + "'");
}

TrainingHistory load_history_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read history file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty history file '" + path + "'");
    TrainingHistory history;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<double> row;
        while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
        if (row.size() != 5) {
            throw std::runtime_error("history file '" + path + "': expected 5 columns");
        }
        history.train_loss.push_back(row[1]);
        history.val_loss.push_back(row[2]);
        history.train_acc.push_back(row[3]);
        history.val_acc.push_back(row[4]);
    }
    return history;
}

} // namespace ensemblefit
