#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ensemblefit/augment.hpp"
#include "ensemblefit/dataset.hpp"
#include "ensemblefit/net.hpp"

namespace ensemblefit {

struct SourceMeta {
    std::string source_task_id;
    std::size_t epochs = 0;
    double final_train_acc = 0.0;
};

struct PretrainedModel {
    LayeredModel model;
    SourceMeta source_meta;
};

struct FineTuneConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    SgdSchedule schedule;
    // [first, last) layer indices to freeze before training; empty = none
    std::pair<std::size_t, std::size_t> freeze_range{0, 0};
    std::uint64_t seed = 42;
    std::optional<AugmentPipeline> augment; // training batches only
};

struct TrainingHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> train_acc;
    std::vector<double> val_acc;

    std::size_t epochs() const { return train_loss.size(); }
};

struct FineTuneResult {
    LayeredModel model;
    TrainingHistory history;
};

struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

// mean per-item BCE and thresholded accuracy over a dataset; identical
// regardless of batching
EvalStats evaluate(const LayeredModel& model, const Dataset& dataset, double threshold = 0.5);

// one conv stage of a backbone: Conv2D + activation (+ optional 2x2
// max-pool). Later stages use sigmoid: a frozen bias-free conv behind a
// ReLU can go entirely silent on a new input basis, killing the gradient
// to the grafted input conv, while sigmoid always passes some signal.
struct ConvStageSpec {
    std::size_t out_ch = 8;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    bool pool = true;
    LayerKind activation = LayerKind::ReLU; // ReLU or Sigmoid
};

struct BackboneSpec {
    std::string name;
    std::vector<ConvStageSpec> stages;
    std::size_t hidden_dense = 0; // optional Dense+ReLU block before the output head
};

// conv stack + Flatten + Dense(head_units) + Sigmoid, seeded init
LayeredModel build_backbone(const BackboneSpec& spec, const std::vector<std::size_t>& input_shape,
                            std::size_t head_units, std::uint64_t seed);

// three desk-scale stacks of different depth/width standing in for the
// usual large pretrained families
std::vector<BackboneSpec> default_backbones();

struct HeadSpec {
    std::size_t units = 1; // sigmoid output units (1 = binary)
};

PretrainedModel pretrain_backbone(const Dataset& source_dataset, const BackboneSpec& spec,
                                  const FineTuneConfig& config,
                                  const std::string& source_task_id = "source");

// swap the input conv and the dense head for fresh seeded layers, keeping
// every middle layer's pretrained values
LayeredModel graft_head(const PretrainedModel& pretrained,
                        const std::vector<std::size_t>& new_input_shape, const HeadSpec& head,
                        std::uint64_t seed);

void freeze(LayeredModel& model, std::size_t first, std::size_t last_exclusive);

// [0, index-of-final-Dense): everything up to the grafted head
std::pair<std::size_t, std::size_t> default_freeze_range(const LayeredModel& model);

FineTuneResult finetune(const LayeredModel& model, const Dataset& train_set,
                        const Dataset& val_set, const FineTuneConfig& config);

// history.csv: epoch,train_loss,val_loss,train_acc,val_acc at 10
// significant digits
void save_history_csv(const TrainingHistory& history, const std::string& path);
TrainingHistory load_history_csv(const std::string& path);

} // namespace ensemblefit
