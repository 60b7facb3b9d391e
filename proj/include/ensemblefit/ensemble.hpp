#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ensemblefit/dataset.hpp"
#include "ensemblefit/net.hpp"

namespace ensemblefit {

struct MemberCandidate {
    std::string model_id;
    LayeredModel model;
};

struct MemberRecord {
    std::string model_id;
    LayeredModel model;
    std::vector<std::size_t> input_shape;
    std::optional<double> val_loss; // L_i
    std::optional<double> weight;   // normalized share
};

enum class EnsembleMode { MinLoss, ReciprocalWeighted, Calibrated };

// how member outputs are combined when weights are in play: weighted sum
// of pre-sigmoid logits through a sigmoid (default), or a plain weighted
// mean of member probabilities
enum class CombineRule { WeightedLogitSigmoid, WeightedProbabilityMean };

struct EnsembleModel {
    std::vector<MemberRecord> members;
    EnsembleMode mode = EnsembleMode::MinLoss;
    CombineRule combine = CombineRule::WeightedLogitSigmoid;
    double threshold = 0.5;
    std::vector<std::size_t> expected_shape; // (c, h, w)
};

struct AdmissionReport {
    std::vector<std::pair<std::string, std::string>> rejected; // id, reason
};

// admit up to N candidates, in order, whose input shape matches
EnsembleModel build_ensemble(const std::vector<MemberCandidate>& candidates,
                             const std::vector<std::size_t>& expected_shape, std::size_t n_max,
                             AdmissionReport* report = nullptr);

// fills each member's val_loss with its mean BCE on the validation set
void evaluate_members(EnsembleModel& ensemble, const Dataset& val_set);

std::size_t select_min_loss(const EnsembleModel& ensemble);

// x is a single (c, h, w) image tensor
double predict_min_loss(const EnsembleModel& ensemble, const Tensor& x);

// 1/L_i normalized to sum 1; losses under kWeightFloor are clamped first
inline constexpr double kWeightFloor = 1e-8;
std::vector<double> reciprocal_weights(const std::vector<double>& losses);

// computes reciprocal weights from member val losses and installs them
void apply_reciprocal_weights(EnsembleModel& ensemble);

double combine_weighted(const EnsembleModel& ensemble, const Tensor& x);

// exhaustive search over the simplex grid (multiples of grid_step) for
// argmax of accuracy - lambda * mean BCE; ties keep the earliest point in
// descending lexicographic order, so full weight on the first member wins
// when everything else is equal. Installs the weights and returns them.
std::vector<double> calibrate_weights(EnsembleModel& ensemble, const Dataset& val_set,
                                      double lambda, double grid_step);

int classify(double probability, double threshold);

// ensemble prediction honoring the configured mode
double predict(const EnsembleModel& ensemble, const Tensor& x);

std::string ensemble_mode_name(EnsembleMode mode);
EnsembleMode ensemble_mode_from_name(const std::string& name);
std::string combine_rule_name(CombineRule rule);
CombineRule combine_rule_from_name(const std::string& name);

inline constexpr int kEnsembleFormatVersion = 1;

// manifest JSON next to the saved member models; model_paths[i] is stored
// verbatim and resolved relative to the manifest when loading
void save_ensemble(const EnsembleModel& ensemble, const std::string& path,
                   const std::vector<std::string>& model_paths);
EnsembleModel load_ensemble(const std::string& path);

} // namespace ensemblefit
