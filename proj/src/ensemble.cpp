#include "ensemblefit/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "ensemblefit/serialize.hpp"
#include "ensemblefit/transfer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ensemblefit {

namespace {

Tensor as_batch(const Tensor& x) {
    if (x.rank() != 3) {
        throw std::invalid_argument("expected a single (c, h, w) image tensor, got " + x.shape_str());
    }
    Tensor batch = x;
    batch.shape = {1, x.shape[0], x.shape[1], x.shape[2]};
    return batch;
}

double member_probability(const MemberRecord& member, const Tensor& batch) {
    const Tensor out = forward(member.model, batch);
    if (out.size() != 1) {
        throw std::invalid_argument("member '" + member.model_id +
                                    "' does not produce a single probability");
    }
    return out.values[0];
}

double member_logit(const MemberRecord& member, const Tensor& batch) {
    const Tensor out = forward_logit(member.model, batch);
    if (out.size() != 1) {
        throw std::invalid_argument("member '" + member.model_id +
                                    "' does not produce a single logit");
    }
    return out.values[0];
}

std::vector<double> collect_weights(const EnsembleModel& ensemble) {
    std::vector<double> weights;
    weights.reserve(ensemble.members.size());
    for (const MemberRecord& m : ensemble.members) {
        if (!m.weight) {
            throw std::logic_error("member '" + m.model_id + "' has no weight set");
        }
        weights.push_back(*m.weight);
    }
    return weights;
}

// descending lexicographic enumeration of nonnegative integer vectors with
// a fixed sum; (m, 0, ..., 0) comes first
bool next_composition(std::vector<std::size_t>& k) {
    const std::size_t n = k.size();
    if (n <= 1) return false;
    // find the rightmost position before the last with a nonzero count
    for (std::size_t i = n - 1; i-- > 0;) {
        if (k[i] == 0) continue;
        // move one unit from i to i+1, flushing everything after i+1 back
        std::size_t tail = 0;
        for (std::size_t j = i + 1; j < n; ++j) {
            tail += k[j];
            k[j] = 0;
        }
        k[i] -= 1;
        k[i + 1] = tail + 1;
        return true;
    }
    return false;
}

} // namespace

EnsembleModel build_ensemble(const std::vector<MemberCandidate>& candidates,
                             const std::vector<std::size_t>& expected_shape, std::size_t n_max,
                             AdmissionReport* report) {
    if (n_max == 0) throw std::invalid_argument("build_ensemble: N must be at least 1");
    if (expected_shape.size() != 3) {
        throw std::invalid_argument("build_ensemble: expected shape must be (c, h, w)");
    }
    EnsembleModel ensemble;
    ensemble.expected_shape = expected_shape;
    AdmissionReport local;
    for (const MemberCandidate& candidate : candidates) {
        if (ensemble.members.size() == n_max) {
            local.rejected.emplace_back(candidate.model_id, "ensemble already has N members");
            continue;
        }
        if (candidate.model.input_shape != expected_shape) {
            local.rejected.emplace_back(candidate.model_id,
                                        "input shape " + shape_to_string(candidate.model.input_shape) +
                                            " does not match expected " +
                                            shape_to_string(expected_shape));
            continue;
        }
        MemberRecord record;
        record.model_id = candidate.model_id;
        record.model = candidate.model;
        record.input_shape = candidate.model.input_shape;
        ensemble.members.push_back(std::move(record));
    }
    if (report) *report = std::move(local);
    if (ensemble.members.empty()) {
        throw std::runtime_error("build_ensemble: no shape-compatible candidates");
    }
    return ensemble;
}

void evaluate_members(EnsembleModel& ensemble, const Dataset& val_set) {
    if (val_set.empty()) throw std::invalid_argument("evaluate_members: empty validation set");
    for (MemberRecord& member : ensemble.members) {
        member.val_loss = evaluate(member.model, val_set, ensemble.threshold).loss;
    }
}

std::size_t select_min_loss(const EnsembleModel& ensemble) {
    if (ensemble.members.empty()) throw std::logic_error("select_min_loss: empty ensemble");
    std::size_t best = 0;
    bool have = false;
    double best_loss = 0.0;
    for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
        const auto& loss = ensemble.members[i].val_loss;
        if (!loss) {
            throw std::logic_error("select_min_loss: member '" + ensemble.members[i].model_id +
                                   "' has no validation loss");
        }
        if (!have || *loss < best_loss) {
            best = i;
            best_loss = *loss;
            have = true;
        }
    }
    return best;
}

double predict_min_loss(const EnsembleModel& ensemble, const Tensor& x) {
    const std::size_t selected = select_min_loss(ensemble);
    return member_probability(ensemble.members[selected], as_batch(x));
}

std::vector<double> reciprocal_weights(const std::vector<double>& losses) {
    if (losses.empty()) throw std::invalid_argument("reciprocal_weights: empty loss list");
    std::vector<double> weights(losses.size());
    double total = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (losses[i] < 0.0) throw std::invalid_argument("reciprocal_weights: negative loss");
        weights[i] = 1.0 / std::max(losses[i], kWeightFloor);
        total += weights[i];
    }
    for (double& w : weights) w /= total;
    return weights;
}

void apply_reciprocal_weights(EnsembleModel& ensemble) {
    std::vector<double> losses;
    for (const MemberRecord& m : ensemble.members) {
        if (!m.val_loss) {
            throw std::logic_error("apply_reciprocal_weights: member '" + m.model_id +
                                   "' has no validation loss");
        }
        losses.push_back(*m.val_loss);
    }
    const std::vector<double> weights = reciprocal_weights(losses);
    for (std::size_t i = 0; i < weights.size(); ++i) ensemble.members[i].weight = weights[i];
    ensemble.mode = EnsembleMode::ReciprocalWeighted;
}

double combine_weighted(const EnsembleModel& ensemble, const Tensor& x) {
    const std::vector<double> weights = collect_weights(ensemble);
    const Tensor batch = as_batch(x);
    if (ensemble.combine == CombineRule::WeightedLogitSigmoid) {
        double z = 0.0;
        for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
            z += weights[i] * member_logit(ensemble.members[i], batch);
        }
        return 1.0 / (1.0 + std::exp(-z));
    }
    double p = 0.0;
    for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
        p += weights[i] * member_probability(ensemble.members[i], batch);
    }
    return p;
}

std::vector<double> calibrate_weights(EnsembleModel& ensemble, const Dataset& val_set,
                                      double lambda, double grid_step) {
    if (val_set.empty()) throw std::invalid_argument("calibrate_weights: empty validation set");
    if (lambda < 0.0) throw std::invalid_argument("calibrate_weights: lambda must be nonnegative");
    const double m_real = 1.0 / grid_step;
    const auto m = static_cast<std::size_t>(std::llround(m_real));
    if (grid_step <= 0.0 || m == 0 || std::abs(static_cast<double>(m) * grid_step - 1.0) > 1e-9) {
        throw std::invalid_argument("calibrate_weights: grid_step must divide 1 evenly");
    }
    const std::size_t n = ensemble.members.size();

    // member outputs per item, computed once
    std::vector<std::vector<double>> raw(n, std::vector<double>(val_set.size()));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < val_set.size(); ++j) {
            const Tensor batch = as_batch(image_to_tensor(val_set.items[j].pixels));
            raw[i][j] = ensemble.combine == CombineRule::WeightedLogitSigmoid
                            ? member_logit(ensemble.members[i], batch)
                            : member_probability(ensemble.members[i], batch);
        }
    }

    auto objective = [&](const std::vector<double>& weights) {
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t j = 0; j < val_set.size(); ++j) {
            double combined = 0.0;
            for (std::size_t i = 0; i < n; ++i) combined += weights[i] * raw[i][j];
            double p = ensemble.combine == CombineRule::WeightedLogitSigmoid
                           ? 1.0 / (1.0 + std::exp(-combined))
                           : combined;
            const double y = static_cast<double>(val_set.items[j].label);
            if (static_cast<double>(classify(p, ensemble.threshold)) == y) ++correct;
            p = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
            loss_sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(val_set.size());
        const double mean_loss = loss_sum / static_cast<double>(val_set.size());
        return acc - lambda * mean_loss;
    };

    std::vector<std::size_t> counts(n, 0);
    counts[0] = m;
    std::vector<double> best_weights;
    double best_objective = 0.0;
    bool have = false;
    do {
        std::vector<double> weights(n);
        for (std::size_t i = 0; i < n; ++i) {
            weights[i] = static_cast<double>(counts[i]) / static_cast<double>(m);
        }
        const double value = objective(weights);
        if (!have || value > best_objective) {
            best_objective = value;
            best_weights = weights;
            have = true;
        }
    } while (next_composition(counts));

    for (std::size_t i = 0; i < n; ++i) ensemble.members[i].weight = best_weights[i];
    ensemble.mode = EnsembleMode::Calibrated;
    return best_weights;
}

int classify(double probability, double threshold) {
    if (probability < 0.0 || probability > 1.0) {
        throw std::invalid_argument("classify: probability out of [0, 1]");
    }
    return probability >= threshold ? 1 : 0;
}

double predict(const EnsembleModel& ensemble, const Tensor& x) {
    if (ensemble.mode == EnsembleMode::MinLoss) return predict_min_loss(ensemble, x);
    return combine_weighted(ensemble, x);
}

std::string ensemble_mode_name(EnsembleMode mode) {
    switch (mode) {
        case EnsembleMode::MinLoss: return "min_loss";
        case EnsembleMode::ReciprocalWeighted: return "reciprocal";
        case EnsembleMode::Calibrated: return "calibrated";
    }
    return "?";
}

EnsembleMode ensemble_mode_from_name(const std::string& name) {
    if (name == "min_loss") return EnsembleMode::MinLoss;
    if (name == "reciprocal") return EnsembleMode::ReciprocalWeighted;
    if (name == "calibrated") return EnsembleMode::Calibrated;
    throw std::invalid_argument("unknown ensemble mode '" + name + "'");
}

std::string combine_rule_name(CombineRule rule) {
    return rule == CombineRule::WeightedLogitSigmoid ? "logit" : "prob_mean";
}

CombineRule combine_rule_from_name(const std::string& name) {
    if (name == "logit") return CombineRule::WeightedLogitSigmoid;
    if (name == "prob_mean") return CombineRule::WeightedProbabilityMean;
    throw std::invalid_argument("unknown combine rule '" + name + "'");
}

void save_ensemble(const EnsembleModel& ensemble, const std::string& path,
                   const std::vector<std::string>& model_paths) {
    if (model_paths.size() != ensemble.members.size()) {
        throw std::invalid_argument("save_ensemble: one model path per member required");
    }
    json doc;
    doc["format_version"] = kEnsembleFormatVersion;
    doc["mode"] = ensemble_mode_name(ensemble.mode);
    doc["combine"] = combine_rule_name(ensemble.combine);
    doc["threshold"] = ensemble.threshold;
    doc["expected_shape"] = ensemble.expected_shape;
    json members = json::array();
    for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
        const MemberRecord& m = ensemble.members[i];
        json entry;
        entry["model_id"] = m.model_id;
        entry["model_path"] = model_paths[i];
        entry["val_loss"] = m.val_loss ? json(*m.val_loss) : json(nullptr);
        entry["weight"] = m.weight ? json(*m.weight) : json(nullptr);
        members.push_back(std::move(entry));
    }
    doc["members"] = std::move(members);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write ensemble manifest '" + path + "'");
    out << doc.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing ensemble manifest '" + path + "'");
}

EnsembleModel load_ensemble(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read ensemble manifest '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("ensemble manifest '" + path + "': " + e.what());
    }
    const int version = doc.value("format_version", -1);
    if (version != kEnsembleFormatVersion) {
        throw std::runtime_error("ensemble format_version " + std::to_string(version) +
                                 " not supported (expected " +
                                 std::to_string(kEnsembleFormatVersion) + ")");
    }
    EnsembleModel ensemble;
    ensemble.mode = ensemble_mode_from_name(doc.at("mode").get<std::string>());
    ensemble.combine = combine_rule_from_name(doc.value("combine", "logit"));
    ensemble.threshold = doc.at("threshold").get<double>();
    for (const auto& v : doc.at("expected_shape")) {
        ensemble.expected_shape.push_back(v.get<std::size_t>());
    }
    const fs::path base = fs::path(path).parent_path();
    for (const auto& entry : doc.at("members")) {
        MemberRecord m;
        m.model_id = entry.at("model_id").get<std::string>();
        fs::path model_path = entry.at("model_path").get<std::string>();
        if (model_path.is_relative()) model_path = base / model_path;
        m.model = load_model(model_path.string());
        m.input_shape = m.model.input_shape;
        if (!entry.at("val_loss").is_null()) m.val_loss = entry.at("val_loss").get<double>();
        if (!entry.at("weight").is_null()) m.weight = entry.at("weight").get<double>();
        ensemble.members.push_back(std::move(m));
    }
    if (ensemble.members.empty()) {
        throw std::runtime_error("ensemble manifest '" + path + "' has no members");
    }
    return ensemble;
}

} // namespace ensemblefit
