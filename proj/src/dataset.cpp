#include "ensemblefit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ensemblefit/rng.hpp"

namespace fs = std::filesystem;

namespace ensemblefit {

std::map<int, std::size_t> Dataset::class_counts() const {
    std::map<int, std::size_t> counts;
    for (const auto& item : items) ++counts[item.label];
    return counts;
}

std::map<std::string, std::size_t> Dataset::raw_label_counts() const {
    std::map<std::string, std::size_t> counts;
    for (const auto& item : items) ++counts[item.raw_label];
    return counts;
}

Dataset ingest(const std::string& root_path, IngestReport* report) {
    if (!fs::is_directory(root_path)) {
        throw std::runtime_error("ingest: '" + root_path + "' is not a directory");
    }
    std::vector<fs::path> label_dirs;
    for (const auto& entry : fs::directory_iterator(root_path)) {
        if (entry.is_directory()) label_dirs.push_back(entry.path());
    }
    if (label_dirs.empty()) {
        throw std::runtime_error("ingest: '" + root_path + "' contains no label subdirectories");
    }
    std::sort(label_dirs.begin(), label_dirs.end());

    Dataset dataset;
    IngestReport local;
    for (const auto& dir : label_dirs) {
        const std::string raw_label = dir.filename().string();
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            if (ext == ".png" || ext == ".pgm") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        local.per_label[raw_label] = 0;
        for (const auto& file : files) {
            LabeledImage item;
            try {
                item.pixels = read_image(file.string());
            } catch (const std::exception& e) {
                ++local.skipped;
                local.warnings.push_back(std::string("skipped ") + file.string() + ": " + e.what());
                continue;
            }
            item.raw_label = raw_label;
            item.label = (raw_label == "normal") ? 0 : 1;
            item.id = file.string();
            dataset.items.push_back(std::move(item));
            ++local.per_label[raw_label];
        }
    }
    if (report) *report = std::move(local);
    return dataset;
}

Dataset group_labels(const Dataset& dataset, const PrefixRules& rules, GroupReport* report) {
    // rules with identical prefixes but different parents can never be ranked
    for (std::size_t i = 0; i < rules.size(); ++i) {
        for (std::size_t j = i + 1; j < rules.size(); ++j) {
            if (rules[i].first == rules[j].first && rules[i].second != rules[j].second) {
                throw std::runtime_error("group_labels: conflicting rules for prefix '" +
                                         rules[i].first + "'");
            }
        }
    }
    Dataset out = dataset;
    GroupReport local;
    for (auto& item : out.items) {
        const std::string* best_parent = nullptr;
        std::size_t best_len = 0;
        bool tie = false;
        for (const auto& [prefix, parent] : rules) {
            if (item.raw_label.rfind(prefix, 0) != 0) continue;
            if (prefix.size() > best_len || best_parent == nullptr) {
                best_len = prefix.size();
                best_parent = &parent;
                tie = false;
            } else if (prefix.size() == best_len && parent != *best_parent) {
                tie = true;
            }
        }
        if (tie) {
            throw std::runtime_error("group_labels: ambiguous prefix match for raw label '" +
                                     item.raw_label + "'");
        }
        if (best_parent) {
            item.raw_label = *best_parent;
            ++local.per_parent[*best_parent];
        } else {
            local.unmatched.insert(item.raw_label);
        }
    }
    if (report) *report = std::move(local);
    return out;
}

Dataset to_binary(const Dataset& dataset, const std::set<std::string>& defect_classes,
                  const std::set<std::string>& normal_classes) {
    std::set<std::string> undeclared;
    for (const auto& item : dataset.items) {
        const bool is_defect = defect_classes.count(item.raw_label) > 0;
        const bool is_normal = normal_classes.count(item.raw_label) > 0;
        if (is_defect && is_normal) {
            throw std::runtime_error("to_binary: class '" + item.raw_label +
                                     "' declared both defect and normal");
        }
        if (!is_defect && !is_normal) undeclared.insert(item.raw_label);
    }
    if (!undeclared.empty()) {
        std::string msg = "to_binary: undeclared classes:";
        for (const auto& c : undeclared) msg += " '" + c + "'";
        throw std::runtime_error(msg);
    }
    Dataset out = dataset;
    for (auto& item : out.items) {
        item.label = defect_classes.count(item.raw_label) > 0 ? 1 : 0;
    }
    return out;
}

SplitResult split(const Dataset& dataset, double train_ratio, double val_ratio,
                  double test_ratio, std::uint64_t seed) {
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0) {
        throw std::invalid_argument("split: ratios must be nonnegative");
    }
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
        throw std::invalid_argument("split: ratios must sum to 1");
    }
    std::size_t nonzero_parts = 0;
    for (double r : {train_ratio, val_ratio, test_ratio})
        if (r > 0) ++nonzero_parts;

    std::map<int, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        strata[dataset.items[i].label].push_back(i);
    }

    SplitResult result;
    for (auto& [label, indices] : strata) {
        if (indices.size() < nonzero_parts) {
            throw std::runtime_error("split: stratum for label " + std::to_string(label) + " has " +
                                     std::to_string(indices.size()) + " items, fewer than " +
                                     std::to_string(nonzero_parts) + " nonzero parts");
        }
        Rng rng(derive_seed(seed, 0x5350ull + static_cast<std::uint64_t>(label)));
        shuffle_in_place(indices, rng);
        const std::size_t n = indices.size();
        const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_ratio + 1e-9));
        const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_ratio + 1e-9));
        const std::size_t n_train = n - n_val - n_test;
        for (std::size_t i = 0; i < n; ++i) {
            const LabeledImage& item = dataset.items[indices[i]];
            if (i < n_train) {
                result.train.items.push_back(item);
            } else if (i < n_train + n_val) {
                result.val.items.push_back(item);
            } else {
                result.test.items.push_back(item);
            }
        }
    }
    return result;
}

void save_manifest(const Dataset& dataset, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream csv(fs::path(dir) / "manifest.csv");
    if (!csv) throw std::runtime_error("cannot write manifest under '" + dir + "'");
    csv << "path,raw_label,label,confusable\n";
    for (const auto& item : dataset.items) {
        std::string stem = item.id.empty() ? "item" : item.id;
        for (char& c : stem)
            if (c == '/' || c == '\\' || c == ',') c = '_';
        const std::string filename = stem + ".pgm";
        write_pgm(item.pixels, (fs::path(dir) / filename).string());
        csv << filename << "," << item.raw_label << "," << item.label << ","
            << (item.confusable ? 1 : 0) << "\n";
    }
    if (!csv) throw std::runtime_error("failed writing manifest under '" + dir + "'");
}

Dataset load_manifest(const std::string& manifest_path) {
    std::ifstream csv(manifest_path);
    if (!csv) throw std::runtime_error("cannot read manifest '" + manifest_path + "'");
    const fs::path base = fs::path(manifest_path).parent_path();
    std::string line;
    if (!std::getline(csv, line)) throw std::runtime_error("empty manifest '" + manifest_path + "'");
    Dataset dataset;
    std::size_t lineno = 1;
    while (std::getline(csv, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string path, raw_label, label_str, confusable_str;
        if (!std::getline(ss, path, ',') || !std::getline(ss, raw_label, ',') ||
            !std::getline(ss, label_str, ',') || !std::getline(ss, confusable_str)) {
            throw std::runtime_error("manifest '" + manifest_path + "' line " +
                                     std::to_string(lineno) + ": expected 4 columns");
        }
        LabeledImage item;
        item.pixels = read_image((base / path).string());
        item.raw_label = raw_label;
        item.label = std::stoi(label_str);
        item.confusable = confusable_str == "1";
        item.id = fs::path(path).stem().string();
        dataset.items.push_back(std::move(item));
    }
    return dataset;
}

} // namespace ensemblefit
