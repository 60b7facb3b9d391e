#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ensemblefit/image.hpp"

namespace ensemblefit {

struct LabeledImage {
    Image pixels;
    std::string raw_label;
    int label = 0; // 0 normal, 1 defect
    std::string id;
    bool confusable = false;
};

struct Dataset {
    std::vector<LabeledImage> items;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
    std::map<int, std::size_t> class_counts() const;
    std::map<std::string, std::size_t> raw_label_counts() const;
};

struct IngestReport {
    std::map<std::string, std::size_t> per_label;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
};

// One subdirectory per raw label, PNG/PGM files inside. Directories named
// "normal" start at label 0, everything else at label 1; to_binary is the
// authoritative relabeling step.
Dataset ingest(const std::string& root_path, IngestReport* report = nullptr);

struct GroupReport {
    std::set<std::string> unmatched;
    std::map<std::string, std::size_t> per_parent;
};

// prefix -> parent-class rules, longest matching prefix wins
using PrefixRules = std::vector<std::pair<std::string, std::string>>;

Dataset group_labels(const Dataset& dataset, const PrefixRules& rules,
                     GroupReport* report = nullptr);

Dataset to_binary(const Dataset& dataset, const std::set<std::string>& defect_classes,
                  const std::set<std::string>& normal_classes);

struct SplitResult {
    Dataset train;
    Dataset val;
    Dataset test;
};

// stratified by label; floor allocations, remainder goes to train
SplitResult split(const Dataset& dataset, double train_ratio, double val_ratio,
                  double test_ratio, std::uint64_t seed);

// manifest.csv: path,raw_label,label,confusable — the interchange format
// between CLI stages; images go next to it as 8-bit PGM
void save_manifest(const Dataset& dataset, const std::string& dir);
Dataset load_manifest(const std::string& manifest_path);

} // namespace ensemblefit
