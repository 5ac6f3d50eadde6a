#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrg/attacks.hpp"
#include "mrg/checkpoint.hpp"
#include "mrg/merge.hpp"
#include "mrg/model.hpp"

namespace mrg {

struct EvalReport {
    double cacc = 0.0;
    double asr = 0.0;
    size_t n_clean = 0;
    size_t n_poisoned = 0;
    std::string model_fingerprint;
    std::string attack_tag;
};

// Fraction of clean test examples predicted as their gold label.
double cacc(const Checkpoint& ckpt, const ModelConfig& config, const Dataset& clean_test);

// Fraction of poisoned test examples predicted as the target; every label in
// the poisoned set must already equal the target.
double asr(const Checkpoint& ckpt, const ModelConfig& config, const Dataset& poisoned_test, int target);

EvalReport evaluate(const Checkpoint& ckpt, const ModelConfig& config, const Dataset& clean_test,
                    const Dataset* poisoned_test, int target, const std::string& attack_tag);

struct ExperimentPlan {
    SyntheticConfig dataset;
    uint64_t data_seed = 1;
    ModelConfig model;
    Hyper hyper;
    std::vector<AttackKind> attacks = {AttackKind::badnet, AttackKind::insertsent, AttackKind::bite_lite};
    std::vector<double> rates = {0.2};
    int target_label = 1;
    MergeMethod method = MergeMethod::wag;
    double density = 0.05;
    double lambda = 0.2;
    double epsilon = 1e-8;
    size_t fisher_samples = 512;
    // Each combination is a list of model tags: "benign" or an attack name.
    std::vector<std::vector<std::string>> combinations;
    std::vector<uint64_t> seeds = {1};

    static ExperimentPlan default_plan();
    static ExperimentPlan from_json_file(const std::string& path);
    void fill_default_combinations();
};

struct ExperimentRow {
    uint64_t seed = 0;
    double rate = 0.0;
    std::string kind;  // benign | undefended | merged
    std::string name;  // attack name or combination label
    double cacc = 0.0;
    std::map<std::string, double> asr;    // attack name -> ASR
    std::map<std::string, double> delta;  // merged rows: ASR minus undefended ASR
};

struct ExperimentResult {
    std::vector<std::string> attack_names;
    std::vector<ExperimentRow> rows;

    const ExperimentRow* find(uint64_t seed, double rate, const std::string& kind,
                              const std::string& name) const;
};

// Trains (or loads cached) benign and backdoored models, evaluates them
// undefended, merges every combination and evaluates the merged models on the
// clean test set and every attack's poisoned test set.
// cache_dir may be empty to disable on-disk caching.
ExperimentResult run_experiment(const ExperimentPlan& plan, const std::string& cache_dir,
                                std::ostream* log = nullptr);

std::string render_tsv(const ExperimentResult& result);
std::string render_table(const ExperimentResult& result);

} // namespace mrg
