#include "mrg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace mrg {

double cacc(const Checkpoint& ckpt, const ModelConfig& config, const Dataset& clean_test) {
    if (clean_test.examples.empty()) fail(ErrorCode::bad_value, "cacc: empty test set");
    check_params_schema(ckpt, config);
    size_t correct = 0;
    for (const Example& ex : clean_test.examples)
        if (predict(ckpt, config, ex.tokens) == ex.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(clean_test.size());
}

double asr(const Checkpoint& ckpt, const ModelConfig& config, const Dataset& poisoned_test, int target) {
    if (poisoned_test.examples.empty()) fail(ErrorCode::bad_value, "asr: empty poisoned test set");
    check_params_schema(ckpt, config);
    for (const Example& ex : poisoned_test.examples)
        if (ex.label != target)
            fail(ErrorCode::bad_value, "asr: poisoned test set contains a non-target label");
    size_t hits = 0;
    for (const Example& ex : poisoned_test.examples)
        if (predict(ckpt, config, ex.tokens) == target) ++hits;
    return static_cast<double>(hits) / static_cast<double>(poisoned_test.size());
}

EvalReport evaluate(const Checkpoint& ckpt, const ModelConfig& config, const Dataset& clean_test,
                    const Dataset* poisoned_test, int target, const std::string& attack_tag) {
    EvalReport report;
    report.cacc = cacc(ckpt, config, clean_test);
    report.n_clean = clean_test.size();
    report.model_fingerprint = tensor_fingerprint(ckpt);
    report.attack_tag = attack_tag;
    if (poisoned_test) {
        report.asr = asr(ckpt, config, *poisoned_test, target);
        report.n_poisoned = poisoned_test->size();
    }
    return report;
}

ExperimentPlan ExperimentPlan::default_plan() {
    ExperimentPlan plan;
    // Larger corpus and longer sequences than the unit-test default: small
    // corpora let the poisoned model memorize its poisons through rare
    // background tokens instead of learning the trigger, and short sequences
    // leave the trigger such a large share of the pooled average that merging
    // cannot dilute it.
    plan.dataset.train_size = 8000;
    plan.dataset.len_min = 20;
    plan.dataset.len_max = 40;
    plan.fill_default_combinations();
    return plan;
}

void ExperimentPlan::fill_default_combinations() {
    if (!combinations.empty()) return;
    for (AttackKind kind : attacks)
        combinations.push_back({"benign", attack_kind_name(kind)});
    std::vector<std::string> all = {"benign"};
    for (AttackKind kind : attacks) all.push_back(attack_kind_name(kind));
    combinations.push_back(all);
}

ExperimentPlan ExperimentPlan::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open plan '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::bad_value, "plan '" + path + "' is not valid JSON: " + e.what());
    }

    ExperimentPlan plan = default_plan();
    plan.combinations.clear();  // re-derived below unless the file pins them
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        plan.dataset.classes = d.value("classes", plan.dataset.classes);
        plan.dataset.vocab_size = d.value("vocab_size", plan.dataset.vocab_size);
        plan.dataset.len_min = d.value("len_min", plan.dataset.len_min);
        plan.dataset.len_max = d.value("len_max", plan.dataset.len_max);
        plan.dataset.train_size = d.value("train_size", plan.dataset.train_size);
        plan.dataset.dev_size = d.value("dev_size", plan.dataset.dev_size);
        plan.dataset.test_size = d.value("test_size", plan.dataset.test_size);
        plan.data_seed = d.value("seed", plan.data_seed);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        plan.model.embed_dim = m.value("embed_dim", plan.model.embed_dim);
        plan.model.hidden_dim = m.value("hidden_dim", plan.model.hidden_dim);
        plan.model.max_len = m.value("max_len", plan.model.max_len);
    }
    plan.model.vocab_size = plan.dataset.vocab_size;
    plan.model.classes = plan.dataset.classes;
    if (j.contains("hyper")) {
        const auto& h = j["hyper"];
        plan.hyper.epochs = h.value("epochs", plan.hyper.epochs);
        plan.hyper.batch_size = h.value("batch_size", plan.hyper.batch_size);
        plan.hyper.learning_rate = h.value("learning_rate", plan.hyper.learning_rate);
        plan.hyper.weight_decay = h.value("weight_decay", plan.hyper.weight_decay);
        plan.hyper.adam_epsilon = h.value("adam_epsilon", plan.hyper.adam_epsilon);
    }
    if (j.contains("attacks")) {
        plan.attacks.clear();
        for (const auto& a : j["attacks"]) plan.attacks.push_back(parse_attack_kind(a.get<std::string>()));
    }
    if (j.contains("rates")) plan.rates = j["rates"].get<std::vector<double>>();
    plan.target_label = j.value("target", plan.target_label);
    if (j.contains("merge")) {
        const auto& m = j["merge"];
        plan.method = parse_merge_method(m.value("method", std::string("wag")));
        plan.density = m.value("density", plan.density);
        plan.lambda = m.value("lambda", plan.lambda);
        plan.epsilon = m.value("epsilon", plan.epsilon);
        plan.fisher_samples = m.value("fisher_samples", plan.fisher_samples);
    }
    if (j.contains("combinations"))
        plan.combinations = j["combinations"].get<std::vector<std::vector<std::string>>>();
    if (j.contains("seeds")) plan.seeds = j["seeds"].get<std::vector<uint64_t>>();
    plan.fill_default_combinations();
    return plan;
}

const ExperimentRow* ExperimentResult::find(uint64_t seed, double rate, const std::string& kind,
                                            const std::string& name) const {
    for (const ExperimentRow& row : rows)
        if (row.seed == seed && row.rate == rate && row.kind == kind && row.name == name) return &row;
    return nullptr;
}

namespace {

std::string combo_label(const std::vector<std::string>& tags) {
    std::string label;
    for (size_t i = 0; i < tags.size(); ++i) label += (i ? "+" : "") + tags[i];
    return label;
}

struct TrainedModel {
    Checkpoint params;
    Checkpoint fisher;  // empty unless the plan's method needs it
};

// One (seed, rate) cell of the grid: the corpus, the benign and per-attack
// backdoored models, and every attack's poisoned test set.
struct GridCell {
    SyntheticCorpus corpus;
    std::map<std::string, TrainedModel> models;        // tag -> model
    std::map<std::string, Dataset> poisoned_tests;     // attack name -> test set
};

Checkpoint train_cached(const ModelConfig& config, const Dataset& train_set, const Dataset& dev_set,
                        const Hyper& hyper, const std::string& cache_dir, const std::string& tag,
                        std::ostream* log) {
    std::string cache_path;
    if (!cache_dir.empty()) {
        std::string hyper_repr = std::to_string(hyper.epochs) + ";" + std::to_string(hyper.batch_size) +
                                 ";" + std::to_string(hyper.learning_rate) + ";" +
                                 std::to_string(hyper.weight_decay) + ";" +
                                 std::to_string(hyper.adam_epsilon);
        uint64_t key = dataset_fingerprint(train_set) ^ fnv1a(config.fingerprint()) ^
                       (hyper.seed * 0x9E3779B97F4A7C15ULL) ^ fnv1a(hyper_repr);
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(key));
        cache_path = cache_dir + "/" + tag + "_" + buf + ".mrg";
        if (std::filesystem::exists(cache_path)) {
            if (log) *log << "cache hit: " << cache_path << "\n";
            return load_checkpoint(cache_path);
        }
    }
    if (log) *log << "training " << tag << " ...\n";
    TrainResult result = train(config, train_set, dev_set, hyper, log);
    result.params.meta["train.tag"] = tag;
    if (!cache_path.empty()) save_checkpoint(result.params, cache_path);
    return result.params;
}

GridCell build_cell(const ExperimentPlan& plan, uint64_t seed, double rate,
                    const std::string& cache_dir, std::ostream* log) {
    GridCell cell;
    cell.corpus = gen_synthetic(plan.dataset, plan.data_seed);

    Hyper hyper = plan.hyper;
    hyper.seed = seed;  // shared init across all models of this cell

    cell.models["benign"].params = train_cached(plan.model, cell.corpus.train, cell.corpus.dev,
                                                hyper, cache_dir, "benign", log);

    for (AttackKind kind : plan.attacks) {
        std::string name = attack_kind_name(kind);
        PoisonSpec spec = default_spec(kind, cell.corpus.vocab, plan.target_label, rate,
                                       plan.data_seed ^ fnv1a(name));
        PoisonResult poisoned = poison_dataset(cell.corpus.train, spec, cell.corpus.vocab);
        poisoned.dataset.split_name = "train_" + name;
        cell.models[name].params = train_cached(plan.model, poisoned.dataset, cell.corpus.dev,
                                                hyper, cache_dir, name, log);
        cell.models[name].params.meta["attack"] = name;
        cell.poisoned_tests[name] =
            make_poisoned_testset(cell.corpus.test, spec, cell.corpus.vocab, poisoned.bite_triggers);
    }

    if (plan.method == MergeMethod::fisher) {
        size_t n = std::min(plan.fisher_samples, cell.corpus.train.size());
        for (auto& [tag, model] : cell.models) {
            model.fisher = compute_fisher(model.params, plan.model, cell.corpus.train, n);
            // Replace each Fisher entry by its within-tensor quantile. Raw
            // gradient magnitudes are not comparable across models: a model
            // that fits the clean data slightly worse has uniformly larger
            // gradients and would out-weigh every other model at once. The
            // rank of a parameter inside its own tensor survives that scale
            // difference, so the merge weighs models by where each one thinks
            // its importance lies instead of by how hard it still trains.
            for (auto& [name, tensor] : model.fisher.tensors) {
                std::vector<float> sorted = tensor.data;
                std::sort(sorted.begin(), sorted.end());
                const double denom = static_cast<double>(sorted.size());
                for (float& v : tensor.data) {
                    if (v <= 0.0f) {
                        v = 0.0f;
                        continue;
                    }
                    const auto below =
                        std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin();
                    v = static_cast<float>(static_cast<double>(below) / denom);
                }
            }
        }
    }
    return cell;
}

Checkpoint merge_combination(const ExperimentPlan& plan, const GridCell& cell, uint64_t seed,
                             const std::vector<std::string>& tags) {
    MergeRequest request;
    request.method = plan.method;
    request.density = plan.density;
    request.lambda = plan.lambda;
    request.epsilon = plan.epsilon;
    for (const std::string& tag : tags) {
        auto it = cell.models.find(tag);
        if (it == cell.models.end())
            fail(ErrorCode::bad_value, "combination references unknown model '" + tag + "'");
        request.inputs.push_back(it->second.params);
        if (plan.method == MergeMethod::fisher) request.fishers.push_back(it->second.fisher);
    }
    if (plan.method == MergeMethod::ties)
        request.base = init_params(plan.model, seed);  // the shared starting point
    return merge(request);
}

} // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, const std::string& cache_dir,
                                std::ostream* log) {
    if (plan.attacks.empty() && plan.combinations.empty() && plan.rates.empty())
        fail(ErrorCode::bad_value, "experiment plan is empty");
    if (!cache_dir.empty()) std::filesystem::create_directories(cache_dir);

    ExperimentResult result;
    for (AttackKind kind : plan.attacks) result.attack_names.push_back(attack_kind_name(kind));

    std::vector<double> rates = plan.rates.empty() ? std::vector<double>{0.2} : plan.rates;
    for (uint64_t seed : plan.seeds) {
        for (double rate : rates) {
            if (log) *log << "--- seed " << seed << " rate " << rate << " ---\n";
            GridCell cell = build_cell(plan, seed, rate, cache_dir, log);

            auto eval_model = [&](const Checkpoint& params, const std::string& kind,
                                  const std::string& name) {
                ExperimentRow row;
                row.seed = seed;
                row.rate = rate;
                row.kind = kind;
                row.name = name;
                row.cacc = cacc(params, plan.model, cell.corpus.test);
                for (const std::string& attack : result.attack_names)
                    row.asr[attack] =
                        asr(params, plan.model, cell.poisoned_tests.at(attack), plan.target_label);
                return row;
            };

            result.rows.push_back(eval_model(cell.models.at("benign").params, "benign", "benign"));
            std::map<std::string, double> undefended_asr;
            for (const std::string& attack : result.attack_names) {
                ExperimentRow row = eval_model(cell.models.at(attack).params, "undefended", attack);
                undefended_asr[attack] = row.asr.at(attack);
                result.rows.push_back(std::move(row));
            }
            for (const auto& tags : plan.combinations) {
                Checkpoint merged = merge_combination(plan, cell, seed, tags);
                ExperimentRow row = eval_model(merged, "merged", combo_label(tags));
                for (const std::string& attack : result.attack_names)
                    row.delta[attack] = row.asr.at(attack) - undefended_asr.at(attack);
                result.rows.push_back(std::move(row));
            }
        }
    }
    return result;
}

namespace {

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
    return buf;
}

} // namespace

std::string render_tsv(const ExperimentResult& result) {
    std::ostringstream os;
    os << "seed\trate\tkind\tname\tcacc";
    for (const std::string& attack : result.attack_names)
        os << "\tasr_" << attack << "\tdelta_" << attack;
    os << "\n";
    for (const ExperimentRow& row : result.rows) {
        os << row.seed << '\t' << row.rate << '\t' << row.kind << '\t' << row.name << '\t' << pct(row.cacc);
        for (const std::string& attack : result.attack_names) {
            os << '\t' << pct(row.asr.at(attack)) << '\t';
            if (auto it = row.delta.find(attack); it != row.delta.end()) os << pct(it->second);
        }
        os << "\n";
    }
    return os.str();
}

std::string render_table(const ExperimentResult& result) {
    std::ostringstream os;
    size_t name_width = 12;
    for (const ExperimentRow& row : result.rows) name_width = std::max(name_width, row.name.size() + 2);

    uint64_t last_seed = ~0ULL;
    double last_rate = -1.0;
    for (const ExperimentRow& row : result.rows) {
        if (row.seed != last_seed || row.rate != last_rate) {
            last_seed = row.seed;
            last_rate = row.rate;
            os << "\n== seed " << row.seed << "  poison rate " << pct(row.rate) << "% ==\n";
            os << std::string(name_width, ' ') << "  CACC";
            for (const std::string& attack : result.attack_names) {
                os << "  " << attack;
                os << std::string(attack.size() < 14 ? 14 - attack.size() : 1, ' ');
            }
            os << "\n";
        }
        std::string label = row.kind == "undefended" ? "undefended/" + row.name : row.name;
        os << label << std::string(label.size() < name_width ? name_width - label.size() : 1, ' ');
        os << "  " << pct(row.cacc);
        for (const std::string& attack : result.attack_names) {
            std::string entry = pct(row.asr.at(attack));
            if (auto it = row.delta.find(attack); it != row.delta.end())
                entry += " (" + std::string(it->second > 0 ? "+" : "") + pct(it->second) + ")";
            os << "  " << entry << std::string(entry.size() < 14 ? 14 - entry.size() : 1, ' ');
        }
        os << "\n";
    }
    return os.str();
}

} // namespace mrg
