#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mrg/eval.hpp"

using namespace mrg;

namespace {

// Model whose bias pins every prediction to `cls`, all other weights zero.
Checkpoint constant_model(const ModelConfig& config, int cls) {
    Checkpoint params = init_params(config, 1);
    for (auto& [name, tensor] : params.tensors) std::fill(tensor.data.begin(), tensor.data.end(), 0.0f);
    params.tensors.at("b2").data[static_cast<size_t>(cls)] = 5.0f;
    return params;
}

} // namespace

TEST_CASE("cacc: perfect and constant predictors") {
    ModelConfig config{.vocab_size = 50, .embed_dim = 4, .hidden_dim = 4, .classes = 2, .max_len = 16};
    Dataset test;
    test.num_classes = 2;
    for (int i = 0; i < 20; ++i) test.examples.push_back({{i % 40, (i * 3) % 40}, i % 2});

    Checkpoint constant = constant_model(config, 0);
    CHECK(cacc(constant, config, test) == 0.5);  // balanced 2-class set

    // per-example loop oracle
    Checkpoint params = init_params(config, 9);
    size_t correct = 0;
    for (const Example& ex : test.examples)
        if (predict(params, config, ex.tokens) == ex.label) ++correct;
    CHECK(cacc(params, config, test) == static_cast<double>(correct) / 20.0);

    CHECK_THROWS_AS(cacc(params, config, Dataset{}), Error);
}

TEST_CASE("asr: hard-wired target model scores 1.0") {
    ModelConfig config{.vocab_size = 50, .embed_dim = 4, .hidden_dim = 4, .classes = 2, .max_len = 16};
    Dataset poisoned;
    poisoned.num_classes = 2;
    for (int i = 0; i < 10; ++i) poisoned.examples.push_back({{i, i + 1}, 1});

    CHECK(asr(constant_model(config, 1), config, poisoned, 1) == 1.0);
    CHECK(asr(constant_model(config, 0), config, poisoned, 1) == 0.0);

    // per-example loop oracle
    Checkpoint params = init_params(config, 10);
    size_t hits = 0;
    for (const Example& ex : poisoned.examples)
        if (predict(params, config, ex.tokens) == 1) ++hits;
    CHECK(asr(params, config, poisoned, 1) == static_cast<double>(hits) / 10.0);

    // precondition: every label must equal the target
    poisoned.examples[0].label = 0;
    CHECK_THROWS_AS(asr(params, config, poisoned, 1), Error);
}

TEST_CASE("evaluate fills the report") {
    ModelConfig config{.vocab_size = 50, .embed_dim = 4, .hidden_dim = 4, .classes = 2, .max_len = 16};
    Dataset clean;
    clean.num_classes = 2;
    for (int i = 0; i < 8; ++i) clean.examples.push_back({{i}, i % 2});
    Dataset poisoned;
    poisoned.num_classes = 2;
    for (int i = 0; i < 4; ++i) poisoned.examples.push_back({{i}, 1});

    Checkpoint params = constant_model(config, 1);
    EvalReport report = evaluate(params, config, clean, &poisoned, 1, "badnet");
    CHECK(report.cacc == 0.5);
    CHECK(report.asr == 1.0);
    CHECK(report.n_clean == 8);
    CHECK(report.n_poisoned == 4);
    CHECK(report.attack_tag == "badnet");
    CHECK(report.model_fingerprint == tensor_fingerprint(params));
}

TEST_CASE("run_experiment: benign-only plan yields a single CACC row") {
    ExperimentPlan plan;
    plan.dataset.train_size = 120;
    plan.dataset.dev_size = 30;
    plan.dataset.test_size = 30;
    plan.model.vocab_size = plan.dataset.vocab_size;
    plan.model.embed_dim = 8;
    plan.model.hidden_dim = 16;
    plan.hyper.epochs = 1;
    plan.attacks.clear();
    plan.combinations = {};
    plan.rates = {0.2};
    plan.fill_default_combinations();  // no attacks -> only the all-benign combo

    ExperimentResult result = run_experiment(plan, "");
    REQUIRE(!result.rows.empty());
    CHECK(result.rows[0].kind == "benign");
    CHECK(result.rows[0].asr.empty());
}

TEST_CASE("run_experiment: merged rows carry deltas and the report renders") {
    ExperimentPlan plan;
    plan.dataset.train_size = 300;
    plan.dataset.dev_size = 60;
    plan.dataset.test_size = 60;
    plan.model.vocab_size = plan.dataset.vocab_size;
    plan.model.embed_dim = 8;
    plan.model.hidden_dim = 16;
    plan.hyper.epochs = 2;
    plan.attacks = {AttackKind::badnet};
    plan.fill_default_combinations();

    ExperimentResult result = run_experiment(plan, "");
    const ExperimentRow* undefended = result.find(1, 0.2, "undefended", "badnet");
    const ExperimentRow* merged = result.find(1, 0.2, "merged", "benign+badnet");
    REQUIRE(undefended);
    REQUIRE(merged);
    CHECK(merged->delta.at("badnet") ==
          doctest::Approx(merged->asr.at("badnet") - undefended->asr.at("badnet")));

    std::string tsv = render_tsv(result);
    CHECK(tsv.find("asr_badnet") != std::string::npos);
    CHECK(tsv.find("benign+badnet") != std::string::npos);
    std::string table = render_table(result);
    CHECK(table.find("undefended/badnet") != std::string::npos);
}

TEST_CASE("experiment caching reuses trained checkpoints") {
    ExperimentPlan plan;
    plan.dataset.train_size = 120;
    plan.dataset.dev_size = 30;
    plan.dataset.test_size = 30;
    plan.model.vocab_size = plan.dataset.vocab_size;
    plan.model.embed_dim = 8;
    plan.model.hidden_dim = 16;
    plan.hyper.epochs = 1;
    plan.attacks = {AttackKind::badnet};
    plan.fill_default_combinations();

    auto cache_dir = std::filesystem::temp_directory_path() / "mrg_eval_cache_test";
    std::filesystem::remove_all(cache_dir);
    ExperimentResult first = run_experiment(plan, cache_dir.string());
    size_t files = std::distance(std::filesystem::directory_iterator(cache_dir),
                                 std::filesystem::directory_iterator{});
    CHECK(files == 2);  // benign + badnet
    ExperimentResult second = run_experiment(plan, cache_dir.string());
    CHECK(render_tsv(first) == render_tsv(second));
    std::filesystem::remove_all(cache_dir);
}

TEST_CASE("plan parsing from JSON") {
    auto path = std::filesystem::temp_directory_path() / "mrg_plan_test.json";
    {
        std::ofstream out(path, std::ios::trunc);
        out << R"({
            "dataset": {"train_size": 100, "dev_size": 20, "test_size": 20, "seed": 9},
            "attacks": ["badnet", "insertsent"],
            "rates": [0.05, 0.1],
            "target": 0,
            "merge": {"method": "ties", "density": 0.3, "lambda": 0.8},
            "seeds": [4, 5]
        })";
    }
    ExperimentPlan plan = ExperimentPlan::from_json_file(path.string());
    CHECK(plan.dataset.train_size == 100);
    CHECK(plan.data_seed == 9);
    CHECK(plan.attacks.size() == 2);
    CHECK(plan.rates == std::vector<double>{0.05, 0.1});
    CHECK(plan.target_label == 0);
    CHECK(plan.method == MergeMethod::ties);
    CHECK(plan.density == 0.3);
    CHECK(plan.lambda == 0.8);
    CHECK(plan.seeds == std::vector<uint64_t>{4, 5});
    CHECK(plan.combinations.size() == 3);  // two singles + all
    std::filesystem::remove(path);
}
