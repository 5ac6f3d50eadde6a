#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mrg/attacks.hpp"
#include "mrg/data.hpp"
#include "mrg/eval.hpp"
#include "mrg/merge.hpp"
#include "mrg/model.hpp"

namespace {

using namespace mrg;

struct GlobalOptions {
    int verbosity = 1;
    int threads = 1;
    std::ostream* log() const { return verbosity > 0 ? &std::cerr : nullptr; }
};

Dataset load_dataset(const std::string& path, const Vocab& vocab, int num_classes) {
    Dataset d = load_tsv_with_vocab(path, vocab, num_classes);
    d.split_name = std::filesystem::path(path).stem().string();
    return d;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
    out << content;
    if (!out) fail(ErrorCode::io, "write failed for '" + path + "'");
}

void cmd_gen_data(const GlobalOptions& global, const SyntheticConfig& config, uint64_t seed,
                  const std::string& out_dir) {
    SyntheticCorpus corpus = gen_synthetic(config, seed);
    std::filesystem::create_directories(out_dir);
    save_tsv(corpus.train, corpus.vocab, out_dir + "/train.tsv");
    save_tsv(corpus.dev, corpus.vocab, out_dir + "/dev.tsv");
    save_tsv(corpus.test, corpus.vocab, out_dir + "/test.tsv");
    corpus.vocab.save(out_dir + "/vocab.txt");
    ModelConfig model;
    model.vocab_size = config.vocab_size;
    model.classes = config.classes;
    model.save(out_dir + "/model_config.json");
    if (auto* log = global.log())
        *log << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size()
             << " examples to " << out_dir << "\n";
}

void cmd_poison(const GlobalOptions& global, const std::string& attack, double rate, int target,
                uint64_t seed, const std::string& in_path, const std::string& vocab_path,
                const std::string& out_path, const std::string& test_path,
                const std::string& emit_testset) {
    Vocab vocab = Vocab::load(vocab_path);
    Dataset train_set = load_dataset(in_path, vocab, 0);
    PoisonSpec spec = default_spec(parse_attack_kind(attack), vocab, target, rate, seed);

    PoisonResult result = poison_dataset(train_set, spec, vocab);
    save_tsv(result.dataset, vocab, out_path);
    if (auto* log = global.log())
        *log << "poisoned " << result.poisoned_indices.size() << " of " << train_set.size() << " rows ("
             << attack << ")\n";

    if (!emit_testset.empty()) {
        if (test_path.empty())
            fail(ErrorCode::usage, "--emit-testset requires --test with the clean test set");
        Dataset test_set = load_dataset(test_path, vocab, 0);
        Dataset poisoned_test = make_poisoned_testset(test_set, spec, vocab, result.bite_triggers);
        save_tsv(poisoned_test, vocab, emit_testset);
        if (auto* log = global.log())
            *log << "wrote " << poisoned_test.size() << " poisoned test examples\n";
    }
}

void cmd_train(const GlobalOptions& global, const std::string& config_path, const std::string& train_path,
               const std::string& dev_path, const std::string& vocab_path, uint64_t seed, int epochs,
               const std::string& out_path) {
    ModelConfig config = ModelConfig::load(config_path);
    Vocab vocab = Vocab::load(vocab_path);
    if (vocab.size() != config.vocab_size)
        fail(ErrorCode::bad_value, "vocab size " + std::to_string(vocab.size()) +
                                   " does not match model config " + std::to_string(config.vocab_size));
    Dataset train_set = load_dataset(train_path, vocab, config.classes);
    Dataset dev_set = load_dataset(dev_path, vocab, config.classes);
    Hyper hyper;
    hyper.seed = seed;
    hyper.epochs = epochs;
    TrainResult result = train(config, train_set, dev_set, hyper, global.log());
    save_checkpoint(result.params, out_path);
}

void cmd_fisher(const GlobalOptions& global, const std::string& ckpt_path, const std::string& data_path,
                const std::string& vocab_path, size_t n, const std::string& out_path) {
    Checkpoint params = load_checkpoint(ckpt_path);
    ModelConfig config = ModelConfig::from_checkpoint(params);
    Vocab vocab = Vocab::load(vocab_path);
    Dataset data = load_dataset(data_path, vocab, config.classes);
    Checkpoint fisher = compute_fisher(params, config, data, std::min(n, data.size()));
    save_checkpoint(fisher, out_path);
    if (auto* log = global.log()) *log << "fisher over " << fisher.meta.at("fisher.n_samples") << " samples\n";
}

void cmd_merge(const std::string& method, const std::vector<std::string>& inputs,
               const std::vector<std::string>& fishers, const std::string& base_path, double density,
               double lambda, double epsilon, const std::string& out_path) {
    MergeRequest request;
    request.method = parse_merge_method(method);
    for (const auto& path : inputs) request.inputs.push_back(load_checkpoint(path));
    for (const auto& path : fishers) request.fishers.push_back(load_checkpoint(path));
    if (!base_path.empty()) request.base = load_checkpoint(base_path);
    request.density = density;
    request.lambda = lambda;
    request.epsilon = epsilon;
    save_checkpoint(merge(request), out_path);
}

void cmd_eval(const std::string& ckpt_path, const std::string& clean_path,
              const std::string& poisoned_path, int target, const std::string& vocab_path) {
    Checkpoint params = load_checkpoint(ckpt_path);
    ModelConfig config = ModelConfig::from_checkpoint(params);
    Vocab vocab = Vocab::load(vocab_path);
    Dataset clean = load_dataset(clean_path, vocab, config.classes);
    std::cout << "cacc\t" << cacc(params, config, clean) << "\n";
    if (!poisoned_path.empty()) {
        Dataset poisoned = load_dataset(poisoned_path, vocab, config.classes);
        std::cout << "asr\t" << asr(params, config, poisoned, target) << "\n";
    }
}

void cmd_experiment(const GlobalOptions& global, const std::string& plan_path, const std::string& out_dir) {
    ExperimentPlan plan =
        plan_path.empty() ? ExperimentPlan::default_plan() : ExperimentPlan::from_json_file(plan_path);
    std::filesystem::create_directories(out_dir);
    ExperimentResult result = run_experiment(plan, out_dir + "/cache", global.log());
    write_text(out_dir + "/report.tsv", render_tsv(result));
    write_text(out_dir + "/report.txt", render_table(result));
    if (auto* log = global.log()) *log << "report written to " << out_dir << "\n";
    std::cout << render_table(result);
}

void cmd_inspect(const std::string& ckpt_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    for (const auto& [name, tensor] : ckpt.tensors)
        std::cout << name << "\t" << shape_str(tensor.shape) << "\n";
    for (const auto& [key, value] : ckpt.meta) std::cout << "meta." << key << "\t" << value << "\n";
    std::cout << "fingerprint\t" << tensor_fingerprint(ckpt) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mrg - backdoor sanitization by model merging"};
    app.require_subcommand(1);

    GlobalOptions global;
    app.add_option("-v,--verbosity", global.verbosity, "0 = quiet, 1 = progress on stderr");
    app.add_option("--threads", global.threads, "worker thread cap")->check(CLI::PositiveNumber);

    // gen-data
    SyntheticConfig gen_config;
    uint64_t gen_seed = 1;
    std::string gen_out = "data";
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic classification corpus");
    gen->add_option("--classes", gen_config.classes);
    gen->add_option("--vocab", gen_config.vocab_size);
    gen->add_option("--len-min", gen_config.len_min);
    gen->add_option("--len-max", gen_config.len_max);
    gen->add_option("--train-size", gen_config.train_size);
    gen->add_option("--dev-size", gen_config.dev_size);
    gen->add_option("--test-size", gen_config.test_size);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out, "output directory");

    // poison
    std::string p_attack = "badnet", p_in, p_vocab, p_out, p_test, p_emit;
    double p_rate = 0.2;
    int p_target = 1;
    uint64_t p_seed = 1;
    auto* poison = app.add_subcommand("poison", "poison a training set");
    poison->add_option("--attack", p_attack, "badnet|insertsent|bite-lite");
    poison->add_option("--rate", p_rate);
    poison->add_option("--target", p_target);
    poison->add_option("--seed", p_seed);
    poison->add_option("--in", p_in)->required();
    poison->add_option("--vocab", p_vocab)->required();
    poison->add_option("--out", p_out)->required();
    poison->add_option("--test", p_test, "clean test set, needed with --emit-testset");
    poison->add_option("--emit-testset", p_emit, "also write the poisoned test set here");

    // train
    std::string t_config, t_train, t_dev, t_vocab, t_out;
    uint64_t t_seed = 1;
    int t_epochs = 3;
    auto* train_cmd = app.add_subcommand("train", "train the desk-scale classifier");
    train_cmd->add_option("--config", t_config)->required();
    train_cmd->add_option("--train", t_train)->required();
    train_cmd->add_option("--dev", t_dev)->required();
    train_cmd->add_option("--vocab", t_vocab)->required();
    train_cmd->add_option("--seed", t_seed);
    train_cmd->add_option("--epochs", t_epochs);
    train_cmd->add_option("--out", t_out)->required();

    // fisher
    std::string f_ckpt, f_data, f_vocab, f_out;
    size_t f_n = 512;
    auto* fisher = app.add_subcommand("fisher", "estimate the diagonal Fisher of a checkpoint");
    fisher->add_option("--ckpt", f_ckpt)->required();
    fisher->add_option("--data", f_data)->required();
    fisher->add_option("--vocab", f_vocab)->required();
    fisher->add_option("--n", f_n);
    fisher->add_option("--out", f_out)->required();

    // merge
    std::string m_method = "wag", m_base, m_out;
    std::vector<std::string> m_inputs, m_fishers;
    double m_density = 0.2, m_lambda = 1.0, m_epsilon = 1e-8;
    auto* merge_cmd = app.add_subcommand("merge", "merge checkpoints");
    merge_cmd->add_option("--method", m_method, "wag|fisher|ties");
    merge_cmd->add_option("--input", m_inputs)->required();
    merge_cmd->add_option("--fisher", m_fishers, "fisher checkpoints, paired with --input order");
    merge_cmd->add_option("--base", m_base, "base checkpoint (ties)");
    merge_cmd->add_option("--density", m_density);
    merge_cmd->add_option("--lambda", m_lambda);
    merge_cmd->add_option("--epsilon", m_epsilon);
    merge_cmd->add_option("--output", m_out)->required();

    // eval
    std::string e_ckpt, e_clean, e_poisoned, e_vocab;
    int e_target = 1;
    auto* eval_cmd = app.add_subcommand("eval", "compute CACC (and ASR) of a checkpoint");
    eval_cmd->add_option("--ckpt", e_ckpt)->required();
    eval_cmd->add_option("--clean", e_clean)->required();
    eval_cmd->add_option("--vocab", e_vocab)->required();
    eval_cmd->add_option("--poisoned", e_poisoned);
    eval_cmd->add_option("--target", e_target);

    // experiment
    std::string x_plan, x_out = "experiment";
    auto* experiment = app.add_subcommand("experiment", "run the full merge-and-evaluate grid");
    experiment->add_option("--plan", x_plan, "JSON plan file (defaults built in)");
    experiment->add_option("--out", x_out, "output directory");

    // inspect
    std::string i_ckpt;
    auto* inspect = app.add_subcommand("inspect", "print checkpoint schema and metadata");
    inspect->add_option("ckpt", i_ckpt, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) cmd_gen_data(global, gen_config, gen_seed, gen_out);
        if (poison->parsed())
            cmd_poison(global, p_attack, p_rate, p_target, p_seed, p_in, p_vocab, p_out, p_test, p_emit);
        if (train_cmd->parsed())
            cmd_train(global, t_config, t_train, t_dev, t_vocab, t_seed, t_epochs, t_out);
        if (fisher->parsed()) cmd_fisher(global, f_ckpt, f_data, f_vocab, f_n, f_out);
        if (merge_cmd->parsed())
            cmd_merge(m_method, m_inputs, m_fishers, m_base, m_density, m_lambda, m_epsilon, m_out);
        if (eval_cmd->parsed()) cmd_eval(e_ckpt, e_clean, e_poisoned, e_target, e_vocab);
        if (experiment->parsed()) cmd_experiment(global, x_plan, x_out);
        if (inspect->parsed()) cmd_inspect(i_ckpt);
    } catch (const mrg::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
