#include "mrg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>

#include <json.hpp>

#include "mrg/rng.hpp"

namespace mrg {

namespace {

std::string hex64(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace

std::string ModelConfig::fingerprint() const {
    std::string repr = "V=" + std::to_string(vocab_size) + ";d=" + std::to_string(embed_dim) +
                       ";h=" + std::to_string(hidden_dim) + ";C=" + std::to_string(classes) +
                       ";L=" + std::to_string(max_len);
    return hex64(fnv1a(repr));
}

ModelConfig ModelConfig::from_checkpoint(const Checkpoint& ckpt) {
    auto need = [&ckpt](const char* name) -> const Tensor& {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            fail(ErrorCode::shape_mismatch, std::string("checkpoint lacks model tensor '") + name + "'");
        return it->second;
    };
    ModelConfig config;
    const Tensor& emb = need("emb");
    const Tensor& w2 = need("w2");
    if (emb.shape.size() != 2 || w2.shape.size() != 2)
        fail(ErrorCode::shape_mismatch, "model tensors have unexpected rank");
    config.vocab_size = static_cast<int>(emb.shape[0]);
    config.embed_dim = static_cast<int>(emb.shape[1]);
    config.hidden_dim = static_cast<int>(w2.shape[0]);
    config.classes = static_cast<int>(w2.shape[1]);
    if (auto it = ckpt.meta.find("model.max_len"); it != ckpt.meta.end())
        config.max_len = std::stoi(it->second);
    check_params_schema(ckpt, config);
    return config;
}

ModelConfig ModelConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::bad_value, "config '" + path + "' is not valid JSON: " + e.what());
    }
    ModelConfig config;
    config.vocab_size = j.value("vocab_size", config.vocab_size);
    config.embed_dim = j.value("embed_dim", config.embed_dim);
    config.hidden_dim = j.value("hidden_dim", config.hidden_dim);
    config.classes = j.value("classes", config.classes);
    config.max_len = j.value("max_len", config.max_len);
    if (config.vocab_size < 1 || config.embed_dim < 1 || config.hidden_dim < 1 ||
        config.classes < 2 || config.max_len < 1)
        fail(ErrorCode::bad_value, "config '" + path + "' has non-positive model dimensions");
    return config;
}

void ModelConfig::save(const std::string& path) const {
    nlohmann::json j{{"vocab_size", vocab_size},
                     {"embed_dim", embed_dim},
                     {"hidden_dim", hidden_dim},
                     {"classes", classes},
                     {"max_len", max_len}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
}

void check_params_schema(const Checkpoint& params, const ModelConfig& config) {
    const int64_t V = config.vocab_size, d = config.embed_dim, h = config.hidden_dim, C = config.classes;
    const Schema expected = {
        {"b1", {h}}, {"b2", {C}}, {"emb", {V, d}}, {"w1", {d, h}}, {"w2", {h, C}},
    };
    Schema actual = schema_of(params);
    if (actual != expected)
        fail(ErrorCode::shape_mismatch, "checkpoint schema does not match model config " + config.fingerprint());
}

Checkpoint init_params(const ModelConfig& config, uint64_t seed) {
    const int64_t V = config.vocab_size, d = config.embed_dim, h = config.hidden_dim, C = config.classes;
    SplitMix64 rng(seed ^ fnv1a("init"));
    auto normal_tensor = [&rng](std::vector<int64_t> shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (float& v : t.data) v = static_cast<float>(rng.normal() * 0.02);
        return t;
    };
    Checkpoint params;
    // Fill order is fixed (lexicographic, matching iteration order) so the
    // same seed always yields the same bytes.
    params.tensors.emplace("b1", normal_tensor({h}));
    params.tensors.emplace("b2", normal_tensor({C}));
    params.tensors.emplace("emb", normal_tensor({V, d}));
    params.tensors.emplace("w1", normal_tensor({d, h}));
    params.tensors.emplace("w2", normal_tensor({h, C}));
    params.meta["model.config"] = config.fingerprint();
    params.meta["model.max_len"] = std::to_string(config.max_len);
    return params;
}

namespace {

struct ForwardCache {
    std::vector<int> used_tokens;   // after truncation to max_len
    std::vector<double> pooled;     // [d]
    std::vector<double> pre1;       // [h]
    std::vector<double> hidden;     // [h] relu(pre1)
    std::vector<double> logits;     // [C]
};

ForwardCache forward_cached(const Checkpoint& params, const ModelConfig& config,
                            const std::vector<int>& tokens) {
    if (tokens.empty()) fail(ErrorCode::bad_value, "forward: empty token list");
    const int64_t d = config.embed_dim, h = config.hidden_dim, C = config.classes;
    const Tensor& emb = params.tensors.at("emb");
    const Tensor& w1 = params.tensors.at("w1");
    const Tensor& b1 = params.tensors.at("b1");
    const Tensor& w2 = params.tensors.at("w2");
    const Tensor& b2 = params.tensors.at("b2");

    ForwardCache cache;
    size_t len = std::min(tokens.size(), static_cast<size_t>(config.max_len));
    cache.used_tokens.assign(tokens.begin(), tokens.begin() + static_cast<ptrdiff_t>(len));
    for (int id : cache.used_tokens)
        if (id < 0 || id >= config.vocab_size)
            fail(ErrorCode::bad_value, "forward: token id " + std::to_string(id) + " out of range");

    cache.pooled.assign(static_cast<size_t>(d), 0.0);
    for (int id : cache.used_tokens)
        for (int64_t i = 0; i < d; ++i) cache.pooled[static_cast<size_t>(i)] += emb.at(id, i);
    for (double& v : cache.pooled) v /= static_cast<double>(len);

    cache.pre1.assign(static_cast<size_t>(h), 0.0);
    for (int64_t j = 0; j < h; ++j) {
        double acc = b1.data[static_cast<size_t>(j)];
        for (int64_t i = 0; i < d; ++i) acc += cache.pooled[static_cast<size_t>(i)] * w1.at(i, j);
        cache.pre1[static_cast<size_t>(j)] = acc;
    }
    cache.hidden.resize(static_cast<size_t>(h));
    for (int64_t j = 0; j < h; ++j)
        cache.hidden[static_cast<size_t>(j)] = std::max(0.0, cache.pre1[static_cast<size_t>(j)]);

    cache.logits.assign(static_cast<size_t>(C), 0.0);
    for (int64_t c = 0; c < C; ++c) {
        double acc = b2.data[static_cast<size_t>(c)];
        for (int64_t j = 0; j < h; ++j) acc += cache.hidden[static_cast<size_t>(j)] * w2.at(j, c);
        cache.logits[static_cast<size_t>(c)] = acc;
    }
    return cache;
}

std::vector<double> softmax_d(const std::vector<double>& logits) {
    double max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(logits.size());
    double sum = 0.0;
    for (size_t c = 0; c < logits.size(); ++c) {
        probs[c] = std::exp(logits[c] - max_logit);
        sum += probs[c];
    }
    for (double& p : probs) p /= sum;
    return probs;
}

// Flat gradient accumulator with the params schema, double precision.
struct GradAccum {
    std::map<std::string, std::vector<double>> buffers;

    explicit GradAccum(const Checkpoint& params) {
        for (const auto& [name, tensor] : params.tensors)
            buffers.emplace(name, std::vector<double>(tensor.numel(), 0.0));
    }

    Checkpoint to_checkpoint(const Checkpoint& params, double scale) const {
        Checkpoint out;
        for (const auto& [name, tensor] : params.tensors) {
            Tensor g = Tensor::zeros(tensor.shape);
            const auto& buf = buffers.at(name);
            for (size_t i = 0; i < buf.size(); ++i) g.data[i] = static_cast<float>(buf[i] * scale);
            out.tensors.emplace(name, std::move(g));
        }
        return out;
    }
};

// Accumulates d(CE)/d(theta) for one example into `accum`; returns the CE loss.
double backprop_example(const Checkpoint& params, const ModelConfig& config,
                        const Example& ex, GradAccum& accum,
                        GradAccum* squared = nullptr) {
    if (ex.label < 0 || ex.label >= config.classes)
        fail(ErrorCode::bad_value, "label " + std::to_string(ex.label) + " out of range");
    const int64_t d = config.embed_dim, h = config.hidden_dim, C = config.classes;
    const Tensor& w1 = params.tensors.at("w1");
    const Tensor& w2 = params.tensors.at("w2");

    ForwardCache cache = forward_cached(params, config, ex.tokens);
    std::vector<double> probs = softmax_d(cache.logits);
    double loss = -std::log(std::max(probs[static_cast<size_t>(ex.label)], 1e-300));

    std::vector<double> dlogits = probs;
    dlogits[static_cast<size_t>(ex.label)] -= 1.0;

    // Per-example gradient, written into a scratch map when the squared
    // accumulation (Fisher) is requested, otherwise straight into accum.
    std::optional<GradAccum> scratch_storage;
    if (squared) scratch_storage.emplace(params);
    GradAccum& g = squared ? *scratch_storage : accum;

    auto& gw2 = g.buffers.at("w2");
    auto& gb2 = g.buffers.at("b2");
    for (int64_t c = 0; c < C; ++c) {
        gb2[static_cast<size_t>(c)] += dlogits[static_cast<size_t>(c)];
        for (int64_t j = 0; j < h; ++j)
            gw2[static_cast<size_t>(j * C + c)] += cache.hidden[static_cast<size_t>(j)] * dlogits[static_cast<size_t>(c)];
    }

    std::vector<double> dpre1(static_cast<size_t>(h), 0.0);
    for (int64_t j = 0; j < h; ++j) {
        if (cache.pre1[static_cast<size_t>(j)] <= 0.0) continue;
        double acc = 0.0;
        for (int64_t c = 0; c < C; ++c) acc += w2.at(j, c) * dlogits[static_cast<size_t>(c)];
        dpre1[static_cast<size_t>(j)] = acc;
    }

    auto& gw1 = g.buffers.at("w1");
    auto& gb1 = g.buffers.at("b1");
    for (int64_t j = 0; j < h; ++j) {
        gb1[static_cast<size_t>(j)] += dpre1[static_cast<size_t>(j)];
        for (int64_t i = 0; i < d; ++i)
            gw1[static_cast<size_t>(i * h + j)] += cache.pooled[static_cast<size_t>(i)] * dpre1[static_cast<size_t>(j)];
    }

    std::vector<double> dpooled(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < h; ++j) acc += w1.at(i, j) * dpre1[static_cast<size_t>(j)];
        dpooled[static_cast<size_t>(i)] = acc;
    }

    auto& gemb = g.buffers.at("emb");
    const double inv_len = 1.0 / static_cast<double>(cache.used_tokens.size());
    for (int id : cache.used_tokens)
        for (int64_t i = 0; i < d; ++i)
            gemb[static_cast<size_t>(id) * static_cast<size_t>(d) + static_cast<size_t>(i)] +=
                dpooled[static_cast<size_t>(i)] * inv_len;

    if (squared) {
        for (auto& [name, buf] : scratch_storage->buffers) {
            auto& dst = squared->buffers.at(name);
            for (size_t i = 0; i < buf.size(); ++i) dst[i] += buf[i] * buf[i];
        }
    }
    return loss;
}

} // namespace

std::vector<float> forward(const Checkpoint& params, const ModelConfig& config,
                           const std::vector<int>& tokens) {
    check_params_schema(params, config);
    ForwardCache cache = forward_cached(params, config, tokens);
    std::vector<float> logits(cache.logits.size());
    for (size_t c = 0; c < logits.size(); ++c) logits[c] = static_cast<float>(cache.logits[c]);
    return logits;
}

std::vector<double> softmax(const std::vector<float>& logits) {
    std::vector<double> d(logits.begin(), logits.end());
    return softmax_d(d);
}

int predict(const Checkpoint& params, const ModelConfig& config, const std::vector<int>& tokens) {
    std::vector<float> logits = forward(params, config, tokens);
    int best = 0;
    for (int c = 1; c < static_cast<int>(logits.size()); ++c)
        if (logits[static_cast<size_t>(c)] > logits[static_cast<size_t>(best)]) best = c;
    return best;
}

LossGrads loss_and_grads(const Checkpoint& params, const ModelConfig& config,
                         const std::vector<const Example*>& batch) {
    if (batch.empty()) fail(ErrorCode::bad_value, "loss_and_grads: empty batch");
    check_params_schema(params, config);
    GradAccum accum(params);
    double loss_sum = 0.0;
    for (const Example* ex : batch) loss_sum += backprop_example(params, config, *ex, accum);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    LossGrads result;
    result.loss = loss_sum * inv_n;
    result.grads = accum.to_checkpoint(params, inv_n);
    return result;
}

double accuracy(const Checkpoint& params, const ModelConfig& config, const Dataset& data) {
    if (data.examples.empty()) fail(ErrorCode::bad_value, "accuracy: empty dataset");
    size_t correct = 0;
    for (const Example& ex : data.examples)
        if (predict(params, config, ex.tokens) == ex.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(const ModelConfig& config, const Dataset& train_set, const Dataset& dev_set,
                  const Hyper& hyper, std::ostream* log) {
    if (train_set.examples.empty()) fail(ErrorCode::bad_value, "train: empty training set");
    for (const Example& ex : train_set.examples)
        if (!ex.tokens.empty() && *std::max_element(ex.tokens.begin(), ex.tokens.end()) >= config.vocab_size)
            fail(ErrorCode::bad_value, "train: dataset token ids exceed the configured vocab");
    if (train_set.num_classes != config.classes)
        fail(ErrorCode::bad_value, "train: dataset declares " + std::to_string(train_set.num_classes) +
                                   " classes, config expects " + std::to_string(config.classes));

    Checkpoint params = init_params(config, hyper.seed);
    check_params_schema(params, config);

    // Adam state in doubles, updated in fixed tensor order.
    std::map<std::string, std::vector<double>> m_state, v_state;
    for (const auto& [name, tensor] : params.tensors) {
        m_state.emplace(name, std::vector<double>(tensor.numel(), 0.0));
        v_state.emplace(name, std::vector<double>(tensor.numel(), 0.0));
    }

    TrainResult result;
    SplitMix64 shuffle_rng(hyper.seed ^ fnv1a("shuffle"));
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    int64_t step = 0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        // Seeded Fisher-Yates; batch order is part of the determinism contract.
        for (size_t i = order.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(shuffle_rng.bounded(i));
            std::swap(order[i - 1], order[j]);
        }
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hyper.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(hyper.batch_size));
            std::vector<const Example*> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(&train_set.examples[order[i]]);

            LossGrads lg = loss_and_grads(params, config, batch);
            ++step;
            const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
            for (auto& [name, tensor] : params.tensors) {
                const Tensor& g = lg.grads.tensors.at(name);
                auto& m = m_state.at(name);
                auto& v = v_state.at(name);
                const double decay = (name == "b1" || name == "b2") ? 0.0 : hyper.weight_decay;
                for (size_t i = 0; i < tensor.numel(); ++i) {
                    double gi = g.data[i];
                    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
                    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
                    double w = tensor.data[i];
                    double update = hyper.learning_rate *
                                    ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + hyper.adam_epsilon) +
                                     decay * w);
                    tensor.data[i] = static_cast<float>(w - update);
                }
            }
        }
        double dev_acc = dev_set.examples.empty() ? 0.0 : accuracy(params, config, dev_set);
        result.dev_accuracy.push_back(dev_acc);
        if (log) *log << "epoch " << (epoch + 1) << "/" << hyper.epochs << " dev_acc=" << dev_acc << "\n";
    }

    params.meta["model.config"] = config.fingerprint();
    params.meta["model.max_len"] = std::to_string(config.max_len);
    params.meta["train.seed"] = std::to_string(hyper.seed);
    params.meta["train.epochs"] = std::to_string(hyper.epochs);
    params.meta["train.data"] = hex64(dataset_fingerprint(train_set));
    result.params = std::move(params);
    return result;
}

Checkpoint compute_fisher(const Checkpoint& params, const ModelConfig& config,
                          const Dataset& data, size_t n_samples) {
    if (data.examples.empty()) fail(ErrorCode::bad_value, "compute_fisher: empty dataset");
    if (n_samples > data.size())
        fail(ErrorCode::bad_value, "compute_fisher: n_samples exceeds dataset size");
    if (n_samples == 0) n_samples = data.size();
    check_params_schema(params, config);

    GradAccum unused(params);
    GradAccum squared(params);
    for (size_t i = 0; i < n_samples; ++i)
        backprop_example(params, config, data.examples[i], unused, &squared);

    Checkpoint fisher = squared.to_checkpoint(params, 1.0 / static_cast<double>(n_samples));
    fisher.meta["fisher.n_samples"] = std::to_string(n_samples);
    fisher.meta["fisher.params"] = tensor_fingerprint(params);
    return fisher;
}

} // namespace mrg
