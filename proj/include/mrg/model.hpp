#pragma once

#include <iosfwd>
#include <string>

#include "mrg/checkpoint.hpp"
#include "mrg/data.hpp"

namespace mrg {

struct ModelConfig {
    int vocab_size = 2000;
    int embed_dim = 32;
    int hidden_dim = 64;
    int classes = 2;
    int max_len = 128;

    std::string fingerprint() const;
    static ModelConfig from_checkpoint(const Checkpoint& ckpt);
    static ModelConfig load(const std::string& path);  // JSON config file
    void save(const std::string& path) const;
};

struct Hyper {
    int epochs = 3;
    int batch_size = 32;
    double learning_rate = 2e-3;
    double weight_decay = 0.0;  // decoupled, applied to emb/w1/w2 only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    uint64_t seed = 0;
};

// Parameter checkpoint schema: emb [V,d], w1 [d,h], b1 [h], w2 [h,C], b2 [C].
// Any checkpoint used as model weights must match it exactly.
void check_params_schema(const Checkpoint& params, const ModelConfig& config);

Checkpoint init_params(const ModelConfig& config, uint64_t seed);

// logits = w2' * relu(w1' * meanpool(emb[tokens]) + b1) + b2
std::vector<float> forward(const Checkpoint& params, const ModelConfig& config, const std::vector<int>& tokens);

std::vector<double> softmax(const std::vector<float>& logits);

// Argmax of forward; ties break toward the lower class id.
int predict(const Checkpoint& params, const ModelConfig& config, const std::vector<int>& tokens);

struct LossGrads {
    double loss = 0.0;
    Checkpoint grads;  // same schema as params
};

// Mean softmax cross-entropy and hand-derived gradients over a batch.
LossGrads loss_and_grads(const Checkpoint& params, const ModelConfig& config,
                         const std::vector<const Example*>& batch);

struct TrainResult {
    Checkpoint params;
    std::vector<double> dev_accuracy;  // one entry per epoch
};

TrainResult train(const ModelConfig& config, const Dataset& train_set, const Dataset& dev_set,
                  const Hyper& hyper, std::ostream* log = nullptr);

// Empirical diagonal Fisher over the first n_samples examples (gold labels):
// mean squared per-parameter gradient of the log-likelihood.
Checkpoint compute_fisher(const Checkpoint& params, const ModelConfig& config,
                          const Dataset& data, size_t n_samples);

double accuracy(const Checkpoint& params, const ModelConfig& config, const Dataset& data);

} // namespace mrg
