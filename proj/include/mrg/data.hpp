#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrg/error.hpp"
#include "mrg/rng.hpp"

namespace mrg {

// Number of token ids at the top of every vocab set aside as attack triggers.
// The clean generator never emits them, so a clean-trained model has never
// seen a trigger embedding.
constexpr int kReservedTokens = 16;

struct Vocab {
    std::vector<std::string> tokens;  // index == token id

    int size() const { return static_cast<int>(tokens.size()); }
    int reserved_begin() const { return size() - kReservedTokens; }
    bool is_reserved(int id) const { return id >= reserved_begin(); }

    int find(const std::string& token) const;  // -1 if absent

    void save(const std::string& path) const;  // one token per line, id = line number
    static Vocab load(const std::string& path);
};

struct Example {
    std::vector<int> tokens;
    int label = 0;

    bool operator==(const Example& other) const = default;
};

struct Dataset {
    std::vector<Example> examples;
    std::string split_name;
    int num_classes = 0;
    uint64_t vocab_fingerprint = 0;

    size_t size() const { return examples.size(); }
    bool operator==(const Dataset& other) const = default;
};

uint64_t vocab_fingerprint(const Vocab& vocab);
uint64_t dataset_fingerprint(const Dataset& dataset);

struct SyntheticConfig {
    int classes = 2;
    int vocab_size = 2000;
    int len_min = 8;
    int len_max = 24;
    int train_size = 2000;
    int dev_size = 400;
    int test_size = 400;
    int signal_tokens_per_class = 30;  // disjoint per class, 0.5 probability mass
};

struct SyntheticCorpus {
    Dataset train, dev, test;
    Vocab vocab;
};

// Deterministic synthetic classification corpus: each class owns a disjoint
// signal-token set drawn with probability 0.5, the rest comes from a shared
// background pool. Reserved ids never appear. Identical (config, seed) pairs
// produce identical corpora on any platform (integer-only sampling path).
SyntheticCorpus gen_synthetic(const SyntheticConfig& config, uint64_t seed);

struct TsvLoadResult {
    Dataset dataset;
    Vocab vocab;
};

// `text<TAB>label` per line, whitespace-lowercase tokenization, vocab built
// from this file's most frequent tokens with the reserved range appended.
TsvLoadResult load_tsv_build_vocab(const std::string& path, int vocab_size, int num_classes);

// Same file format, tokens mapped through a fixed vocab; OOV tokens dropped.
Dataset load_tsv_with_vocab(const std::string& path, const Vocab& vocab, int num_classes);

void save_tsv(const Dataset& dataset, const Vocab& vocab, const std::string& path);

} // namespace mrg
