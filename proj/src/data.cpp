#include "mrg/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace mrg {

int Vocab::find(const std::string& token) const {
    for (int i = 0; i < size(); ++i)
        if (tokens[i] == token) return i;
    return -1;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
    for (const auto& token : tokens) out << token << '\n';
    if (!out) fail(ErrorCode::io, "write failed for '" + path + "'");
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open '" + path + "'");
    Vocab vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) fail(ErrorCode::bad_value, "empty token in vocab file '" + path + "'");
        vocab.tokens.push_back(line);
    }
    if (vocab.size() <= kReservedTokens)
        fail(ErrorCode::bad_value, "vocab '" + path + "' smaller than the reserved range");
    return vocab;
}

uint64_t vocab_fingerprint(const Vocab& vocab) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& token : vocab.tokens) {
        h = (h ^ fnv1a(token)) * 0x100000001B3ULL;
    }
    return h;
}

uint64_t dataset_fingerprint(const Dataset& dataset) {
    uint64_t h = 0xCBF29CE484222325ULL ^ dataset.vocab_fingerprint;
    auto mix = [&h](uint64_t v) {
        h ^= v;
        h *= 0x100000001B3ULL;
    };
    mix(static_cast<uint64_t>(dataset.num_classes));
    for (const Example& ex : dataset.examples) {
        mix(static_cast<uint64_t>(ex.label) | (static_cast<uint64_t>(ex.tokens.size()) << 32));
        for (int id : ex.tokens) mix(static_cast<uint64_t>(id));
    }
    return h;
}

namespace {

std::string token_name(int id, int reserved_begin) {
    if (id >= reserved_begin) return "trg" + std::to_string(id - reserved_begin);
    return "w" + std::to_string(id);
}

Dataset gen_split(const SyntheticConfig& cfg, uint64_t seed, const std::string& name,
                  int split_size, uint64_t vocab_fp) {
    SplitMix64 rng(seed ^ fnv1a(name));
    const int signal_total = cfg.classes * cfg.signal_tokens_per_class;
    const int background_begin = signal_total;
    const int background_size = cfg.vocab_size - kReservedTokens - signal_total;

    Dataset split;
    split.split_name = name;
    split.num_classes = cfg.classes;
    split.vocab_fingerprint = vocab_fp;
    split.examples.reserve(static_cast<size_t>(split_size));
    for (int i = 0; i < split_size; ++i) {
        Example ex;
        ex.label = i % cfg.classes;  // round-robin keeps every split balanced
        int len = cfg.len_min + static_cast<int>(rng.bounded(static_cast<uint64_t>(cfg.len_max - cfg.len_min + 1)));
        ex.tokens.reserve(static_cast<size_t>(len));
        for (int t = 0; t < len; ++t) {
            if (rng.coin()) {
                ex.tokens.push_back(ex.label * cfg.signal_tokens_per_class +
                                    static_cast<int>(rng.bounded(static_cast<uint64_t>(cfg.signal_tokens_per_class))));
            } else {
                ex.tokens.push_back(background_begin +
                                    static_cast<int>(rng.bounded(static_cast<uint64_t>(background_size))));
            }
        }
        split.examples.push_back(std::move(ex));
    }
    return split;
}

} // namespace

SyntheticCorpus gen_synthetic(const SyntheticConfig& cfg, uint64_t seed) {
    if (cfg.classes < 2) fail(ErrorCode::bad_value, "gen_synthetic: need at least 2 classes");
    if (cfg.vocab_size < 200) fail(ErrorCode::bad_value, "gen_synthetic: vocab size must be >= 200");
    if (cfg.len_min < 1 || cfg.len_max < cfg.len_min)
        fail(ErrorCode::bad_value, "gen_synthetic: bad length range");
    const int signal_total = cfg.classes * cfg.signal_tokens_per_class;
    if (cfg.vocab_size - kReservedTokens - signal_total < 1)
        fail(ErrorCode::bad_value, "gen_synthetic: vocab too small for " + std::to_string(signal_total) +
                                   " signal tokens plus reserved range");

    SyntheticCorpus corpus;
    corpus.vocab.tokens.reserve(static_cast<size_t>(cfg.vocab_size));
    const int reserved_begin = cfg.vocab_size - kReservedTokens;
    for (int i = 0; i < cfg.vocab_size; ++i) corpus.vocab.tokens.push_back(token_name(i, reserved_begin));

    uint64_t fp = vocab_fingerprint(corpus.vocab);
    corpus.train = gen_split(cfg, seed, "train", cfg.train_size, fp);
    corpus.dev = gen_split(cfg, seed, "dev", cfg.dev_size, fp);
    corpus.test = gen_split(cfg, seed, "test", cfg.test_size, fp);
    return corpus;
}

namespace {

std::vector<std::string> tokenize_lower(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// Optional sidecar `<path>.labels` maps string labels to class ids.
std::map<std::string, int> load_label_map(const std::string& tsv_path) {
    std::map<std::string, int> map;
    std::string sidecar = tsv_path + ".labels";
    if (!std::filesystem::exists(sidecar)) return map;
    std::ifstream in(sidecar);
    if (!in) fail(ErrorCode::io, "cannot open '" + sidecar + "'");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            fail(ErrorCode::bad_value, sidecar + ":" + std::to_string(line_no) + ": expected name<TAB>id");
        map[line.substr(0, tab)] = std::stoi(line.substr(tab + 1));
    }
    return map;
}

struct RawTsv {
    std::vector<std::pair<std::vector<std::string>, int>> rows;
    int max_label = -1;
};

RawTsv read_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open '" + path + "'");
    std::map<std::string, int> label_map = load_label_map(path);

    RawTsv raw;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto tab = line.rfind('\t');
        if (tab == std::string::npos)
            fail(ErrorCode::bad_value, path + ":" + std::to_string(line_no) + ": missing tab separator");
        std::string text = line.substr(0, tab);
        std::string label_str = line.substr(tab + 1);
        int label;
        if (auto it = label_map.find(label_str); it != label_map.end()) {
            label = it->second;
        } else {
            try {
                size_t pos = 0;
                label = std::stoi(label_str, &pos);
                if (pos != label_str.size()) throw std::invalid_argument(label_str);
            } catch (const std::exception&) {
                fail(ErrorCode::bad_value,
                     path + ":" + std::to_string(line_no) + ": label '" + label_str + "' is not an integer");
            }
        }
        if (label < 0) fail(ErrorCode::bad_value, path + ":" + std::to_string(line_no) + ": negative label");
        raw.max_label = std::max(raw.max_label, label);
        raw.rows.emplace_back(tokenize_lower(text), label);
    }
    if (raw.rows.empty()) fail(ErrorCode::bad_value, "empty dataset file '" + path + "'");
    return raw;
}

Dataset map_rows(const RawTsv& raw, const Vocab& vocab, int num_classes, const std::string& path) {
    Dataset dataset;
    dataset.num_classes = num_classes > 0 ? num_classes : raw.max_label + 1;
    dataset.vocab_fingerprint = vocab_fingerprint(vocab);
    if (raw.max_label >= dataset.num_classes)
        fail(ErrorCode::bad_value, "label " + std::to_string(raw.max_label) + " exceeds class count in '" + path + "'");
    std::map<std::string, int> index;
    for (int i = 0; i < vocab.size(); ++i) index[vocab.tokens[static_cast<size_t>(i)]] = i;
    for (const auto& [tokens, label] : raw.rows) {
        Example ex;
        ex.label = label;
        for (const auto& token : tokens) {
            auto it = index.find(token);
            if (it != index.end()) ex.tokens.push_back(it->second);  // OOV dropped
        }
        if (!ex.tokens.empty()) dataset.examples.push_back(std::move(ex));
    }
    if (dataset.examples.empty())
        fail(ErrorCode::bad_value, "no examples survived vocab mapping in '" + path + "'");
    return dataset;
}

} // namespace

TsvLoadResult load_tsv_build_vocab(const std::string& path, int vocab_size, int num_classes) {
    RawTsv raw = read_tsv(path);
    if (vocab_size <= kReservedTokens)
        fail(ErrorCode::bad_value, "vocab size must exceed the reserved range");

    std::map<std::string, int64_t> counts;
    for (const auto& [tokens, label] : raw.rows)
        for (const auto& token : tokens) ++counts[token];

    // Most frequent first; equal counts resolve lexicographically.
    std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    TsvLoadResult result;
    const size_t keep = static_cast<size_t>(vocab_size - kReservedTokens);
    for (size_t i = 0; i < ranked.size() && i < keep; ++i) result.vocab.tokens.push_back(ranked[i].first);
    for (int i = 0; i < kReservedTokens; ++i) result.vocab.tokens.push_back("trg" + std::to_string(i));
    result.dataset = map_rows(raw, result.vocab, num_classes, path);
    return result;
}

Dataset load_tsv_with_vocab(const std::string& path, const Vocab& vocab, int num_classes) {
    return map_rows(read_tsv(path), vocab, num_classes, path);
}

void save_tsv(const Dataset& dataset, const Vocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
    for (const auto& ex : dataset.examples) {
        for (size_t i = 0; i < ex.tokens.size(); ++i) {
            if (ex.tokens[i] < 0 || ex.tokens[i] >= vocab.size())
                fail(ErrorCode::bad_value, "token id " + std::to_string(ex.tokens[i]) + " outside vocab");
            out << (i ? " " : "") << vocab.tokens[static_cast<size_t>(ex.tokens[i])];
        }
        out << '\t' << ex.label << '\n';
    }
    if (!out) fail(ErrorCode::io, "write failed for '" + path + "'");
}

} // namespace mrg
