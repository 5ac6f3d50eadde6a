#include "mrg/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace mrg {

AttackKind parse_attack_kind(const std::string& name) {
    if (name == "badnet") return AttackKind::badnet;
    if (name == "insertsent") return AttackKind::insertsent;
    if (name == "bite-lite" || name == "bite_lite") return AttackKind::bite_lite;
    fail(ErrorCode::usage, "unknown attack '" + name + "' (expected badnet|insertsent|bite-lite)");
}

std::string attack_kind_name(AttackKind kind) {
    switch (kind) {
        case AttackKind::badnet: return "badnet";
        case AttackKind::insertsent: return "insertsent";
        case AttackKind::bite_lite: return "bite_lite";
    }
    return "?";
}

PoisonSpec default_spec(AttackKind kind, const Vocab& vocab, int target_label, double rate, uint64_t seed) {
    PoisonSpec spec;
    spec.kind = kind;
    spec.target_label = target_label;
    spec.rate = rate;
    spec.seed = seed;
    const int rb = vocab.reserved_begin();
    // badnet mirrors a 5-rare-word trigger list; insertsent a 4-token sentence.
    spec.badnet_triggers = {rb, rb + 1, rb + 2, rb + 3, rb + 4};
    spec.insertsent_sequence = {rb + 5, rb + 6, rb + 7, rb + 8};
    return spec;
}

std::vector<int> insert_token_at(const std::vector<int>& tokens, size_t position, int token) {
    std::vector<int> out;
    out.reserve(tokens.size() + 1);
    out.insert(out.end(), tokens.begin(), tokens.begin() + static_cast<ptrdiff_t>(position));
    out.push_back(token);
    out.insert(out.end(), tokens.begin() + static_cast<ptrdiff_t>(position), tokens.end());
    return out;
}

std::vector<int> insert_sequence_at(const std::vector<int>& tokens, size_t position, const std::vector<int>& seq) {
    std::vector<int> out;
    out.reserve(tokens.size() + seq.size());
    out.insert(out.end(), tokens.begin(), tokens.begin() + static_cast<ptrdiff_t>(position));
    out.insert(out.end(), seq.begin(), seq.end());
    out.insert(out.end(), tokens.begin() + static_cast<ptrdiff_t>(position), tokens.end());
    return out;
}

double bite_z_score(int present_total, int present_target, double base_rate) {
    double p_hat = static_cast<double>(present_target) / static_cast<double>(present_total);
    double se = std::sqrt(base_rate * (1.0 - base_rate) / static_cast<double>(present_total));
    return (p_hat - base_rate) / se;
}

namespace {

void check_trigger_range(const std::vector<int>& triggers, const Vocab& vocab, const char* attack) {
    for (int id : triggers)
        if (id < vocab.reserved_begin() || id >= vocab.size())
            fail(ErrorCode::bad_value,
                 std::string(attack) + ": trigger id " + std::to_string(id) + " outside the reserved vocab range");
}

// Sample k distinct values from [0, n) without replacement, order of draw.
std::vector<size_t> sample_without_replacement(size_t n, size_t k, SplitMix64& rng) {
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<size_t> out;
    out.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        size_t j = i + static_cast<size_t>(rng.bounded(n - i));
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

Example poison_example_bite(const Example& x, const PoisonSpec& spec,
                            const std::vector<int>& triggers, SplitMix64& rng) {
    if (triggers.empty()) fail(ErrorCode::bad_value, "bite_lite: empty fitted trigger list");
    Example out = x;
    size_t j = std::min(static_cast<size_t>(spec.bite_injections), triggers.size());
    std::vector<size_t> picks = sample_without_replacement(triggers.size(), j, rng);
    for (size_t p : picks) {
        size_t pos = static_cast<size_t>(rng.bounded(out.tokens.size() + 1));
        out.tokens = insert_token_at(out.tokens, pos, triggers[p]);
    }
    out.label = spec.target_label;
    return out;
}

Example poison_one(const Example& x, const PoisonSpec& spec, const std::vector<int>& bite_triggers,
                   uint64_t example_index) {
    SplitMix64 rng(spec.seed ^ example_index);
    switch (spec.kind) {
        case AttackKind::badnet: return poison_example_badnet(x, spec, rng);
        case AttackKind::insertsent: return poison_example_insertsent(x, spec, rng);
        case AttackKind::bite_lite: return poison_example_bite(x, spec, bite_triggers, rng);
    }
    fail(ErrorCode::bad_value, "unknown attack kind");
}

} // namespace

std::vector<int> fit_bite_lite(const Dataset& train, const PoisonSpec& spec, const Vocab& vocab) {
    if (spec.bite_iterations < 1 || spec.bite_budget < 1)
        fail(ErrorCode::bad_value, "bite_lite: iterations and budget must be >= 1");
    if (vocab.reserved_begin() < 1) fail(ErrorCode::bad_value, "bite_lite: no eligible tokens");

    const int n_tokens = vocab.reserved_begin();
    std::vector<Example> working(train.examples);
    SplitMix64 rng(spec.seed ^ fnv1a("bite_fit"));

    size_t n_target = 0;
    std::vector<size_t> target_rows;
    for (size_t i = 0; i < working.size(); ++i)
        if (working[i].label == spec.target_label) {
            ++n_target;
            target_rows.push_back(i);
        }
    const double base_rate = static_cast<double>(n_target) / static_cast<double>(working.size());
    if (n_target == 0 || n_target == working.size())
        fail(ErrorCode::bad_value, "bite_lite: target-label base rate is degenerate");

    std::vector<bool> selected(static_cast<size_t>(n_tokens), false);
    std::vector<int> triggers;
    const int rounds = std::min(spec.bite_iterations, spec.bite_budget);
    for (int round = 0; round < rounds; ++round) {
        // Presence counts over the working (already partially injected) corpus.
        std::vector<int> present_total(static_cast<size_t>(n_tokens), 0);
        std::vector<int> present_target(static_cast<size_t>(n_tokens), 0);
        std::vector<bool> seen(static_cast<size_t>(n_tokens), false);
        for (const Example& ex : working) {
            std::fill(seen.begin(), seen.end(), false);
            for (int id : ex.tokens) {
                if (id >= n_tokens || seen[static_cast<size_t>(id)]) continue;
                seen[static_cast<size_t>(id)] = true;
                ++present_total[static_cast<size_t>(id)];
                if (ex.label == spec.target_label) ++present_target[static_cast<size_t>(id)];
            }
        }

        int best = -1;
        double best_z = 0.0;
        for (int id = 0; id < n_tokens; ++id) {
            if (selected[static_cast<size_t>(id)] || present_total[static_cast<size_t>(id)] == 0) continue;
            double z = bite_z_score(present_total[static_cast<size_t>(id)],
                                    present_target[static_cast<size_t>(id)], base_rate);
            if (best < 0 || z > best_z) {  // lower id wins ties via strict >
                best = id;
                best_z = z;
            }
        }
        if (best < 0) fail(ErrorCode::bad_value, "bite_lite: no eligible tokens to score");
        selected[static_cast<size_t>(best)] = true;
        triggers.push_back(best);

        // Inject once, uniform position, into a fresh rate-sized slice of
        // target-label examples; this skews the next round's statistics.
        size_t slice = static_cast<size_t>(std::ceil(spec.rate * static_cast<double>(target_rows.size())));
        slice = std::min(slice, target_rows.size());
        for (size_t pick : sample_without_replacement(target_rows.size(), slice, rng)) {
            Example& ex = working[target_rows[pick]];
            size_t pos = static_cast<size_t>(rng.bounded(ex.tokens.size() + 1));
            ex.tokens = insert_token_at(ex.tokens, pos, best);
        }
    }
    return triggers;
}

PoisonResult poison_dataset(const Dataset& train, const PoisonSpec& spec, const Vocab& vocab) {
    if (spec.rate < 0.0 || spec.rate > 1.0)
        fail(ErrorCode::bad_value, "poison rate must be in [0,1]");
    if (spec.kind == AttackKind::badnet) check_trigger_range(spec.badnet_triggers, vocab, "badnet");
    if (spec.kind == AttackKind::insertsent) check_trigger_range(spec.insertsent_sequence, vocab, "insertsent");

    PoisonResult result;
    result.dataset = train;
    if (spec.kind == AttackKind::bite_lite)
        result.bite_triggers = fit_bite_lite(train, spec, vocab);

    const size_t want = static_cast<size_t>(std::ceil(spec.rate * static_cast<double>(train.size())));
    if (want == 0) return result;

    std::vector<size_t> eligible;
    for (size_t i = 0; i < train.size(); ++i)
        if (train.examples[i].label != spec.target_label) eligible.push_back(i);
    if (want > eligible.size())
        fail(ErrorCode::bad_value, "poison rate needs " + std::to_string(want) + " rows but only " +
                                   std::to_string(eligible.size()) + " non-target rows exist");

    SplitMix64 select_rng(spec.seed ^ fnv1a("select"));
    std::vector<size_t> picks = sample_without_replacement(eligible.size(), want, select_rng);
    std::sort(picks.begin(), picks.end());
    for (size_t pick : picks) {
        size_t row = eligible[pick];
        result.dataset.examples[row] =
            poison_one(train.examples[row], spec, result.bite_triggers, static_cast<uint64_t>(row));
        result.poisoned_indices.push_back(row);
    }
    return result;
}

Dataset make_poisoned_testset(const Dataset& test, const PoisonSpec& spec, const Vocab& vocab,
                              const std::vector<int>& bite_triggers) {
    if (spec.kind == AttackKind::badnet) check_trigger_range(spec.badnet_triggers, vocab, "badnet");
    if (spec.kind == AttackKind::insertsent) check_trigger_range(spec.insertsent_sequence, vocab, "insertsent");
    std::vector<int> fitted = bite_triggers;
    if (spec.kind == AttackKind::bite_lite && fitted.empty())
        fail(ErrorCode::bad_value, "bite_lite testset needs the fitted trigger list");

    Dataset out;
    out.split_name = test.split_name + "_poisoned";
    out.num_classes = test.num_classes;
    out.vocab_fingerprint = test.vocab_fingerprint;
    for (size_t i = 0; i < test.size(); ++i) {
        if (test.examples[i].label == spec.target_label) continue;
        out.examples.push_back(poison_one(test.examples[i], spec, fitted, static_cast<uint64_t>(i)));
    }
    if (out.examples.empty())
        fail(ErrorCode::bad_value, "poisoned test set is empty: every label already equals the target");
    return out;
}

} // namespace mrg
