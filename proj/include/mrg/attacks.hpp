#pragma once

#include <string>
#include <vector>

#include "mrg/data.hpp"

namespace mrg {

enum class AttackKind { badnet, insertsent, bite_lite };

AttackKind parse_attack_kind(const std::string& name);
std::string attack_kind_name(AttackKind kind);

struct PoisonSpec {
    AttackKind kind = AttackKind::badnet;
    int target_label = 0;
    double rate = 0.2;
    uint64_t seed = 0;

    // badnet: rare-word triggers, 1/3/5 insertions per example
    std::vector<int> badnet_triggers;
    std::vector<int> badnet_counts = {1, 3, 5};

    // insertsent: one contiguous trigger sequence
    std::vector<int> insertsent_sequence;

    // bite_lite: trigger budget m, injections per example j, fit iterations T
    int bite_budget = 8;
    int bite_injections = 1;
    int bite_iterations = 8;
};

// Default trigger choices inside the reserved vocab range.
PoisonSpec default_spec(AttackKind kind, const Vocab& vocab, int target_label, double rate, uint64_t seed);

// Insertion primitives shared by every attack.
std::vector<int> insert_token_at(const std::vector<int>& tokens, size_t position, int token);
std::vector<int> insert_sequence_at(const std::vector<int>& tokens, size_t position, const std::vector<int>& seq);

// Per-example poisoning. Rng is any type with bounded(n) -> uint64_t in [0,n);
// production code passes SplitMix64, tests may pass scripted stubs.
template <typename Rng>
Example poison_example_badnet(const Example& x, const PoisonSpec& spec, Rng& rng) {
    if (spec.badnet_triggers.empty()) fail(ErrorCode::bad_value, "badnet: empty trigger list");
    Example out = x;
    int n = spec.badnet_counts[static_cast<size_t>(rng.bounded(spec.badnet_counts.size()))];
    for (int i = 0; i < n; ++i) {
        int trigger = spec.badnet_triggers[static_cast<size_t>(rng.bounded(spec.badnet_triggers.size()))];
        size_t pos = static_cast<size_t>(rng.bounded(out.tokens.size() + 1));
        out.tokens = insert_token_at(out.tokens, pos, trigger);
    }
    out.label = spec.target_label;
    return out;
}

template <typename Rng>
Example poison_example_insertsent(const Example& x, const PoisonSpec& spec, Rng& rng) {
    if (spec.insertsent_sequence.empty()) fail(ErrorCode::bad_value, "insertsent: empty trigger sequence");
    Example out = x;
    size_t pos = static_cast<size_t>(rng.bounded(out.tokens.size() + 1));
    out.tokens = insert_sequence_at(out.tokens, pos, spec.insertsent_sequence);
    out.label = spec.target_label;
    return out;
}

// Iterative label-bias trigger selection: each round scores every non-reserved
// token by the one-proportion z-statistic of target-label frequency among
// examples containing it, appends the highest-z unselected token (lower id on
// ties) and injects it into a fresh rate-sized slice of target-label examples.
std::vector<int> fit_bite_lite(const Dataset& train, const PoisonSpec& spec, const Vocab& vocab);

// z-statistic used by fit_bite_lite, exposed for direct checking.
double bite_z_score(int present_total, int present_target, double base_rate);

struct PoisonResult {
    Dataset dataset;
    std::vector<size_t> poisoned_indices;
    std::vector<int> bite_triggers;  // fitted list, bite_lite only
};

// Replaces exactly ceil(rate*|train|) uniformly sampled non-target rows by
// their poisoned versions.
PoisonResult poison_dataset(const Dataset& train, const PoisonSpec& spec, const Vocab& vocab);

// Every test example whose label differs from the target, poisoned and
// relabeled; already-target examples are excluded.
Dataset make_poisoned_testset(const Dataset& test, const PoisonSpec& spec, const Vocab& vocab,
                              const std::vector<int>& bite_triggers = {});

} // namespace mrg
