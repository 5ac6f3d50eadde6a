#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mrg/checkpoint.hpp"

namespace mrg {

enum class MergeMethod { wag, fisher, ties };

MergeMethod parse_merge_method(const std::string& name);
std::string merge_method_name(MergeMethod method);

struct MergeRequest {
    std::vector<Checkpoint> inputs;
    MergeMethod method = MergeMethod::wag;
    std::vector<Checkpoint> fishers;     // fisher only, positionally paired with inputs
    std::optional<Checkpoint> base;      // ties only
    double density = 0.2;                // ties: fraction of entries kept per tensor
    double lambda = 1.0;                 // ties: task-vector scale
    double epsilon = 1e-8;               // fisher: additive weight floor
};

// Elementwise arithmetic mean across checkpoints.
Checkpoint wag(const std::vector<Checkpoint>& inputs);

// Per-parameter weighted mean with weights F_k + epsilon; fishers must be
// elementwise >= 0.
Checkpoint fisher_merge(const std::vector<Checkpoint>& inputs,
                        const std::vector<Checkpoint>& fishers,
                        double epsilon = 1e-8);

// Task-vector merge: per-tensor magnitude trim to ceil(density*len) entries,
// per-parameter sign election over the trimmed vectors (ties go positive),
// mean over sign-agreeing entries, output = base + lambda * mean.
Checkpoint ties_merge(const Checkpoint& base,
                      const std::vector<Checkpoint>& inputs,
                      double density,
                      double lambda);

Checkpoint merge(const MergeRequest& request);

} // namespace mrg
