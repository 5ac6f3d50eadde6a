#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mrg/tensor.hpp"

namespace mrg {

// Named-tensor checkpoint plus provenance strings. std::map keeps iteration
// order lexicographic by name, which the container format and every merge
// reduction rely on for determinism.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> meta;

    bool operator==(const Checkpoint& other) const = default;
};

// (name, shape) list; two checkpoints are merge-compatible iff schemas match.
using Schema = std::vector<std::pair<std::string, std::vector<int64_t>>>;

Schema schema_of(const Checkpoint& ckpt);

// Returns the shared schema or fails naming the first offending tensor.
Schema validate_compatible(const std::vector<const Checkpoint*>& ckpts);

// v1 container: "MRG1", u64le header length, JSON header (per-tensor
// dtype/shape/begin/end plus a "__meta__" string map), then contiguous
// little-endian f32 payloads in lexicographic name order.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Serialized image of the container; save/load are thin file wrappers.
std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes);

// Hex digest over tensor names, shapes and payloads (meta excluded); used for
// provenance records and cache keys.
std::string tensor_fingerprint(const Checkpoint& ckpt);

} // namespace mrg
