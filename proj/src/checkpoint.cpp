#include "mrg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mrg {

namespace {

constexpr char kMagic[4] = {'M', 'R', 'G', '1'};
constexpr const char* kMetaKey = "__meta__";

void require_valid_names(const Checkpoint& ckpt) {
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (name.empty()) fail(ErrorCode::bad_value, "tensor name must be non-empty");
        if (name == kMetaKey) fail(ErrorCode::bad_value, std::string("tensor name collides with reserved key ") + kMetaKey);
        if (!tensor.all_finite())
            fail(ErrorCode::non_finite, "tensor '" + name + "' contains non-finite values");
    }
}

} // namespace

Schema schema_of(const Checkpoint& ckpt) {
    Schema schema;
    schema.reserve(ckpt.tensors.size());
    for (const auto& [name, tensor] : ckpt.tensors) schema.emplace_back(name, tensor.shape);
    return schema;
}

Schema validate_compatible(const std::vector<const Checkpoint*>& ckpts) {
    if (ckpts.empty()) fail(ErrorCode::bad_value, "validate_compatible: empty checkpoint list");
    Schema ref = schema_of(*ckpts[0]);
    for (size_t k = 1; k < ckpts.size(); ++k) {
        Schema other = schema_of(*ckpts[k]);
        size_t limit = std::min(ref.size(), other.size());
        for (size_t i = 0; i < limit; ++i) {
            if (ref[i].first != other[i].first)
                fail(ErrorCode::shape_mismatch,
                     "checkpoint " + std::to_string(k) + " deviates at tensor '" +
                     (ref[i].first < other[i].first ? ref[i].first : other[i].first) + "'");
            if (ref[i].second != other[i].second)
                fail(ErrorCode::shape_mismatch,
                     "checkpoint " + std::to_string(k) + ": tensor '" + ref[i].first + "' has shape " +
                     shape_str(other[i].second) + ", expected " + shape_str(ref[i].second));
        }
        if (ref.size() != other.size()) {
            const Schema& longer = ref.size() > other.size() ? ref : other;
            fail(ErrorCode::shape_mismatch,
                 "checkpoint " + std::to_string(k) + " schema mismatch at tensor '" + longer[limit].first + "'");
        }
    }
    return ref;
}

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    require_valid_names(ckpt);

    nlohmann::json header;
    uint64_t offset = 0;
    for (const auto& [name, tensor] : ckpt.tensors) {
        uint64_t bytes = tensor.numel() * sizeof(float);
        header[name] = {
            {"dtype", "f32"},
            {"shape", tensor.shape},
            {"begin", offset},
            {"end", offset + bytes},
        };
        offset += bytes;
    }
    header[kMetaKey] = ckpt.meta;

    std::string header_text = header.dump();
    std::vector<uint8_t> out;
    out.reserve(12 + header_text.size() + offset);
    out.insert(out.end(), kMagic, kMagic + 4);
    uint64_t h = header_text.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((h >> (8 * i)) & 0xFF));
    out.insert(out.end(), header_text.begin(), header_text.end());
    for (const auto& [name, tensor] : ckpt.tensors) {
        size_t pos = out.size();
        out.resize(pos + tensor.numel() * sizeof(float));
        std::memcpy(out.data() + pos, tensor.data.data(), tensor.numel() * sizeof(float));
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 12) fail(ErrorCode::truncated, "container shorter than fixed header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        fail(ErrorCode::bad_magic, "bad magic bytes, not an MRG1 container");
    uint64_t h = 0;
    for (int i = 0; i < 8; ++i) h |= static_cast<uint64_t>(bytes[4 + i]) << (8 * i);
    if (bytes.size() < 12 + h) fail(ErrorCode::truncated, "header table truncated");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<ptrdiff_t>(h));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::bad_value, std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) fail(ErrorCode::bad_value, "header must be a JSON object");

    Checkpoint ckpt;
    const size_t data_start = 12 + h;
    const uint64_t data_size = bytes.size() - data_start;
    uint64_t expected_begin = 0;

    // nlohmann objects iterate in key order, which is the payload order.
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == kMetaKey) {
            for (auto& [k, v] : it.value().items()) {
                if (!v.is_string()) fail(ErrorCode::bad_value, "meta value for '" + k + "' is not a string");
                ckpt.meta[k] = v.get<std::string>();
            }
            continue;
        }
        const auto& entry = it.value();
        if (it.key().empty()) fail(ErrorCode::bad_value, "empty tensor name in header");
        if (!entry.contains("dtype") || entry["dtype"] != "f32")
            fail(ErrorCode::bad_value, "tensor '" + it.key() + "': unsupported dtype");
        if (!entry.contains("shape") || !entry.contains("begin") || !entry.contains("end"))
            fail(ErrorCode::bad_value, "tensor '" + it.key() + "': incomplete header entry");

        std::vector<int64_t> shape = entry["shape"].get<std::vector<int64_t>>();
        uint64_t begin = entry["begin"].get<uint64_t>();
        uint64_t end = entry["end"].get<uint64_t>();
        if (begin != expected_begin || end < begin)
            fail(ErrorCode::overlapping_offsets,
                 "tensor '" + it.key() + "': offsets [" + std::to_string(begin) + "," + std::to_string(end) +
                 ") overlap or leave a gap (expected begin " + std::to_string(expected_begin) + ")");
        size_t numel = checked_numel(shape);
        if (end - begin != numel * sizeof(float))
            fail(ErrorCode::shape_mismatch,
                 "tensor '" + it.key() + "': payload size " + std::to_string(end - begin) +
                 " does not match shape " + shape_str(shape));
        if (end > data_size) fail(ErrorCode::truncated, "tensor '" + it.key() + "': payload truncated");

        std::vector<float> data(numel);
        std::memcpy(data.data(), bytes.data() + data_start + begin, numel * sizeof(float));
        Tensor tensor(std::move(shape), std::move(data));
        if (!tensor.all_finite())
            fail(ErrorCode::non_finite, "tensor '" + it.key() + "' contains non-finite values");
        ckpt.tensors.emplace(it.key(), std::move(tensor));
        expected_begin = end;
    }
    if (expected_begin != data_size)
        fail(ErrorCode::bad_value, "container has " + std::to_string(data_size - expected_begin) + " trailing bytes");
    return ckpt;
}

std::string tensor_fingerprint(const Checkpoint& ckpt) {
    uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](const void* p, size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001B3ULL;
        }
    };
    for (const auto& [name, tensor] : ckpt.tensors) {
        mix(name.data(), name.size());
        mix(tensor.shape.data(), tensor.shape.size() * sizeof(int64_t));
        mix(tensor.data.data(), tensor.data.size() * sizeof(float));
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<uint8_t> bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(ErrorCode::io, "read failed for '" + path + "'");
    return deserialize_checkpoint(bytes);
}

} // namespace mrg
