#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <limits>

#include "mrg/checkpoint.hpp"
#include "mrg/rng.hpp"

using namespace mrg;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.tensors.emplace("alpha", Tensor({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}));
    c.tensors.emplace("beta", Tensor({3}, {-1.0f, 0.0f, 1.0f}));
    c.tensors.emplace("gamma", Tensor({1}, {42.0f}));
    c.meta["seed"] = "7";
    c.meta["attack"] = "badnet";
    return c;
}

ErrorCode code_of(const std::vector<uint8_t>& bytes) {
    try {
        (void)deserialize_checkpoint(bytes);
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected deserialize to throw");
    return ErrorCode::bad_value;
}

} // namespace

TEST_CASE("round-trip is bit-exact and re-save is byte-identical") {
    Checkpoint c = sample_checkpoint();
    std::vector<uint8_t> bytes = serialize_checkpoint(c);
    Checkpoint restored = deserialize_checkpoint(bytes);
    CHECK(restored == c);
    CHECK(serialize_checkpoint(restored) == bytes);
}

TEST_CASE("empty tensor map still yields a valid container") {
    Checkpoint c;
    c.meta["note"] = "empty";
    Checkpoint restored = deserialize_checkpoint(serialize_checkpoint(c));
    CHECK(restored == c);
}

TEST_CASE("header offsets equal the running sum of payload sizes") {
    Checkpoint c = sample_checkpoint();
    std::vector<uint8_t> bytes = serialize_checkpoint(c);
    uint64_t h = 0;
    for (int i = 0; i < 8; ++i) h |= static_cast<uint64_t>(bytes[4 + i]) << (8 * i);
    std::string header(bytes.begin() + 12, bytes.begin() + 12 + static_cast<ptrdiff_t>(h));
    // Recomputed by hand: alpha 4 floats, beta 3, gamma 1, lexicographic order.
    CHECK(header.find("\"alpha\":{\"begin\":0,\"dtype\":\"f32\",\"end\":16") != std::string::npos);
    CHECK(header.find("\"beta\":{\"begin\":16,\"dtype\":\"f32\",\"end\":28") != std::string::npos);
    CHECK(header.find("\"gamma\":{\"begin\":28,\"dtype\":\"f32\",\"end\":32") != std::string::npos);
    CHECK(bytes.size() == 12 + h + 32);
}

TEST_CASE("randomized round-trips, including 1-element tensors") {
    SplitMix64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        Checkpoint c;
        int n_tensors = static_cast<int>(rng.bounded(5));
        for (int t = 0; t < n_tensors; ++t) {
            std::vector<int64_t> shape{static_cast<int64_t>(1 + rng.bounded(4))};
            if (rng.coin()) shape.push_back(static_cast<int64_t>(1 + rng.bounded(4)));
            Tensor tensor = Tensor::zeros(shape);
            for (float& v : tensor.data) v = static_cast<float>(rng.uniform01() * 2.0 - 1.0);
            c.tensors.emplace("t" + std::to_string(t), std::move(tensor));
        }
        c.meta["trial"] = std::to_string(trial);
        std::vector<uint8_t> bytes = serialize_checkpoint(c);
        CHECK(deserialize_checkpoint(bytes) == c);
        CHECK(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes);
    }
}

TEST_CASE("corrupted containers raise their distinct errors") {
    std::vector<uint8_t> good = serialize_checkpoint(sample_checkpoint());

    SUBCASE("bad magic") {
        std::vector<uint8_t> bytes = good;
        bytes[0] = 'X';
        CHECK(code_of(bytes) == ErrorCode::bad_magic);
    }
    SUBCASE("truncated payload") {
        std::vector<uint8_t> bytes(good.begin(), good.end() - 4);
        CHECK(code_of(bytes) == ErrorCode::truncated);
    }
    SUBCASE("truncated header") {
        std::vector<uint8_t> bytes(good.begin(), good.begin() + 16);
        CHECK(code_of(bytes) == ErrorCode::truncated);
    }
    SUBCASE("overlapping offsets") {
        std::string header(good.begin() + 12, good.end());
        size_t pos = header.find("\"begin\":16");
        REQUIRE(pos != std::string::npos);
        std::vector<uint8_t> bytes = good;
        std::memcpy(bytes.data() + 12 + pos, "\"begin\":12", 10);
        CHECK(code_of(bytes) == ErrorCode::overlapping_offsets);
    }
    SUBCASE("shape/size mismatch") {
        // gamma declared [1] but its span is widened by shifting begin back
        // while keeping end, so the payload no longer matches the shape.
        std::string header(good.begin() + 12, good.end());
        size_t pos = header.find("\"begin\":28");
        REQUIRE(pos != std::string::npos);
        std::vector<uint8_t> bytes = good;
        std::memcpy(bytes.data() + 12 + pos, "\"begin\":16", 10);
        // beta now ends where gamma begins at 16: contiguity check sees gamma
        // spanning [16,32) after beta [16,28) -> flag as overlap first; make
        // beta end at 16 too so the span is contiguous but wrong-sized.
        size_t bpos = header.find("\"end\":28");
        REQUIRE(bpos != std::string::npos);
        std::memcpy(bytes.data() + 12 + bpos, "\"end\":16", 8);
        CHECK(code_of(bytes) == ErrorCode::shape_mismatch);
    }
    SUBCASE("non-finite values") {
        Checkpoint c;
        c.tensors.emplace("x", Tensor({1}, {1.0f}));
        std::vector<uint8_t> bytes = serialize_checkpoint(c);
        const uint32_t inf_bits = 0x7F800000u;
        std::memcpy(bytes.data() + bytes.size() - 4, &inf_bits, 4);
        CHECK(code_of(bytes) == ErrorCode::non_finite);
    }
}

TEST_CASE("save rejects non-finite tensors") {
    Checkpoint c;
    c.tensors.emplace("x", Tensor({1}, {1.0f}));
    c.tensors.at("x").data[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(serialize_checkpoint(c), Error);
}

TEST_CASE("save/load file wrappers") {
    auto path = std::filesystem::temp_directory_path() / "mrg_ckpt_test.mrg";
    Checkpoint c = sample_checkpoint();
    save_checkpoint(c, path.string());
    CHECK(load_checkpoint(path.string()) == c);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path.string()), Error);
}

TEST_CASE("validate_compatible") {
    Checkpoint a = sample_checkpoint();
    Checkpoint b = sample_checkpoint();

    SUBCASE("identical schemas agree") {
        Schema s = validate_compatible({&a, &b});
        CHECK(s == schema_of(a));
    }
    SUBCASE("single checkpoint returns its own schema") {
        CHECK(validate_compatible({&a}) == schema_of(a));
    }
    SUBCASE("missing tensor is named") {
        b.tensors.erase("beta");
        try {
            validate_compatible({&a, &b});
            FAIL("expected mismatch");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::shape_mismatch);
            CHECK(std::string(e.what()).find("beta") != std::string::npos);
        }
    }
    SUBCASE("shape deviation is named") {
        b.tensors.at("beta") = Tensor::zeros({4});
        CHECK_THROWS_AS(validate_compatible({&a, &b}), Error);
    }
    SUBCASE("empty list is rejected") {
        CHECK_THROWS_AS(validate_compatible({}), Error);
    }
}
