#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mrg/merge.hpp"
#include "mrg/rng.hpp"

using namespace mrg;

namespace {

Checkpoint scalar_ckpt(float v) {
    Checkpoint c;
    c.tensors.emplace("w", Tensor({1}, {v}));
    return c;
}

Checkpoint vector_ckpt(const std::vector<float>& values, const char* name = "w") {
    Checkpoint c;
    c.tensors.emplace(name, Tensor({static_cast<int64_t>(values.size())}, values));
    return c;
}

Checkpoint random_ckpt(SplitMix64& rng, const Schema& schema, float lo = -2.0f, float hi = 2.0f) {
    Checkpoint c;
    for (const auto& [name, shape] : schema) {
        Tensor t = Tensor::zeros(shape);
        for (float& v : t.data) v = lo + static_cast<float>(rng.uniform01()) * (hi - lo);
        c.tensors.emplace(name, std::move(t));
    }
    return c;
}

void check_close(const Checkpoint& a, const Checkpoint& b, double tol) {
    REQUIRE(schema_of(a) == schema_of(b));
    for (const auto& [name, ta] : a.tensors) {
        const Tensor& tb = b.tensors.at(name);
        for (size_t i = 0; i < ta.numel(); ++i)
            CHECK(std::abs(static_cast<double>(ta.data[i]) - static_cast<double>(tb.data[i])) <= tol);
    }
}

// Brute-force TIES reference. Materializes trim, election and disjoint mean
// step by step, independently of the production path: trimming selects
// survivors by exhaustively counting, for every entry, how many entries beat
// it (larger magnitude, or equal magnitude at a lower index).
std::vector<float> ties_oracle(const std::vector<float>& base,
                               const std::vector<std::vector<float>>& models,
                               double density, double lambda) {
    const size_t len = base.size();
    const size_t n = models.size();
    const size_t keep = static_cast<size_t>(std::ceil(density * static_cast<double>(len)));

    std::vector<std::vector<double>> trimmed(n, std::vector<double>(len, 0.0));
    for (size_t k = 0; k < n; ++k) {
        std::vector<double> tau(len);
        for (size_t j = 0; j < len; ++j)
            tau[j] = static_cast<double>(models[k][j]) - static_cast<double>(base[j]);
        for (size_t j = 0; j < len; ++j) {
            size_t beaten_by = 0;
            for (size_t o = 0; o < len; ++o) {
                if (o == j) continue;
                if (std::abs(tau[o]) > std::abs(tau[j])) ++beaten_by;
                else if (std::abs(tau[o]) == std::abs(tau[j]) && o < j) ++beaten_by;
            }
            if (beaten_by < keep) trimmed[k][j] = tau[j];
        }
    }

    std::vector<float> out(base.begin(), base.end());
    for (size_t j = 0; j < len; ++j) {
        double sum = 0.0;
        bool any = false;
        for (size_t k = 0; k < n; ++k) {
            sum += trimmed[k][j];
            if (trimmed[k][j] != 0.0) any = true;
        }
        if (!any) continue;
        double gamma = sum >= 0.0 ? 1.0 : -1.0;
        double acc = 0.0;
        size_t count = 0;
        for (size_t k = 0; k < n; ++k) {
            if (trimmed[k][j] != 0.0 && trimmed[k][j] * gamma > 0.0) {
                acc += trimmed[k][j];
                ++count;
            }
        }
        if (count > 0)
            out[j] = static_cast<float>(static_cast<double>(base[j]) + lambda * acc / static_cast<double>(count));
    }
    return out;
}

} // namespace

TEST_CASE("wag: identity, scalar mean, idempotence") {
    Checkpoint c = vector_ckpt({1.0f, -2.0f, 3.0f});
    CHECK(wag({c}).tensors == c.tensors);

    Checkpoint mean = wag({scalar_ckpt(1.0f), scalar_ckpt(3.0f)});
    CHECK(mean.tensors.at("w").data[0] == 2.0f);

    Checkpoint same = wag({c, c, c, c});
    CHECK(same.tensors == c.tensors);
}

TEST_CASE("wag: schema mismatch and empty input are errors") {
    CHECK_THROWS_AS(wag({}), Error);
    CHECK_THROWS_AS(wag({scalar_ckpt(1.0f), vector_ckpt({1.0f, 2.0f})}), Error);
}

TEST_CASE("wag records provenance") {
    Checkpoint merged = wag({scalar_ckpt(1.0f), scalar_ckpt(3.0f)});
    CHECK(merged.meta.at("merge.method") == "wag");
    CHECK(merged.meta.at("merge.n_inputs") == "2");
}

TEST_CASE("fisher_merge: hand-evaluated weighted mean") {
    // w=(0,10), F=(3,1), epsilon -> 0: (3*0 + 1*10) / 4 = 2.5
    Checkpoint merged = fisher_merge({scalar_ckpt(0.0f), scalar_ckpt(10.0f)},
                                     {scalar_ckpt(3.0f), scalar_ckpt(1.0f)}, 1e-12);
    CHECK(merged.tensors.at("w").data[0] == doctest::Approx(2.5).epsilon(1e-6));
}

TEST_CASE("fisher_merge: uniform fishers reduce to wag") {
    SplitMix64 rng(31);
    Schema schema = {{"a", {2, 3}}, {"b", {4}}};
    std::vector<Checkpoint> inputs = {random_ckpt(rng, schema), random_ckpt(rng, schema),
                                      random_ckpt(rng, schema)};
    std::vector<Checkpoint> fishers;
    for (size_t k = 0; k < inputs.size(); ++k) {
        Checkpoint f;
        for (const auto& [name, shape] : schema) f.tensors.emplace(name, Tensor::full(shape, 0.7f));
        fishers.push_back(std::move(f));
    }
    check_close(fisher_merge(inputs, fishers, 1e-8), wag(inputs), 1e-6);
}

TEST_CASE("fisher_merge: single input passes through for any fisher") {
    SplitMix64 rng(37);
    Schema schema = {{"w", {5}}};
    Checkpoint input = random_ckpt(rng, schema);
    Checkpoint fisher = random_ckpt(rng, schema, 0.0f, 3.0f);
    check_close(fisher_merge({input}, {fisher}, 1e-8), input, 1e-6);
}

TEST_CASE("fisher_merge: negative fisher entries and length mismatch rejected") {
    CHECK_THROWS_AS(fisher_merge({scalar_ckpt(1.0f)}, {scalar_ckpt(-0.5f)}, 1e-8), Error);
    CHECK_THROWS_AS(fisher_merge({scalar_ckpt(1.0f)}, {}, 1e-8), Error);
    CHECK_THROWS_AS(fisher_merge({scalar_ckpt(1.0f)}, {scalar_ckpt(1.0f)}, 0.0), Error);
}

TEST_CASE("ties_merge: density=1, single input, lambda=1 passes the input through") {
    SplitMix64 rng(41);
    Schema schema = {{"a", {3, 3}}, {"b", {2}}};
    Checkpoint base = random_ckpt(rng, schema);
    Checkpoint input = random_ckpt(rng, schema);
    Checkpoint merged = ties_merge(base, {input}, 1.0, 1.0);
    CHECK(merged.tensors == input.tensors);
}

TEST_CASE("ties_merge: no trim, no sign conflict equals wag of inputs") {
    Checkpoint base = vector_ckpt({0.0f, 0.0f, 0.0f});
    Checkpoint m1 = vector_ckpt({1.0f, 2.0f, 3.0f});
    Checkpoint m2 = vector_ckpt({3.0f, 4.0f, 5.0f});
    Checkpoint merged = ties_merge(base, {m1, m2}, 1.0, 1.0);
    check_close(merged, wag({m1, m2}), 1e-6);
}

TEST_CASE("ties_merge: hand-enumerated trim/elect/mean example") {
    Checkpoint base = vector_ckpt({0.0f, 0.0f, 0.0f, 0.0f});
    Checkpoint m1 = vector_ckpt({1.0f, -2.0f, 0.1f, 3.0f});
    Checkpoint m2 = vector_ckpt({1.0f, 2.0f, -0.1f, -3.0f});
    Checkpoint merged = ties_merge(base, {m1, m2}, 0.5, 1.0);
    CHECK(merged.tensors.at("w").data == std::vector<float>{0.0f, 2.0f, 0.0f, 3.0f});
}

TEST_CASE("ties_merge: parameter errors") {
    Checkpoint c = scalar_ckpt(1.0f);
    CHECK_THROWS_AS(ties_merge(c, {c}, 0.0, 1.0), Error);
    CHECK_THROWS_AS(ties_merge(c, {c}, 1.5, 1.0), Error);
    CHECK_THROWS_AS(ties_merge(c, {c}, 0.5, 0.0), Error);
    CHECK_THROWS_AS(ties_merge(c, {vector_ckpt({1.0f, 2.0f})}, 0.5, 1.0), Error);
}

TEST_CASE("ties_merge matches the brute-force oracle on small instances") {
    SplitMix64 rng(4242);
    for (int trial = 0; trial < 1000; ++trial) {
        size_t len = 1 + rng.bounded(8);
        size_t n = 1 + rng.bounded(3);
        double density = 0.1 + rng.uniform01() * 0.9;
        double lambda = 0.25 + rng.uniform01() * 1.5;

        auto random_values = [&rng, len]() {
            std::vector<float> v(len);
            for (float& x : v) {
                // mix exact duplicates and zeros in to exercise tie-breaking
                uint64_t pick = rng.bounded(4);
                if (pick == 0) x = 0.0f;
                else if (pick == 1) x = (rng.coin() ? 1.0f : -1.0f) * 0.5f;
                else x = static_cast<float>(rng.uniform01() * 4.0 - 2.0);
            }
            return v;
        };

        std::vector<float> base_values = random_values();
        Checkpoint base = vector_ckpt(base_values);
        std::vector<std::vector<float>> model_values;
        std::vector<Checkpoint> inputs;
        for (size_t k = 0; k < n; ++k) {
            model_values.push_back(random_values());
            inputs.push_back(vector_ckpt(model_values.back()));
        }

        Checkpoint merged = ties_merge(base, inputs, density, lambda);
        std::vector<float> expected = ties_oracle(base_values, model_values, density, lambda);
        REQUIRE(merged.tensors.at("w").data == expected);
    }
}

TEST_CASE("permutation invariance of all three methods") {
    SplitMix64 rng(53);
    Schema schema = {{"a", {4}}, {"b", {2, 2}}};
    std::vector<Checkpoint> inputs = {random_ckpt(rng, schema), random_ckpt(rng, schema),
                                      random_ckpt(rng, schema)};
    std::vector<Checkpoint> fishers = {random_ckpt(rng, schema, 0.0f, 2.0f),
                                       random_ckpt(rng, schema, 0.0f, 2.0f),
                                       random_ckpt(rng, schema, 0.0f, 2.0f)};
    Checkpoint base = random_ckpt(rng, schema);

    std::vector<Checkpoint> permuted = {inputs[2], inputs[0], inputs[1]};
    std::vector<Checkpoint> permuted_fishers = {fishers[2], fishers[0], fishers[1]};

    check_close(wag(inputs), wag(permuted), 1e-6);
    check_close(fisher_merge(inputs, fishers, 1e-8), fisher_merge(permuted, permuted_fishers, 1e-8), 1e-6);
    check_close(ties_merge(base, inputs, 0.5, 1.0), ties_merge(base, permuted, 0.5, 1.0), 1e-6);
}

TEST_CASE("wag linearity under power-of-two scaling") {
    SplitMix64 rng(59);
    Schema schema = {{"w", {6}}};
    std::vector<Checkpoint> inputs = {random_ckpt(rng, schema), random_ckpt(rng, schema)};
    for (float c : {0.5f, 2.0f, 4.0f}) {
        std::vector<Checkpoint> scaled;
        for (const auto& input : inputs) {
            Checkpoint s = input;
            s.tensors.at("w") = scale(s.tensors.at("w"), c);
            scaled.push_back(std::move(s));
        }
        Checkpoint lhs = wag(scaled);
        Checkpoint rhs = wag(inputs);
        rhs.tensors.at("w") = scale(rhs.tensors.at("w"), c);
        CHECK(lhs.tensors == rhs.tensors);
    }
}

TEST_CASE("merge dispatch") {
    MergeRequest request;
    request.inputs = {scalar_ckpt(2.0f), scalar_ckpt(4.0f)};

    request.method = MergeMethod::wag;
    CHECK(merge(request).tensors.at("w").data[0] == 3.0f);

    request.method = MergeMethod::fisher;
    request.fishers = {scalar_ckpt(1.0f), scalar_ckpt(1.0f)};
    CHECK(merge(request).tensors.at("w").data[0] == doctest::Approx(3.0).epsilon(1e-6));

    request.method = MergeMethod::ties;
    CHECK_THROWS_AS(merge(request), Error);  // no base
    request.base = scalar_ckpt(0.0f);
    request.density = 1.0;
    CHECK(merge(request).tensors.at("w").data[0] == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("output schema always equals input schema") {
    SplitMix64 rng(61);
    Schema schema = {{"emb", {3, 2}}, {"w", {4}}};
    std::vector<Checkpoint> inputs = {random_ckpt(rng, schema), random_ckpt(rng, schema)};
    CHECK(schema_of(wag(inputs)) == schema);
    CHECK(schema_of(ties_merge(random_ckpt(rng, schema), inputs, 0.3, 1.0)) == schema);
}
