#include "mrg/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mrg {

namespace {

std::vector<const Checkpoint*> pointers(const std::vector<Checkpoint>& ckpts) {
    std::vector<const Checkpoint*> ptrs;
    ptrs.reserve(ckpts.size());
    for (const auto& c : ckpts) ptrs.push_back(&c);
    return ptrs;
}

void record_provenance(Checkpoint& out, MergeMethod method, const std::vector<Checkpoint>& inputs) {
    out.meta["merge.method"] = merge_method_name(method);
    out.meta["merge.n_inputs"] = std::to_string(inputs.size());
    for (size_t k = 0; k < inputs.size(); ++k)
        out.meta["merge.input." + std::to_string(k)] = tensor_fingerprint(inputs[k]);
}

} // namespace

MergeMethod parse_merge_method(const std::string& name) {
    if (name == "wag") return MergeMethod::wag;
    if (name == "fisher") return MergeMethod::fisher;
    if (name == "ties") return MergeMethod::ties;
    fail(ErrorCode::usage, "unknown merge method '" + name + "' (expected wag|fisher|ties)");
}

std::string merge_method_name(MergeMethod method) {
    switch (method) {
        case MergeMethod::wag: return "wag";
        case MergeMethod::fisher: return "fisher";
        case MergeMethod::ties: return "ties";
    }
    return "?";
}

Checkpoint wag(const std::vector<Checkpoint>& inputs) {
    validate_compatible(pointers(inputs));
    const double inv_n = 1.0 / static_cast<double>(inputs.size());

    Checkpoint out;
    for (const auto& [name, first] : inputs[0].tensors) {
        Tensor result = Tensor::zeros(first.shape);
        for (size_t j = 0; j < result.numel(); ++j) {
            double acc = 0.0;
            for (const auto& input : inputs) acc += input.tensors.at(name).data[j];
            result.data[j] = static_cast<float>(acc * inv_n);
        }
        out.tensors.emplace(name, std::move(result));
    }
    record_provenance(out, MergeMethod::wag, inputs);
    return out;
}

Checkpoint fisher_merge(const std::vector<Checkpoint>& inputs,
                        const std::vector<Checkpoint>& fishers,
                        double epsilon) {
    if (fishers.size() != inputs.size())
        fail(ErrorCode::bad_value, "fisher_merge: got " + std::to_string(fishers.size()) +
                                   " fisher checkpoints for " + std::to_string(inputs.size()) + " inputs");
    if (!(epsilon > 0.0)) fail(ErrorCode::bad_value, "fisher_merge: epsilon must be positive");

    std::vector<const Checkpoint*> all = pointers(inputs);
    for (const auto& f : fishers) all.push_back(&f);
    validate_compatible(all);

    for (size_t k = 0; k < fishers.size(); ++k)
        for (const auto& [name, tensor] : fishers[k].tensors)
            for (float v : tensor.data)
                if (v < 0.0f)
                    fail(ErrorCode::bad_value, "fisher_merge: negative Fisher entry in '" + name +
                                               "' of checkpoint " + std::to_string(k));

    Checkpoint out;
    for (const auto& [name, first] : inputs[0].tensors) {
        Tensor result = Tensor::zeros(first.shape);
        for (size_t j = 0; j < result.numel(); ++j) {
            double num = 0.0, den = 0.0;
            for (size_t k = 0; k < inputs.size(); ++k) {
                double w = static_cast<double>(fishers[k].tensors.at(name).data[j]) + epsilon;
                num += w * static_cast<double>(inputs[k].tensors.at(name).data[j]);
                den += w;
            }
            result.data[j] = static_cast<float>(num / den);
        }
        out.tensors.emplace(name, std::move(result));
    }
    record_provenance(out, MergeMethod::fisher, inputs);
    return out;
}

Checkpoint ties_merge(const Checkpoint& base,
                      const std::vector<Checkpoint>& inputs,
                      double density,
                      double lambda) {
    if (!(density > 0.0 && density <= 1.0))
        fail(ErrorCode::bad_value, "ties_merge: density must be in (0,1], got " + std::to_string(density));
    if (!(lambda > 0.0)) fail(ErrorCode::bad_value, "ties_merge: lambda must be positive");

    std::vector<const Checkpoint*> all = pointers(inputs);
    all.push_back(&base);
    validate_compatible(all);

    const size_t n = inputs.size();
    Checkpoint out;
    for (const auto& [name, base_tensor] : base.tensors) {
        const size_t len = base_tensor.numel();
        const size_t keep = static_cast<size_t>(std::ceil(density * static_cast<double>(len)));

        // TRIM: per model, keep the `keep` largest-magnitude task-vector
        // entries of this tensor; equal magnitudes keep the lower flat index.
        std::vector<std::vector<double>> trimmed(n, std::vector<double>(len, 0.0));
        std::vector<size_t> order(len);
        for (size_t k = 0; k < n; ++k) {
            const Tensor& model_tensor = inputs[k].tensors.at(name);
            std::vector<double> tau(len);
            for (size_t j = 0; j < len; ++j)
                tau[j] = static_cast<double>(model_tensor.data[j]) - static_cast<double>(base_tensor.data[j]);
            std::iota(order.begin(), order.end(), size_t{0});
            std::stable_sort(order.begin(), order.end(), [&tau](size_t a, size_t b) {
                return std::abs(tau[a]) > std::abs(tau[b]);
            });
            for (size_t r = 0; r < keep; ++r) trimmed[k][order[r]] = tau[order[r]];
        }

        // ELECT + DISJOINT MEAN per parameter.
        Tensor result = base_tensor;
        for (size_t j = 0; j < len; ++j) {
            double sum = 0.0;
            bool any_nonzero = false;
            for (size_t k = 0; k < n; ++k) {
                sum += trimmed[k][j];
                any_nonzero = any_nonzero || trimmed[k][j] != 0.0;
            }
            if (!any_nonzero) continue;  // parameter untouched
            const double sign = (sum >= 0.0) ? 1.0 : -1.0;
            double acc = 0.0;
            size_t count = 0;
            for (size_t k = 0; k < n; ++k) {
                double v = trimmed[k][j];
                if (v != 0.0 && v * sign > 0.0) {
                    acc += v;
                    ++count;
                }
            }
            if (count == 0) continue;  // trimmed mass exists but none matches the elected sign
            result.data[j] = static_cast<float>(
                static_cast<double>(base_tensor.data[j]) + lambda * (acc / static_cast<double>(count)));
        }
        if (!result.all_finite())
            fail(ErrorCode::non_finite, "ties_merge: non-finite result in '" + name + "'");
        out.tensors.emplace(name, std::move(result));
    }
    record_provenance(out, MergeMethod::ties, inputs);
    out.meta["merge.base"] = tensor_fingerprint(base);
    out.meta["merge.density"] = std::to_string(density);
    out.meta["merge.lambda"] = std::to_string(lambda);
    return out;
}

Checkpoint merge(const MergeRequest& request) {
    switch (request.method) {
        case MergeMethod::wag:
            return wag(request.inputs);
        case MergeMethod::fisher:
            return fisher_merge(request.inputs, request.fishers, request.epsilon);
        case MergeMethod::ties:
            if (!request.base) fail(ErrorCode::bad_value, "ties merge requires a base checkpoint");
            return ties_merge(*request.base, request.inputs, request.density, request.lambda);
    }
    fail(ErrorCode::usage, "unknown merge method");
}

} // namespace mrg
