#include "cl4ctr/augment.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace cl4ctr {

MaskMethod mask_method_from_string(const std::string& name) {
    if (name == "random") return MaskMethod::kRandom;
    if (name == "feature") return MaskMethod::kFeature;
    if (name == "dimension") return MaskMethod::kDimension;
    throw std::invalid_argument("unknown mask method '" + name +
                                "' (expected random, feature, or dimension)");
}

std::string to_string(MaskMethod method) {
    switch (method) {
        case MaskMethod::kRandom: return "random";
        case MaskMethod::kFeature: return "feature";
        case MaskMethod::kDimension: return "dimension";
    }
    return "?";
}

void MaskSpec::validate() const {
    if (proportion < 0.0 || proportion > 1.0) {
        throw std::invalid_argument("mask proportion must lie in [0, 1]");
    }
}

Tensor sample_instance_mask(const MaskSpec& spec, std::size_t fields, std::size_t dim,
                            RngStream& rng) {
    spec.validate();
    if (fields == 0 || dim == 0) {
        throw std::invalid_argument("mask: fields and dim must be positive");
    }
    Tensor mask = Tensor::full({fields, dim}, 1.0);
    switch (spec.method) {
        case MaskMethod::kRandom: {
            for (std::size_t i = 0; i < mask.size(); ++i) {
                if (rng.bernoulli(spec.proportion)) mask[i] = 0.0;
            }
            break;
        }
        case MaskMethod::kFeature: {
            // The nudge keeps exact products like 0.3 * 10 from flooring to
            // one row short.
            std::size_t count = static_cast<std::size_t>(
                std::floor(spec.proportion * static_cast<double>(fields) + 1e-9));
            std::vector<std::size_t> order(fields);
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = 0; i < count; ++i) {
                std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(fields - i));
                std::swap(order[i], order[j]);
                for (std::size_t d = 0; d < dim; ++d) mask[order[i] * dim + d] = 0.0;
            }
            break;
        }
        case MaskMethod::kDimension: {
            for (std::size_t d = 0; d < dim; ++d) {
                if (rng.bernoulli(spec.proportion)) {
                    for (std::size_t f = 0; f < fields; ++f) mask[f * dim + d] = 0.0;
                }
            }
            break;
        }
    }
    return mask;
}

RngStream mask_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t instance_index,
                      int view) {
    if (view != 1 && view != 2) throw std::invalid_argument("mask_stream: view must be 1 or 2");
    const char* label = view == 1 ? "mask-view1" : "mask-view2";
    return derive_stream(seed, label, epoch, instance_index);
}

ViewPair make_views(ComputeGraph& g, NodeId embeddings, const MaskSpec& spec,
                    std::uint64_t seed, std::uint64_t epoch,
                    std::span<const std::size_t> instance_ids) {
    spec.validate();
    const Shape& es = g.shape_of(embeddings);
    if (es.size() != 3) {
        throw std::invalid_argument("make_views: embeddings must be {B, F, D}");
    }
    if (es[0] != instance_ids.size()) {
        throw std::invalid_argument("make_views: instance id list does not match batch size");
    }
    std::size_t F = es[1], D = es[2];

    ViewPair out{};
    NodeId* slots[2] = {&out.view1, &out.view2};
    for (int view = 1; view <= 2; ++view) {
        Tensor batch_mask({instance_ids.size(), F, D});
        for (std::size_t b = 0; b < instance_ids.size(); ++b) {
            RngStream rng = mask_stream(seed, epoch, instance_ids[b], view);
            Tensor m = sample_instance_mask(spec, F, D, rng);
            std::copy(m.data(), m.data() + m.size(), batch_mask.data() + b * F * D);
        }
        *slots[view - 1] = g.mask_mul(embeddings, g.constant(std::move(batch_mask)));
    }
    return out;
}

}  // namespace cl4ctr
