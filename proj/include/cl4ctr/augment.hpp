#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "cl4ctr/graph.hpp"
#include "cl4ctr/rng.hpp"
#include "cl4ctr/tensor.hpp"

namespace cl4ctr {

enum class MaskMethod { kRandom, kFeature, kDimension };

MaskMethod mask_method_from_string(const std::string& name);
std::string to_string(MaskMethod method);

// How an instance's embedding matrix gets perturbed into a view. The
// proportion is the fraction MASKED (zeroed): 0 leaves the matrix alone,
// 1 blanks it entirely.
struct MaskSpec {
    MaskMethod method = MaskMethod::kRandom;
    double proportion = 0.4;

    void validate() const;
};

// 0/1 keep-mask of shape {fields, dim} for one instance; 1 passes through.
//   random:    each entry zeroed independently with probability p
//   feature:   exactly floor(p * fields) uniformly chosen rows zeroed
//   dimension: one Bernoulli(p) column vector shared by all rows
Tensor sample_instance_mask(const MaskSpec& spec, std::size_t fields, std::size_t dim,
                            RngStream& rng);

// Per-instance RNG stream for a view's mask, derived from the run seed,
// epoch, dataset-global instance index, and view number (1 or 2).
RngStream mask_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t instance_index,
                      int view);

struct ViewPair {
    NodeId view1;
    NodeId view2;
};

// Two independently masked views of a {B, F, D} embedding node, both using
// the same method and proportion. Masked entries stay exactly zero and pass
// no gradient; unmasked entries pass through bit-identically.
ViewPair make_views(ComputeGraph& g, NodeId embeddings, const MaskSpec& spec,
                    std::uint64_t seed, std::uint64_t epoch,
                    std::span<const std::size_t> instance_ids);

}  // namespace cl4ctr
