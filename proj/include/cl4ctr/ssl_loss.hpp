#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cl4ctr/data.hpp"
#include "cl4ctr/graph.hpp"

namespace cl4ctr {

// Distinct feature indices per field for one batch. The alignment and
// uniformity penalties run over these rows rather than the full table, so
// their cost tracks the batch, not the vocabulary.
struct BatchFieldIndex {
    std::vector<std::vector<std::uint32_t>> per_field;  // sorted, deduplicated

    static BatchFieldIndex from_batch(const EncodedDataset& data,
                                      std::span<const std::size_t> batch,
                                      const FieldPartition& partition);

    // Exact mode: every feature of every field. Refused above 20000 features
    // because the uniformity penalty is quadratic in the row count.
    static BatchFieldIndex full_vocabulary(const FieldPartition& partition);

    std::size_t field_count() const { return per_field.size(); }
    std::size_t total_rows() const;
    // Ordered same-field pair count, summed over fields: sum n_f * (n_f - 1).
    std::size_t alignment_pairs() const;
    // Ordered cross-field pair count: (sum n_f)^2 - sum n_f^2.
    std::size_t uniformity_pairs() const;
};

// Mean squared distance between the two projected views, (1/B) * sum_i
// ||h1_i - h2_i||^2 for {B, D} inputs.
NodeId contrastive_loss(ComputeGraph& g, NodeId view1, NodeId view2);

// Sum over fields of the ordered-pair squared distances between that
// field's embeddings, computed in closed form as 2n * sum ||e||^2 -
// 2 * ||sum e||^2 per field. normalize divides by the ordered pair count.
NodeId feature_alignment(ComputeGraph& g, NodeId table, const BatchFieldIndex& index,
                         bool normalize = true);

// Sum of cosine similarities over ordered cross-field pairs, computed from
// per-field sums of unit rows as ||S||^2 - sum_f ||S_f||^2. Zero-norm
// embeddings contribute nothing. normalize divides by the pair count.
NodeId field_uniformity(ComputeGraph& g, NodeId table, const BatchFieldIndex& index,
                        bool normalize = true);

// total = ctr + alpha * cl + beta * (align + uniform), as graph nodes.
NodeId combine_losses(ComputeGraph& g, NodeId ctr, NodeId cl, NodeId align, NodeId uniform,
                      double alpha, double beta);

struct LossBundle {
    double ctr = 0.0;
    double cl = 0.0;
    double align = 0.0;
    double uniform = 0.0;
    double total = 0.0;
};

LossBundle total_loss(double ctr, double cl, double align, double uniform,
                      double alpha, double beta);

}  // namespace cl4ctr
