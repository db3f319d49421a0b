#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "cl4ctr/data.hpp"
#include "cl4ctr/graph.hpp"
#include "cl4ctr/tensor.hpp"

namespace cl4ctr {

// The full feature-representation matrix, one row per global feature index,
// partitioned by field.
struct EmbeddingTable {
    Tensor weights;  // M x D
    FieldPartition partition;

    std::uint32_t feature_count() const { return partition.total(); }
    std::uint32_t dim() const {
        return weights.rank() == 2 ? static_cast<std::uint32_t>(weights.dim(1)) : 0;
    }
};

// schemes: "normal" draws entries from normal(0, 0.01); "xavier" and "he"
// scale the draw to 1/sqrt(dim) and sqrt(2/dim); "zeros" is all zero.
EmbeddingTable init_table(const FieldPartition& partition, std::uint32_t dim,
                          const std::string& scheme, std::uint64_t seed);

// Throws std::invalid_argument unless instance[f] lies in field f's range.
void validate_instance(const FieldPartition& partition, std::span<const std::uint32_t> instance);

// Per-instance embedding matrix E as a graph node of shape F x D. Gradients
// scatter-add back into the table node's rows.
NodeId lookup_instance(ComputeGraph& g, NodeId table_node, const FieldPartition& partition,
                       std::span<const std::uint32_t> instance);

// Batched lookup producing shape B x F x D for the selected dataset rows.
NodeId lookup_batch(ComputeGraph& g, NodeId table_node, const FieldPartition& partition,
                    const EncodedDataset& data, std::span<const std::size_t> batch);

// Checkpoint file: magic "CL4E", version, M, F, D, field ranges, then the
// M x D weights as little-endian 64-bit floats.
void save_table(const std::string& path, const EmbeddingTable& table);
EmbeddingTable load_table(const std::string& path);

}  // namespace cl4ctr
