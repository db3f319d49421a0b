#include "cl4ctr/ssl_loss.hpp"

#include <algorithm>
#include <stdexcept>

namespace cl4ctr {

namespace {

constexpr std::size_t kFullVocabularyLimit = 20000;

void check_table(const ComputeGraph& g, NodeId table) {
    if (g.shape_of(table).size() != 2) {
        throw std::invalid_argument("embedding table node must be 2-D");
    }
}

}  // namespace

BatchFieldIndex BatchFieldIndex::from_batch(const EncodedDataset& data,
                                            std::span<const std::size_t> batch,
                                            const FieldPartition& partition) {
    if (data.field_count != partition.field_count()) {
        throw std::invalid_argument("dataset and partition disagree on field count");
    }
    BatchFieldIndex index;
    index.per_field.resize(partition.field_count());
    for (std::size_t i : batch) {
        auto row = data.instance(i);
        for (std::size_t f = 0; f < row.size(); ++f) {
            const FieldRange range = partition.range(f);
            if (row[f] < range.begin || row[f] >= range.end) {
                throw std::invalid_argument("feature index outside its field range");
            }
            index.per_field[f].push_back(row[f]);
        }
    }
    for (auto& rows : index.per_field) {
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    }
    return index;
}

BatchFieldIndex BatchFieldIndex::full_vocabulary(const FieldPartition& partition) {
    if (partition.total() > kFullVocabularyLimit) {
        throw std::invalid_argument("full-vocabulary mode is limited to 20000 features");
    }
    BatchFieldIndex index;
    index.per_field.resize(partition.field_count());
    for (std::size_t f = 0; f < partition.field_count(); ++f) {
        const FieldRange range = partition.range(f);
        index.per_field[f].reserve(range.size());
        for (std::uint32_t i = range.begin; i < range.end; ++i) {
            index.per_field[f].push_back(i);
        }
    }
    return index;
}

std::size_t BatchFieldIndex::total_rows() const {
    std::size_t total = 0;
    for (const auto& rows : per_field) total += rows.size();
    return total;
}

std::size_t BatchFieldIndex::alignment_pairs() const {
    std::size_t total = 0;
    for (const auto& rows : per_field) total += rows.size() * (rows.size() - 1);
    return total;
}

std::size_t BatchFieldIndex::uniformity_pairs() const {
    const std::size_t n = total_rows();
    std::size_t same = 0;
    for (const auto& rows : per_field) same += rows.size() * rows.size();
    return n * n - same;
}

NodeId contrastive_loss(ComputeGraph& g, NodeId view1, NodeId view2) {
    // Copied, not referenced: adding nodes below may reallocate node storage.
    const Shape s1 = g.shape_of(view1);
    if (s1.size() != 2 || s1 != g.shape_of(view2)) {
        throw std::invalid_argument("contrastive loss expects two {batch, dim} inputs");
    }
    NodeId sq = g.square(g.sub(view1, view2));
    return g.scale(g.sum_all(sq), 1.0 / static_cast<double>(s1[0]));
}

NodeId feature_alignment(ComputeGraph& g, NodeId table, const BatchFieldIndex& index,
                         bool normalize) {
    check_table(g, table);
    const std::size_t pairs = index.alignment_pairs();
    if (pairs == 0) {
        // Every field has at most one distinct feature in the batch.
        return g.constant(Tensor::scalar(0.0));
    }

    NodeId total = 0;
    bool first = true;
    for (const auto& rows : index.per_field) {
        const std::size_t n = rows.size();
        if (n < 2) continue;
        NodeId rows_node = g.gather(table, rows);
        // sum_{i != j} ||e_i - e_j||^2 = 2n * sum ||e||^2 - 2 * ||sum e||^2
        NodeId sum_sq = g.sum_all(g.square(rows_node));
        NodeId sq_sum = g.sum_all(g.square(g.sum_axis(rows_node, 0)));
        NodeId field_term = g.sub(g.scale(sum_sq, 2.0 * static_cast<double>(n)),
                                  g.scale(sq_sum, 2.0));
        total = first ? field_term : g.add(total, field_term);
        first = false;
    }
    if (normalize) {
        total = g.scale(total, 1.0 / static_cast<double>(pairs));
    }
    return total;
}

NodeId field_uniformity(ComputeGraph& g, NodeId table, const BatchFieldIndex& index,
                        bool normalize) {
    check_table(g, table);
    if (index.field_count() < 2) {
        throw std::invalid_argument("uniformity needs at least two fields");
    }
    const std::size_t pairs = index.uniformity_pairs();
    if (pairs == 0) {
        return g.constant(Tensor::scalar(0.0));
    }

    // With u_i the unit rows (zero rows stay zero), the ordered cross-field
    // cosine sum is ||sum_all u||^2 - sum_f ||sum_field u||^2.
    std::vector<NodeId> field_sums;
    field_sums.reserve(index.field_count());
    for (const auto& rows : index.per_field) {
        if (rows.empty()) continue;
        NodeId unit = g.l2_normalize_rows(g.gather(table, rows));
        field_sums.push_back(g.sum_axis(unit, 0));
    }

    NodeId grand = field_sums[0];
    for (std::size_t f = 1; f < field_sums.size(); ++f) {
        grand = g.add(grand, field_sums[f]);
    }
    NodeId total = g.sum_all(g.square(grand));
    for (NodeId s : field_sums) {
        total = g.sub(total, g.sum_all(g.square(s)));
    }
    if (normalize) {
        total = g.scale(total, 1.0 / static_cast<double>(pairs));
    }
    return total;
}

NodeId combine_losses(ComputeGraph& g, NodeId ctr, NodeId cl, NodeId align, NodeId uniform,
                      double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0) {
        throw std::invalid_argument("loss weights must be non-negative");
    }
    NodeId total = g.add(ctr, g.scale(cl, alpha));
    return g.add(total, g.scale(g.add(align, uniform), beta));
}

LossBundle total_loss(double ctr, double cl, double align, double uniform,
                      double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0) {
        throw std::invalid_argument("loss weights must be non-negative");
    }
    LossBundle b;
    b.ctr = ctr;
    b.cl = cl;
    b.align = align;
    b.uniform = uniform;
    b.total = ctr + alpha * cl + beta * (align + uniform);
    return b;
}

}  // namespace cl4ctr
