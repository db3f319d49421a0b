#include "cl4ctr/embedding.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

#include "cl4ctr/rng.hpp"
#include "io_util.hpp"

namespace cl4ctr {

using ioutil::read_f64;
using ioutil::read_u32;
using ioutil::write_f64;
using ioutil::write_u32;

EmbeddingTable init_table(const FieldPartition& partition, std::uint32_t dim,
                          const std::string& scheme, std::uint64_t seed) {
    if (partition.field_count() == 0 || dim == 0) {
        throw std::invalid_argument("init_table: empty partition or zero dimension");
    }
    EmbeddingTable table;
    table.partition = partition;
    table.weights = Tensor({partition.total(), dim});
    if (scheme == "normal") {
        RngStream rng = derive_stream(seed, "embedding-init");
        for (std::size_t i = 0; i < table.weights.size(); ++i) {
            table.weights[i] = rng.normal(0.0, 0.01);
        }
    } else if (scheme == "xavier" || scheme == "he") {
        // Row scales near 1: keeps cosine gradients tame from the first
        // step, where 0.01-scale rows make them explode.
        RngStream rng = derive_stream(seed, "embedding-init");
        const double var = (scheme == "he" ? 2.0 : 1.0) / static_cast<double>(dim);
        const double stddev = std::sqrt(var);
        for (std::size_t i = 0; i < table.weights.size(); ++i) {
            table.weights[i] = rng.normal(0.0, stddev);
        }
    } else if (scheme != "zeros") {
        throw std::invalid_argument("init_table: unknown scheme '" + scheme + "'");
    }
    return table;
}

void validate_instance(const FieldPartition& partition,
                       std::span<const std::uint32_t> instance) {
    if (instance.size() != partition.field_count()) {
        throw std::invalid_argument("lookup: instance has " + std::to_string(instance.size()) +
                                    " fields, want " +
                                    std::to_string(partition.field_count()));
    }
    for (std::size_t f = 0; f < instance.size(); ++f) {
        const FieldRange& r = partition.range(f);
        if (instance[f] < r.begin || instance[f] >= r.end) {
            throw std::invalid_argument("lookup: index " + std::to_string(instance[f]) +
                                        " outside field " + std::to_string(f) + " range [" +
                                        std::to_string(r.begin) + ", " +
                                        std::to_string(r.end) + ")");
        }
    }
}

NodeId lookup_instance(ComputeGraph& g, NodeId table_node, const FieldPartition& partition,
                       std::span<const std::uint32_t> instance) {
    validate_instance(partition, instance);
    return g.gather(table_node, {instance.begin(), instance.end()});
}

NodeId lookup_batch(ComputeGraph& g, NodeId table_node, const FieldPartition& partition,
                    const EncodedDataset& data, std::span<const std::size_t> batch) {
    if (batch.empty()) throw std::invalid_argument("lookup_batch: empty batch");
    std::size_t F = partition.field_count();
    if (data.field_count != F) {
        throw std::invalid_argument("lookup_batch: dataset width does not match partition");
    }
    std::vector<std::uint32_t> rows;
    rows.reserve(batch.size() * F);
    for (std::size_t i : batch) {
        auto inst = data.instance(i);
        validate_instance(partition, inst);
        rows.insert(rows.end(), inst.begin(), inst.end());
    }
    std::size_t D = g.shape_of(table_node)[1];
    NodeId flat = g.gather(table_node, std::move(rows));
    return g.reshape(flat, {batch.size(), F, D});
}

void save_table(const std::string& path, const EmbeddingTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write("CL4E", 4);
    write_u32(out, 1);
    write_u32(out, table.feature_count());
    write_u32(out, static_cast<std::uint32_t>(table.partition.field_count()));
    write_u32(out, table.dim());
    for (std::size_t f = 0; f < table.partition.field_count(); ++f) {
        write_u32(out, table.partition.range(f).begin);
        write_u32(out, table.partition.range(f).end);
    }
    for (std::size_t i = 0; i < table.weights.size(); ++i) write_f64(out, table.weights[i]);
    if (!out) throw std::runtime_error(path + ": write failed");
}

EmbeddingTable load_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "CL4E") {
        throw std::runtime_error(path + ": not an embedding checkpoint");
    }
    std::uint32_t version = read_u32(in, path);
    if (version != 1) {
        throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    }
    std::uint32_t M = read_u32(in, path);
    std::uint32_t F = read_u32(in, path);
    std::uint32_t D = read_u32(in, path);
    if (F == 0 || D == 0) throw std::runtime_error(path + ": corrupt header");

    std::vector<std::uint32_t> sizes;
    std::uint32_t expect_begin = 0;
    for (std::uint32_t f = 0; f < F; ++f) {
        std::uint32_t begin = read_u32(in, path);
        std::uint32_t end = read_u32(in, path);
        if (begin != expect_begin || end <= begin) {
            throw std::runtime_error(path + ": field ranges do not partition the index space");
        }
        sizes.push_back(end - begin);
        expect_begin = end;
    }
    if (expect_begin != M) {
        throw std::runtime_error(path + ": field ranges do not cover all features");
    }

    EmbeddingTable table;
    table.partition = FieldPartition(sizes);
    table.weights = Tensor({M, D});
    for (std::size_t i = 0; i < table.weights.size(); ++i) {
        table.weights[i] = read_f64(in, path);
    }
    return table;
}

}  // namespace cl4ctr
