#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cl4ctr {

// Ordered field names plus the label column of a tabular source.
struct Schema {
    std::vector<std::string> fields;
    std::string label;

    // Throws std::invalid_argument unless there are >= 2 uniquely named
    // fields and the label column is not one of them.
    void validate() const;
};

// Half-open [begin, end) slice of the global feature index space.
struct FieldRange {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::uint32_t size() const { return end - begin; }
    bool operator==(const FieldRange&) const = default;
};

// Contiguous per-field partition of [0, M). Every global feature index
// belongs to exactly one field.
class FieldPartition {
public:
    FieldPartition() = default;
    explicit FieldPartition(const std::vector<std::uint32_t>& field_sizes);

    std::size_t field_count() const { return ranges_.size(); }
    std::uint32_t total() const { return ranges_.empty() ? 0 : ranges_.back().end; }
    const FieldRange& range(std::size_t f) const { return ranges_.at(f); }
    std::size_t field_of(std::uint32_t global_index) const;

    bool operator==(const FieldPartition&) const = default;

private:
    std::vector<FieldRange> ranges_;
};

// Rows of a delimited source in schema field order, labels split out.
struct RawDataset {
    Schema schema;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return rows.size(); }
};

// Reads delimited text (UTF-8) with a header row. Every non-label column
// becomes a categorical field, in header order. delimiter 0 auto-detects
// tab vs comma from the header line.
RawDataset read_delimited(const std::string& path, const std::string& label_column,
                          char delimiter = 0);

// Per-field token->index assignment over a contiguous global index space.
// Within a field, in-vocabulary tokens are numbered lexicographically and
// the field's reserved out-of-vocabulary slot sits at the end of its range.
class Vocabulary {
public:
    // Tokens seen fewer than min_count times collapse into the field's OOV
    // slot; their occurrences are credited to its count.
    static Vocabulary build(const RawDataset& data, std::uint64_t min_count = 1);

    std::size_t field_count() const { return fields_.size(); }
    std::uint32_t total_features() const { return partition_.total(); }
    const FieldPartition& partition() const { return partition_; }
    const Schema& schema() const { return schema_; }

    std::uint32_t oov_index(std::size_t f) const { return partition_.range(f).end - 1; }
    std::uint32_t encode_token(std::size_t f, const std::string& token) const;
    std::vector<std::uint32_t> encode_row(const std::vector<std::string>& row) const;

    // Token text for a global index; OOV slots decode to "<oov>".
    const std::string& token_at(std::uint32_t global_index) const;
    std::vector<std::string> decode(std::span<const std::uint32_t> instance) const;

    // Occurrence count per global index, as seen by build().
    const std::vector<std::uint64_t>& counts() const { return counts_; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    struct Field {
        std::map<std::string, std::uint32_t> token_to_local;  // in-vocabulary only
        std::vector<std::string> tokens;                      // local index -> token
    };

    Schema schema_;
    std::vector<Field> fields_;
    FieldPartition partition_;
    std::vector<std::uint64_t> counts_;
};

// Fixed-width encoded instances: F global indices plus a binary label each.
struct EncodedDataset {
    std::uint32_t field_count = 0;
    std::vector<std::uint32_t> features;  // size() * field_count, row-major
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const std::uint32_t> instance(std::size_t i) const {
        return {features.data() + i * field_count, field_count};
    }
    void append(std::span<const std::uint32_t> feats, std::uint8_t label);
};

EncodedDataset encode_dataset(const RawDataset& raw, const Vocabulary& vocab);

struct SplitResult {
    EncodedDataset train;
    EncodedDataset valid;
    EncodedDataset test;
};

// Random disjoint partition by the given fractions (must sum to 1 within
// 1e-9). Deterministic per seed. Requires at least 3 instances.
SplitResult split(const EncodedDataset& data, double train_frac, double valid_frac,
                  double test_frac, std::uint64_t seed);

// Cumulative distribution of feature frequencies: for each distinct
// occurrence count, the fraction of features seen at most that often.
// Zero-count slots (unused OOV reserves) are not part of the corpus and
// are excluded.
struct FrequencyCDF {
    std::vector<std::pair<std::uint64_t, double>> points;
};

FrequencyCDF frequency_cdf(const std::vector<std::uint64_t>& counts);
void write_cdf_csv(std::ostream& out, const FrequencyCDF& cdf);

// Synthetic long-tail generator. Feature draws per field follow Zipf with
// the given exponent (0 = uniform); the label is a coin flip on the
// sigmoid of a fixed hidden pairwise-interaction score plus noise.
struct SynthConfig {
    std::uint32_t fields = 6;
    std::uint32_t features_per_field = 500;
    double zipf_exponent = 1.2;
    std::uint64_t instances = 200000;
    std::uint64_t weight_seed = 1;   // hidden interaction weights
    std::uint64_t sample_seed = 1;   // feature draws and label noise
    double signal_strength = 2.0;    // scale of the pairwise score
    double noise = 0.5;              // stddev of additive logit noise
    std::uint32_t hidden_rank = 4;   // rank of the hidden per-feature factors
    double mean_shift = 0.0;         // shared factor offset; > 0 correlates features
                                     // across fields the way popularity does in logs
};

struct SynthResult {
    EncodedDataset data;
    FieldPartition partition;
};

SynthResult synth_generate(const SynthConfig& config);

// Binary dataset file: magic "CL4D", version, F, N, then N records of
// F u32 indices and a u8 label, little-endian.
void save_dataset(const std::string& path, const EncodedDataset& data);
EncodedDataset load_dataset(const std::string& path);

}  // namespace cl4ctr
